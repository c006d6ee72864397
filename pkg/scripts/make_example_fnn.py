#!/usr/bin/env python3
"""Write a random in-class block-sparse FNN for trying out the compile command."""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.core.fnn import random_fnn  # noqa: E402
from src.utils import serialization  # noqa: E402


def make_fnn(out, D, M, seed):
    f = random_fnn(np.random.default_rng(seed), D, M, bound_bs=1.0, bound_fin=1.0)
    serialization.save(f, out)
    print(f"✓ Wrote D={D}, M={M} FNN with depths {f.depths} to {out}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/models/example_fnn.json")
    parser.add_argument("--dim", type=int, default=4)
    parser.add_argument("--blocks", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    make_fnn(Path(args.out), args.dim, args.blocks, args.seed)
