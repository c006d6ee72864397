import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.approximators import (
    CONTRACT_SAMPLE_POINTS,
    RidgeSpec,
    TaylorOracle,
    barron_cnn,
    barron_fnn,
    evaluation_grid,
    fit_barron_ridges,
    hat_exact,
    hat_network,
    holder_cnn,
    holder_fnn,
    holder_params,
    lattice,
    lattice_resolution,
    mult_network,
    q_network,
    ridge_sum,
    taylor_exact,
)
from src.core.cnn import cnn_eval_batch
from src.core.fnn import fnn_eval_batch, validate_fnn
from src.utils.errors import DomainError
from src.utils.function_library import LIBRARY, get_function


def unit_grid(points, D=2):
    axis = np.linspace(0.0, 1.0, points)
    return np.array(np.meshgrid(*([axis] * D), indexing="ij")).reshape(D, -1).T


@pytest.mark.parametrize("m", [4, 8, 12])
def test_mult_network_accuracy(m):
    grid = unit_grid(200)
    out = mult_network(m).forward_batch(grid)[:, 0]
    assert np.max(np.abs(out - grid[:, 0] * grid[:, 1])) <= 2.0 ** -m
    assert np.all((out >= 0) & (out <= 1))


@pytest.mark.parametrize("m", [1, 5, 10])
def test_mult_network_structure(m):
    block = mult_network(m)
    assert block.depth <= m + 4
    assert max(block.widths) <= 6
    assert block.sup_norm() <= 1.0
    with pytest.raises(DomainError):
        mult_network(0)


@pytest.mark.parametrize("M, D, expected", [(9, 2, 2), (30, 2, 4), (8, 3, 1), (27, 3, 2), (16, 1, 15)])
def test_lattice_resolution(M, D, expected):
    assert lattice_resolution(M, D) == expected


def test_lattice_points():
    points = lattice(2, 2)
    assert points.shape == (9, 2)
    assert_allclose(points[0], [0.0, 0.0])
    assert_allclose(points[-1], [1.0, 1.0])
    with pytest.raises(DomainError):
        lattice(0, 2)


@pytest.mark.parametrize("D", [1, 2, 3])
@pytest.mark.parametrize("M_prime", [1, 2, 4])
def test_hats_form_partition_of_unity(M_prime, D):
    x = np.random.default_rng(M_prime * D).uniform(0, 1, (1000, D))
    total = sum(hat_exact(a, M_prime, x) for a in lattice(M_prime, D))
    assert_allclose(M_prime ** D * total, 1.0, rtol=1e-12)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_hat_network_matches_tensor_hat(D):
    M_prime, m = 3, 10
    a = lattice(M_prime, D)[1]
    x = np.random.default_rng(D).uniform(0, 1, (300, D))
    out = hat_network(a, M_prime, m, D).forward_batch(x)[:, 0]
    assert np.max(np.abs(out - hat_exact(a, M_prime, x))) <= D * 2.0 ** -m
    assert hat_network(a, M_prime, m, D).sup_norm() <= 1.0


@pytest.mark.parametrize("D, M", [(1, 4), (2, 9), (3, 8), (4, 16)])
def test_hat_network_respects_depth_and_width(D, M):
    params = holder_params(TaylorOracle.from_function(get_function("sin_product"), 2.0, D), M, D)
    for a in lattice(params.M_prime, D)[:3]:
        hat = hat_network(a, params.M_prime, params.m, D)
        assert hat.depth <= 2 + params.L_star
        assert max(hat.widths) <= 6 * D


def test_taylor_expansion_examples():
    linear = TaylorOracle.from_function(get_function("first_coordinate"), 2.0, 3)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    assert_allclose(taylor_exact(linear, [0.3, -0.2, 0.5], x), x[:, 0], atol=1e-15)

    target = get_function("sin_product")
    oracle = TaylorOracle.from_function(target, 3.0, 2)
    a = np.array([0.2, -0.4])
    assert oracle.degree == 2
    assert taylor_exact(oracle, a, a[None])[0] == pytest.approx(target(a)[0])
    near = a + 1e-3
    assert abs(taylor_exact(oracle, a, near[None])[0] - target(near)[0]) <= 1e-7


def test_oracle_requires_derivatives():
    with pytest.raises(DomainError):
        TaylorOracle.from_function(get_function("gaussian_bump"), 2.0, 2)


def test_q_network_linear_taylor_is_exact():
    oracle = TaylorOracle.from_function(get_function("first_coordinate"), 2.0, 2).pulled_back()
    B = 2.0 * oracle.holder_norm
    grid = unit_grid(11)
    for a in lattice(2, 2):
        q = q_network(oracle, a, B, 10)
        assert q.sup_norm() <= 1.0
        expected = taylor_exact(oracle, a, grid) / B + 0.5
        assert_allclose(q.forward_batch(grid)[:, 0], expected, atol=1e-12)


def test_q_network_quadratic_taylor():
    oracle = TaylorOracle.from_function(get_function("sin_product"), 3.0, 2).pulled_back()
    B = 2.0 * oracle.holder_norm
    a = np.array([0.5, 0.5])
    x = a + np.random.default_rng(1).uniform(-0.25, 0.25, (100, 2))
    out = q_network(oracle, a, B, 12).forward_batch(x)[:, 0]
    assert np.max(np.abs(out - (taylor_exact(oracle, a, x) / B + 0.5))) <= 10 * 2.0 ** -12


def test_holder_params():
    oracle = TaylorOracle.from_function(get_function("sin_product"), 2.0, 2)
    params = holder_params(oracle, 9, 2)
    assert (params.M_prime, params.m, params.L_star, params.blocks) == (2, 10, 15, 9)
    assert params.B == pytest.approx(2.0 * oracle.holder_norm)
    with pytest.raises(DomainError):
        holder_params(oracle, 3, 2)


def test_holder_block_count_and_class():
    oracle = TaylorOracle.from_function(get_function("sin_product"), 2.0, 2)
    fnn, params = holder_fnn(oracle, 30, 2)
    assert fnn.M == 25 == params.blocks
    report = validate_fnn(fnn)
    assert report.passed, report.violations
    assert fnn.bound_bs == 1.0
    assert fnn.bound_fin == pytest.approx(params.B * 30)


def test_holder_fnn_reproduces_linear_target():
    oracle = TaylorOracle.from_function(get_function("first_coordinate"), 2.0, 2)
    fnn, params = holder_fnn(oracle, 9, 2)
    grid = evaluation_grid(2, 21)
    # Mult and hat errors only: (M'+1)^D blocks, weight B M'^D, 2 * 2^-m each
    tolerance = params.blocks * params.B * params.M_prime ** 2 * 2 * 2.0 ** -params.m
    assert np.max(np.abs(fnn_eval_batch(fnn, grid) - grid[:, 0])) <= tolerance


def test_holder_fnn_within_budget():
    target = get_function("sin_product")
    oracle = TaylorOracle.from_function(target, 2.0, 2)
    fnn, params = holder_fnn(oracle, 9, 2)
    grid = evaluation_grid(2, 41)
    error = np.max(np.abs(fnn_eval_batch(fnn, grid) - target(grid)))
    assert error <= params.error_budget(oracle.holder_norm)


@pytest.mark.slow
@pytest.mark.parametrize("M", [25, 81])
def test_holder_fnn_within_budget_larger(M):
    target = get_function("sin_product")
    oracle = TaylorOracle.from_function(target, 2.0, 2)
    fnn, params = holder_fnn(oracle, M, 2)
    grid = evaluation_grid(2, 41)
    assert np.max(np.abs(fnn_eval_batch(fnn, grid) - target(grid))) <= params.error_budget(oracle.holder_norm)


def test_holder_cnn_matches_fnn():
    oracle = TaylorOracle.from_function(get_function("sin_product"), 2.0, 2)
    fnn, _ = holder_fnn(oracle, 9, 2)
    net, cert = holder_cnn(oracle, 9, 2, 2)
    assert cert.sound
    assert net.M == 9
    x = np.random.default_rng(2).uniform(-1, 1, (100, 2))
    expected = fnn_eval_batch(fnn, x)
    assert np.max(np.abs(cnn_eval_batch(net, x) - expected) / (1 + np.abs(expected))) <= 1e-9


def test_ridge_spec_validation():
    RidgeSpec([[0.5, -0.5]], [1.0], [-1.0])
    with pytest.raises(DomainError):
        RidgeSpec([[0.5, 0.4]], [0.5], [0.0])
    with pytest.raises(DomainError):
        RidgeSpec([[1.0, 0.0]], [1.5], [0.0])
    with pytest.raises(DomainError):
        RidgeSpec([[1.0, 0.0]], [0.5], [1.2])
    with pytest.raises(DomainError):
        RidgeSpec([[1.0, 0.0], [0.0, 1.0]], [0.5], [0.0, 0.0])


def random_ridges(rng, M, D):
    a = rng.standard_normal((M, D))
    a /= np.sum(np.abs(a), axis=1, keepdims=True)
    return RidgeSpec(a, rng.uniform(-1, 1, M), rng.uniform(-1, 1, M))


def test_barron_fnn_realizes_ridge_sum():
    rng = np.random.default_rng(3)
    r = random_ridges(rng, 6, 3)
    f = barron_fnn(r)
    assert f.M == 6 and f.bound_bs == pytest.approx(1 / 6) and f.bound_fin == 1.0
    assert validate_fnn(f).passed
    x = rng.uniform(-1, 1, (100, 3))
    assert_allclose(fnn_eval_batch(f, x), ridge_sum(r, x), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("D, K", [(2, 2), (4, 4), (4, 2)])
def test_barron_cnn_bounds(D, K):
    rng = np.random.default_rng(D * K)
    M = 8
    r = random_ridges(rng, M, D)
    net, cert = barron_cnn(r, K)
    assert cert.claimed_fc == pytest.approx(M)
    assert net.fc_norm() <= M * (1 + 1e-12)
    if K == D:
        assert cert.claimed_conv == pytest.approx(1 / M)
        assert net.conv_norm() <= 1 / M * (1 + 1e-12)
    x = rng.uniform(-1, 1, (100, D))
    expected = ridge_sum(r, x)
    assert np.max(np.abs(cnn_eval_batch(net, x) - expected) / (1 + np.abs(expected))) <= 1e-9


def test_evaluation_grid():
    grid = evaluation_grid(2, 5)
    assert grid.shape == (25, 2)
    assert grid.min() == -1.0 and grid.max() == 1.0
    assert evaluation_grid(3, 5).shape == (CONTRACT_SAMPLE_POINTS, 3)
    assert CONTRACT_SAMPLE_POINTS >= 10 ** 5
    sample = evaluation_grid(3, 5, seed=4, samples=10)
    assert sample.shape == (10, 3)
    # one point per stratum along every axis
    strata = np.floor((sample + 1.0) / 2.0 * 10).astype(int)
    for column in strata.T:
        assert sorted(column) == list(range(10))


def test_fit_barron_ridges_never_worsens_fit():
    target = LIBRARY["gaussian_bump"]
    grid = evaluation_grid(2, 21)
    r = fit_barron_ridges(target, 2, 8, 500, grid, seed=0)
    assert r.M == 8
    values = target(grid)
    residual = values - ridge_sum(r, grid)
    assert np.max(np.abs(residual)) <= np.max(np.abs(values)) + 1e-12
    assert residual @ residual < values @ values
    again = fit_barron_ridges(target, 2, 8, 500, grid, seed=0)
    assert_allclose(again.a, r.a)
    with pytest.raises(DomainError):
        fit_barron_ridges(target, 2, 0, 10, grid)


def test_fit_single_ridge_target():
    grid = evaluation_grid(2, 21)

    def target(x):
        return 0.5 * np.maximum(x @ np.array([0.6, 0.4]) - 0.1, 0.0)

    r = fit_barron_ridges(target, 2, 1, 5000, grid, seed=1)
    assert np.max(np.abs(target(grid) - ridge_sum(r, grid))) <= 0.5 * np.max(np.abs(target(grid)))


def test_fit_zero_target():
    grid = evaluation_grid(2, 11)
    r = fit_barron_ridges(lambda x: np.zeros(x.shape[0]), 2, 4, 100, grid)
    assert_allclose(r.b, 0.0)
    assert_allclose(ridge_sum(r, grid), 0.0)
