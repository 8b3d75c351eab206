"""Simulation kernels: exactness, convergence order, invariants, determinism."""

import numpy as np
import pytest

from gruschin.models import (
    Direction,
    ModelKind,
    ModelSpec,
    as_extended,
    make_constant_identity_model,
    make_extended_demo_model,
    make_power_law_model,
)
from gruschin.paths import (
    TimeGrid,
    simulate_basic,
    simulate_basic_batch,
    simulate_extended,
    simulate_extended_batch,
)
from gruschin.rng import PathStreams, RngStream

V11 = Direction.make(1.0, 1.0)


def draw_increments(seed, indices, n, m, d, dt):
    eps = PathStreams(seed).fill_normals(np.asarray(indices), (n, m + d))
    key = np.sqrt(dt)
    return eps[:, :, :m] * key, eps[:, :, m:] * key


def test_time_grid_validation_and_endpoint():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)
    grid = TimeGrid(0.3, 7)
    assert grid.times()[-1] == 0.3
    assert grid.times()[0] == 0.0
    assert len(grid.times()) == 8


def test_constant_sigma_exact_functionals():
    # constant integrands make the left sums exact: Q_T = T I, no gradient terms
    model = make_constant_identity_model()
    grid = TimeGrid(1.0, 100)
    pf = simulate_basic(model, [0.2], [0.0], V11, grid, RngStream(3, 0))
    assert pf.q_matrix[0, 0] == 1.0
    assert pf.trace_integral[0, 0] == 0.0
    assert pf.weighted_stoch_integral[0] == 0.0
    assert pf.min_eig_q == 1.0

    # sigma = I telescopes the stochastic integral into the increment sum
    dB, dBt = draw_increments(3, [0], 100, 1, 1, grid.dt)
    assert pf.sigma_stoch_integral[0] == dBt[0].sum()
    assert pf.b_final[0] == np.cumsum(dB[0, :, 0])[-1]


def test_x_component_is_exact_brownian():
    model = make_power_law_model(1, 1, 1.0)
    grid = TimeGrid(2.0, 64)
    batch = simulate_basic_batch(model, [0.7], [0.0], V11, grid, 11, np.arange(50))
    assert np.array_equal(batch.x_final, 0.7 + batch.b_final)


def test_matrix_kernel_matches_scalar_kernel():
    scalar_model = make_power_law_model(1, 2, 2.0)
    matrix_model = ModelSpec(
        m=1, d=2, kind=ModelKind.BASIC,
        sigma=scalar_model.sigma, grad_sigma=scalar_model.grad_sigma,
        power_params=scalar_model.power_params, name="power_law_matrix_view",
    )
    assert not matrix_model.scalar_identity
    grid = TimeGrid(1.0, 50)
    a = simulate_basic_batch(scalar_model, [1.0], [0.0, 0.0], V11_d2(), grid, 5,
                             np.arange(40))
    b = simulate_basic_batch(matrix_model, [1.0], [0.0, 0.0], V11_d2(), grid, 5,
                             np.arange(40))
    for name in ("q_matrix", "trace_integral", "weighted_stoch_integral",
                 "sigma_stoch_integral", "y_final", "degeneracy_scalar"):
        lhs, rhs = getattr(a, name), getattr(b, name)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12), name
    assert np.allclose(a.min_eig_q, b.min_eig_q, rtol=1e-9, atol=1e-12)


def V11_d2():
    return Direction.make([1.0], [1.0, 1.0])


def test_step_halving_is_first_order():
    # couple three resolutions through shared fine increments; the covariance
    # integral converges weakly at rate dt, so successive differences halve
    model = make_power_law_model(1, 1, 1.0)
    T, n = 1.0, 25
    P = 20000
    dt_fine = T / (4 * n)
    dB_f, dBt_f = draw_increments(17, np.arange(P), 4 * n, 1, 1, dt_fine)

    def coarsen(arr, factor):
        return arr.reshape(P, -1, factor, arr.shape[-1]).sum(axis=2)

    means = {}
    for factor in (4, 2, 1):
        steps = 4 * n // factor
        inc = (coarsen(dB_f, factor), coarsen(dBt_f, factor))
        batch = simulate_basic_batch(model, [1.0], [0.0], V11, TimeGrid(T, steps),
                                     17, np.arange(P), increments=inc)
        means[steps] = batch.q_matrix[:, 0, 0].mean()
    d1 = means[2 * n] - means[n]
    d2 = means[4 * n] - means[2 * n]
    assert d2 != 0.0
    assert 1.4 < d1 / d2 < 2.8


def test_covariance_matrix_symmetric_psd():
    scalar_model = make_power_law_model(1, 2, 1.0)
    matrix_model = ModelSpec(
        m=1, d=2, kind=ModelKind.BASIC,
        sigma=scalar_model.sigma, grad_sigma=scalar_model.grad_sigma,
        power_params=scalar_model.power_params, name="matrix_view",
    )
    batch = simulate_basic_batch(matrix_model, [0.5], [0.0, 0.0], V11_d2(),
                                 TimeGrid(1.0, 50), 61, np.arange(500))
    q = batch.q_matrix
    assert np.allclose(q, np.swapaxes(q, 1, 2), atol=1e-14)
    eigs = np.linalg.eigvalsh(q)
    trace = np.einsum("pii->p", q)
    assert np.all(eigs >= -1e-12 * trace[:, None])


@pytest.mark.parametrize("l", [1.0, 2.0])
def test_discrete_degeneracy_inequality(l):
    # Q_T >= (a^2 int |X|^{2l}) I holds with the same quadrature on both sides
    model = make_power_law_model(1, 1, l)
    batch = simulate_basic_batch(model, [1.0], [0.0], V11, TimeGrid(1.0, 100),
                                 23, np.arange(2000))
    slack = batch.min_eig_q - batch.degeneracy_scalar
    assert np.all(slack >= -1e-10 * (1.0 + np.abs(batch.degeneracy_scalar)))


def test_accumulators_linear_in_direction():
    model = make_power_law_model(1, 1, 1.0)
    grid = TimeGrid(1.0, 80)
    u = Direction.make(0.8, -0.3)
    w = Direction.make(-1.5, 0.4)
    uw = u.plus(w)
    idx = np.arange(200)
    a = simulate_basic_batch(model, [1.0], [0.5], u, grid, 31, idx)
    b = simulate_basic_batch(model, [1.0], [0.5], w, grid, 31, idx)
    c = simulate_basic_batch(model, [1.0], [0.5], uw, grid, 31, idx)
    for name in ("trace_integral", "weighted_stoch_integral"):
        lhs = getattr(c, name)
        rhs = getattr(a, name) + getattr(b, name)
        assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12), name


def test_extended_accumulators_linear_in_direction():
    model = make_extended_demo_model()
    grid = TimeGrid(1.0, 80)
    u = Direction.make(0.8, -0.3)
    w = Direction.make(-1.5, 0.4)
    uw = u.plus(w)
    idx = np.arange(100)
    a = simulate_extended_batch(model, [1.0], [0.5], u, grid, 37, idx)
    b = simulate_extended_batch(model, [1.0], [0.5], w, grid, 37, idx)
    c = simulate_extended_batch(model, [1.0], [0.5], uw, grid, 37, idx)
    for name in ("trace_integral", "weighted_stoch_integral",
                 "drift_grad_integral", "xi_drift_weight"):
        lhs = getattr(c, name)
        rhs = getattr(a, name) + getattr(b, name)
        scale = 1.0 + np.abs(lhs)
        assert np.all(np.abs(lhs - rhs) <= 1e-10 * scale), name


def test_xi_closed_form_with_identity_coefficients():
    # sigma1 = I, b1 = 0: the integrating factors telescope to (T - t_k)/T and
    # the final node lands on exactly zero
    model = as_extended(make_power_law_model(1, 1, 1.0))
    T, n = 1.0, 200
    grid = TimeGrid(T, n)
    v1 = 0.7
    pf = simulate_extended(model, [1.0], [0.0], Direction.make(v1, 0.0), grid,
                           RngStream(41, 2), record_xi=True)
    times = grid.times()
    xi = pf.xi_path[:, 0]
    assert xi[-1] == 0.0
    # bitwise reconstruction of the telescoping product
    recon = np.empty(n + 1)
    recon[0] = v1
    for k in range(n):
        recon[k + 1] = ((T - times[k + 1]) / (T - times[k])) * recon[k]
    assert np.array_equal(xi, recon)
    assert np.allclose(xi, v1 * (T - times) / T, atol=1e-12)


def test_extended_reduces_to_basic_pathwise():
    model = make_power_law_model(1, 1, 1.0)
    ext = as_extended(model)
    grid = TimeGrid(1.0, 120)
    idx = np.arange(300)
    v = Direction.make(1.0, 1.0)
    b = simulate_basic_batch(model, [1.0], [0.2], v, grid, 43, idx)
    e = simulate_extended_batch(ext, [1.0], [0.2], v, grid, 43, idx)
    for name in ("b_final", "x_final", "y_final", "q_matrix", "trace_integral",
                 "weighted_stoch_integral", "sigma_stoch_integral",
                 "min_eig_q", "degeneracy_scalar"):
        lhs, rhs = getattr(b, name), getattr(e, name)
        assert np.allclose(lhs, rhs, atol=1e-12), name
    # the xi drift weight reduces to <v1, B_T>/T
    want = b.b_final[:, 0] * 1.0 / 1.0
    assert np.allclose(e.xi_drift_weight, want, atol=1e-12)


def test_zero_direction_zeroes_every_direction_dependent_field():
    model = make_extended_demo_model()
    grid = TimeGrid(1.0, 60)
    v0 = Direction.make(0.0, 0.0)
    pf = simulate_extended(model, [1.0], [0.0], v0, grid, RngStream(47, 0),
                           record_xi=True)
    assert np.all(pf.xi_path == 0.0)
    assert pf.xi_drift_weight == 0.0
    assert np.all(pf.trace_integral == 0.0)
    assert np.all(pf.weighted_stoch_integral == 0.0)
    assert np.all(pf.drift_grad_integral == 0.0)


def test_bitwise_determinism_across_calls_and_batching():
    model = make_power_law_model(1, 1, 2.0)
    grid = TimeGrid(0.5, 64)
    one = simulate_basic(model, [1.0], [0.3], V11, grid, RngStream(53, 17))
    big = simulate_basic_batch(model, [1.0], [0.3], V11, grid, 53,
                               np.arange(10, 30))
    again = simulate_basic(model, [1.0], [0.3], V11, grid, RngStream(53, 17))
    assert np.array_equal(one.q_matrix, big.select(7).q_matrix)
    assert np.array_equal(one.sigma_stoch_integral, again.sigma_stoch_integral)
    assert one.min_eig_q == big.select(7).min_eig_q


def test_nonfinite_coefficients_flag_paths_invalid():
    def bad_scalar(x):
        return np.sqrt(np.asarray(x)[..., 0])  # NaN once the path goes negative

    def bad_grad(x, v):
        return np.zeros(np.asarray(x).shape[:-1])

    model = ModelSpec(m=1, d=1, kind=ModelKind.BASIC,
                      sigma=lambda x: bad_scalar(x)[..., None, None],
                      grad_sigma=lambda x, v: bad_grad(x, v)[..., None, None],
                      sigma_scalar=bad_scalar, grad_sigma_scalar=bad_grad,
                      name="sqrt_model")
    with np.errstate(invalid="ignore"):
        batch = simulate_basic_batch(model, [1.0], [0.0], V11, TimeGrid(4.0, 100),
                                     59, np.arange(2000))
    n_bad = int((~batch.valid).sum())
    assert 0 < n_bad < 2000  # flagged, counted, not silently dropped
    assert np.all(np.isfinite(batch.q_matrix[batch.valid]))
