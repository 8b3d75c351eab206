"""Weight assembly: collapse cases, linearity, reduction identity, centering."""

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
from gruschin.paths import TimeGrid, simulate_basic, simulate_basic_batch, simulate_extended
from gruschin.rng import RngStream
from gruschin.weights import (
    InvalidPathError,
    bismut_weight,
    extended_weight,
    weight_terms_batch,
)

V11 = Direction.make(1.0, 1.0)
GRID = TimeGrid(1.0, 100)


def test_constant_sigma_collapses_to_brownian_weight():
    model = make_constant_identity_model()
    pf = simulate_basic(model, [0.0], [0.0], V11, GRID, RngStream(2, 0))
    w = bismut_weight(pf, V11, 1.0)
    assert w.term_trace == 0.0
    expected = pf.b_final[0] + pf.sigma_stoch_integral[0]
    assert w.m_t == pytest.approx(expected, abs=1e-14)


def test_zero_direction_gives_zero_weight():
    model = make_power_law_model(1, 1, 1.0)
    v0 = Direction.make(0.0, 0.0)
    pf = simulate_basic(model, [1.0], [0.0], v0, GRID, RngStream(5, 1))
    w = bismut_weight(pf, v0, 1.0)
    assert w.m_t == 0.0


def test_breakdown_sums_exactly():
    model = make_power_law_model(1, 1, 1.0)
    pf = simulate_basic(model, [1.0], [0.0], V11, GRID, RngStream(5, 4))
    w = bismut_weight(pf, V11, 1.0)
    assert w.m_t == w.term_drift + w.term_trace + w.term_inner


def test_weight_linear_in_direction_on_fixed_noise():
    model = make_power_law_model(1, 1, 1.0)
    u = Direction.make(0.6, -1.1)
    w_dir = Direction.make(-0.4, 0.9)
    both = u.plus(w_dir)
    for i in range(25):
        rng = RngStream(7, i)
        m_u = bismut_weight(simulate_basic(model, [1.0], [0.0], u, GRID, rng), u, 1.0).m_t
        m_w = bismut_weight(simulate_basic(model, [1.0], [0.0], w_dir, GRID, rng), w_dir, 1.0).m_t
        m_b = bismut_weight(simulate_basic(model, [1.0], [0.0], both, GRID, rng), both, 1.0).m_t
        assert m_b == pytest.approx(m_u + m_w, rel=1e-10, abs=1e-12)


def test_extended_weight_linear_in_direction():
    model = make_extended_demo_model()
    u = Direction.make(0.6, -1.1)
    w_dir = Direction.make(-0.4, 0.9)
    both = u.plus(w_dir)
    for i in range(15):
        rng = RngStream(9, i)
        m_u = extended_weight(simulate_extended(model, [1.0], [0.0], u, GRID, rng), u, 1.0).m_t
        m_w = extended_weight(simulate_extended(model, [1.0], [0.0], w_dir, GRID, rng), w_dir, 1.0).m_t
        m_b = extended_weight(simulate_extended(model, [1.0], [0.0], both, GRID, rng), both, 1.0).m_t
        assert m_b == pytest.approx(m_u + m_w, rel=1e-10, abs=1e-12)


def test_extended_reduction_matches_basic_weight():
    model = make_power_law_model(1, 1, 1.0)
    ext = as_extended(model)
    for i in range(50):
        pfb = simulate_basic(model, [1.0], [0.0], V11, GRID, RngStream(11, i))
        pfe = simulate_extended(ext, [1.0], [0.0], V11, GRID, RngStream(11, i))
        wb = bismut_weight(pfb, V11, 1.0)
        we = extended_weight(pfe, V11, 1.0)
        assert abs(wb.m_t - we.m_t) <= 1e-12


def test_extended_constant_coefficients_collapse():
    # sigma1 = I, b = 0, sigma2 = I: M = <v1,B_T>/T + <v2,Bt_T>/T
    ext = as_extended(make_constant_identity_model())
    pf = simulate_extended(ext, [0.0], [0.0], V11, GRID, RngStream(13, 3))
    w = extended_weight(pf, V11, 1.0)
    expected = pf.b_final[0] + pf.sigma_stoch_integral[0]
    assert w.m_t == pytest.approx(expected, abs=1e-12)


def test_weight_mean_is_centered():
    model = make_power_law_model(1, 1, 1.0)
    batch = simulate_basic_batch(model, [1.0], [0.0], V11, GRID, 17,
                                 np.arange(100000))
    drift, trace, inner, ok = weight_terms_batch(batch, V11, 1.0)
    m = drift + trace + inner
    assert ok.all()
    mean = m.mean()
    stderr = m.std(ddof=1) / np.sqrt(len(m))
    assert abs(mean) <= 4.0 * stderr


def test_invalid_path_error_carries_min_eig():
    def zero(x):
        return np.zeros(np.asarray(x).shape[:-1])

    degenerate = ModelSpec(m=1, d=1, kind=ModelKind.BASIC,
                           sigma=lambda x: zero(x)[..., None, None],
                           grad_sigma=lambda x, v: zero(x)[..., None, None],
                           sigma_scalar=zero,
                           grad_sigma_scalar=lambda x, v: zero(x),
                           name="identically_degenerate")
    pf = simulate_basic(degenerate, [1.0], [0.0], V11, GRID, RngStream(19, 0))
    with pytest.raises(InvalidPathError) as err:
        bismut_weight(pf, V11, 1.0)
    assert err.value.min_eig == 0.0


def test_weight_rejects_wrong_kind():
    model = make_power_law_model(1, 1, 1.0)
    pf = simulate_basic(model, [1.0], [0.0], V11, GRID, RngStream(23, 0))
    with pytest.raises(ValueError):
        extended_weight(pf, V11, 1.0)


def test_weight_terms_reject_mismatched_direction():
    model = make_power_law_model(1, 1, 1.0)
    batch = simulate_basic_batch(model, [1.0], [0.0], V11, GRID, 27, np.arange(8))
    with pytest.raises(ValueError):
        weight_terms_batch(batch, Direction.make(2.0, 1.0), 1.0)


def test_relabeling_symmetry():
    # permuting the components of the second Brownian motion permutes the
    # stochastic integrals but leaves each weight term invariant
    model = make_power_law_model(1, 2, 1.0)
    grid = TimeGrid(1.0, 64)
    idx = np.arange(64)
    v = Direction.make([1.0], [0.3, 0.3])
    from gruschin.rng import PathStreams

    eps = PathStreams(29).fill_normals(idx, (64, 3))
    root_dt = np.sqrt(grid.dt)
    dB, dBt = eps[:, :, :1] * root_dt, eps[:, :, 1:] * root_dt
    a = simulate_basic_batch(model, [1.0], [0.0, 0.0], v, grid, 29, idx,
                             increments=(dB, dBt))
    b = simulate_basic_batch(model, [1.0], [0.0, 0.0], v, grid, 29, idx,
                             increments=(dB, dBt[:, :, ::-1].copy()))
    da, ta, ia, _ = weight_terms_batch(a, v, 1.0)
    db_, tb, ib, _ = weight_terms_batch(b, v, 1.0)
    assert np.array_equal(ta, tb)           # trace term has no Bt dependence here
    assert np.allclose(ia, ib, rtol=1e-12)  # symmetric v2 makes the inner term invariant
    assert np.array_equal(da, db_)
