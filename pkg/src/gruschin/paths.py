"""Path simulation over a uniform grid, accumulating every functional the weights need.

All discretization is left-point (Ito):

* Basic model: the X-component has unit diffusion and no drift, so X is advanced
  by exact Brownian accumulation (no scheme error in X); Y and every integral use
  left-endpoint sums.
* Extended model: (X, Y, xi) advance jointly.  The auxiliary process xi carries
  the singular drift -xi/(T-t), handled by the exact integrating factor
  (T-t-dt)/(T-t) per step, which telescopes and pins xi to 0 at the final node.

Time integrals are evaluated as T * mean(integrand over left nodes), which equals
the left Riemann sum but is exact for constant integrands.  The sequential
accumulators of the extended kernel use Kahan compensated summation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import Direction, ModelKind, ModelSpec
from .rng import PathStreams, RngStream

__all__ = [
    "TimeGrid",
    "PathFunctionals",
    "PathBatch",
    "simulate_basic",
    "simulate_extended",
    "simulate_basic_batch",
    "simulate_extended_batch",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T]: node k sits at T*k/n_steps (final node exactly T)."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be at least 2, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        return self.horizon * np.arange(self.n_steps + 1) / self.n_steps

    def left_times(self) -> np.ndarray:
        return self.times()[: self.n_steps]

    def decay_weights(self) -> np.ndarray:
        """(T - t_k)/T at the left nodes; the weight of the control construction."""
        return (self.horizon - self.left_times()) / self.horizon


@dataclass
class PathFunctionals:
    """Everything a single simulated path contributes to the derivative weights."""

    kind: ModelKind
    sim_direction: Direction       # the v the v-dependent accumulators were built with
    b_final: np.ndarray            # (m,) terminal value of the first Brownian motion
    x_final: np.ndarray            # (m,)
    y_final: np.ndarray            # (d,)
    q_matrix: np.ndarray           # (d, d)  discretized int sigma sigma^* dt
    trace_integral: np.ndarray     # (d, d)  basic: int ((T-t)/T){(grad_v1 sigma) sigma^*} dt;
    #                                extended: int {(grad_xi sigma2) sigma2^*} dt
    weighted_stoch_integral: np.ndarray  # (d,) basic: int ((T-t)/T)(grad_v1 sigma) dBt;
    #                                      extended: int (grad_xi sigma2) dBt
    sigma_stoch_integral: np.ndarray     # (d,) int sigma dBt
    drift_grad_integral: np.ndarray      # (d,) int (grad_xi b2) dt  (extended only)
    xi_drift_weight: float         # int <sigma1^{-1} xi/(T-t), dB>  (extended only)
    min_eig_q: float
    degeneracy_scalar: float       # a^2 int |X_t|^{2l} dt when power params declared
    valid: bool
    xi_path: Optional[np.ndarray] = None  # (n_steps+1, m) when recording requested


@dataclass
class PathBatch:
    """Batched PathFunctionals: every array carries a leading path axis."""

    kind: ModelKind
    sim_direction: Direction
    path_indices: np.ndarray
    b_final: np.ndarray
    x_final: np.ndarray
    y_final: np.ndarray
    q_matrix: np.ndarray
    trace_integral: np.ndarray
    weighted_stoch_integral: np.ndarray
    sigma_stoch_integral: np.ndarray
    drift_grad_integral: np.ndarray
    xi_drift_weight: np.ndarray
    min_eig_q: np.ndarray
    degeneracy_scalar: np.ndarray
    valid: np.ndarray
    xi_path: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.path_indices)

    @property
    def z_final(self) -> np.ndarray:
        """Terminal states stacked as points in R^{m+d}."""
        return np.concatenate([self.x_final, self.y_final], axis=1)

    def select(self, row: int) -> PathFunctionals:
        return PathFunctionals(
            kind=self.kind,
            sim_direction=self.sim_direction,
            b_final=self.b_final[row].copy(),
            x_final=self.x_final[row].copy(),
            y_final=self.y_final[row].copy(),
            q_matrix=self.q_matrix[row].copy(),
            trace_integral=self.trace_integral[row].copy(),
            weighted_stoch_integral=self.weighted_stoch_integral[row].copy(),
            sigma_stoch_integral=self.sigma_stoch_integral[row].copy(),
            drift_grad_integral=self.drift_grad_integral[row].copy(),
            xi_drift_weight=float(self.xi_drift_weight[row]),
            min_eig_q=float(self.min_eig_q[row]),
            degeneracy_scalar=float(self.degeneracy_scalar[row]),
            valid=bool(self.valid[row]),
            xi_path=None if self.xi_path is None else self.xi_path[row].copy(),
        )


def _as_state(value, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {arr.shape}")
    return arr


def _draw_increments(model, grid, master_seed, path_indices, substream):
    streams = PathStreams(master_seed, substream)
    eps = streams.fill_normals(np.asarray(path_indices), (grid.n_steps, model.m + model.d))
    root_dt = np.sqrt(grid.dt)
    return eps[:, :, : model.m] * root_dt, eps[:, :, model.m:] * root_dt


def _batch_radius(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return np.abs(x[..., 0])
    return np.linalg.norm(x, axis=-1)


def _kahan_add(total: np.ndarray, comp: np.ndarray, term: np.ndarray) -> None:
    y = term - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


def simulate_basic_batch(
    model: ModelSpec,
    x0,
    y0,
    v: Direction,
    grid: TimeGrid,
    master_seed: int,
    path_indices,
    substream: int = 0,
    increments: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> PathBatch:
    """Simulate a batch of basic-model paths and accumulate all weight functionals.

    ``increments`` overrides the generated Brownian increments (arrays of shape
    (P, n_steps, m) and (P, n_steps, d)); used by refinement-coupling tests.
    """
    if model.kind is not ModelKind.BASIC:
        raise ValueError("simulate_basic_batch expects a basic model")
    m, d = model.m, model.d
    x0 = _as_state(x0, m, "x0")
    y0 = _as_state(y0, d, "y0")
    path_indices = np.asarray(path_indices, dtype=np.int64)
    n, T = grid.n_steps, grid.horizon

    if increments is None:
        dB, dBt = _draw_increments(model, grid, master_seed, path_indices, substream)
    else:
        dB, dBt = increments
        if dB.shape != (len(path_indices), n, m) or dBt.shape != (len(path_indices), n, d):
            raise ValueError("increment override has wrong shape")
    P = len(path_indices)

    b_nodes = np.concatenate([np.zeros((P, 1, m)), np.cumsum(dB, axis=1)], axis=1)
    b_final = b_nodes[:, n, :]
    x_left = x0 + b_nodes[:, :n, :]
    x_final = x0 + b_final
    w = grid.decay_weights()

    if model.scalar_identity:
        s = np.asarray(model.sigma_scalar(x_left), dtype=float)       # (P, n)
        g = np.asarray(model.grad_sigma_scalar(x_left, v.v1), dtype=float)
        q_scalar = T * np.mean(s * s, axis=1)
        tr_scalar = T * np.mean(w * g * s, axis=1)
        eye = np.eye(d)
        q_matrix = q_scalar[:, None, None] * eye
        trace_integral = tr_scalar[:, None, None] * eye
        wsi = ((w * g)[:, :, None] * dBt).sum(axis=1)
        ssi = (s[:, :, None] * dBt).sum(axis=1)
        min_eig = q_scalar
    else:
        S = np.asarray(model.sigma(x_left), dtype=float)              # (P, n, d, d)
        G = np.asarray(model.grad_sigma(x_left, v.v1), dtype=float)
        q_matrix = T * np.einsum("pnij,pnkj->pik", S, S) / n
        trace_integral = T * np.einsum("n,pnij,pnkj->pik", w, G, S) / n
        wsi = np.einsum("n,pnij,pnj->pi", w, G, dBt)
        ssi = np.einsum("pnij,pnj->pi", S, dBt)
        min_eig = np.linalg.eigvalsh(q_matrix)[:, 0]

    y_final = y0 + ssi

    if model.power_params is not None:
        p = model.power_params
        r = _batch_radius(x_left)
        degeneracy = (p.a**2) * T * np.mean(r ** (2.0 * p.l), axis=1)
    else:
        degeneracy = np.zeros(P)

    valid = (
        np.isfinite(q_matrix).all(axis=(1, 2))
        & np.isfinite(trace_integral).all(axis=(1, 2))
        & np.isfinite(wsi).all(axis=1)
        & np.isfinite(ssi).all(axis=1)
        & np.isfinite(y_final).all(axis=1)
        & np.isfinite(min_eig)
    )

    return PathBatch(
        kind=ModelKind.BASIC,
        sim_direction=v,
        path_indices=path_indices,
        b_final=b_final,
        x_final=x_final,
        y_final=y_final,
        q_matrix=q_matrix,
        trace_integral=trace_integral,
        weighted_stoch_integral=wsi,
        sigma_stoch_integral=ssi,
        drift_grad_integral=np.zeros((P, d)),
        xi_drift_weight=np.zeros(P),
        min_eig_q=min_eig,
        degeneracy_scalar=degeneracy,
        valid=valid,
    )


def simulate_extended_batch(
    model: ModelSpec,
    x0,
    y0,
    v: Direction,
    grid: TimeGrid,
    master_seed: int,
    path_indices,
    substream: int = 0,
    record_xi: bool = False,
    increments: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> PathBatch:
    """Simulate extended-model paths, advancing (X, Y, xi) jointly.

    The xi step is exact for the singular part of the drift:
    xi_{k+1} = ((T-t_{k+1})/(T-t_k)) * [xi_k + (grad_xi sigma1) dB + (grad_xi b1) dt],
    so the factor at the last step is exactly 0 and xi lands on 0 at t = T.
    """
    if model.kind is not ModelKind.EXTENDED:
        raise ValueError("simulate_extended_batch expects an extended model")
    m, d = model.m, model.d
    x0 = _as_state(x0, m, "x0")
    y0 = _as_state(y0, d, "y0")
    path_indices = np.asarray(path_indices, dtype=np.int64)
    n, T, dt = grid.n_steps, grid.horizon, grid.dt

    if increments is None:
        dB, dBt = _draw_increments(model, grid, master_seed, path_indices, substream)
    else:
        dB, dBt = increments
    P = len(path_indices)

    times = grid.times()
    remaining = T - times                      # (n+1,), exactly 0 at the final node
    factors = remaining[1:] / remaining[:n]    # integrating factors, last one exactly 0

    x = np.broadcast_to(x0, (P, m)).copy()
    xi = np.broadcast_to(v.v1, (P, m)).copy()
    b_running = np.zeros((P, m))
    eye_m = np.eye(m)

    def zeros(*shape):
        return np.zeros((P,) + shape), np.zeros((P,) + shape)

    q_acc, q_c = zeros(d, d)
    tr_acc, tr_c = zeros(d, d)
    wsi_acc, wsi_c = zeros(d)
    ssi_acc, ssi_c = zeros(d)
    dgi_acc, dgi_c = zeros(d)
    ydrift_acc, ydrift_c = zeros(d)
    xdw_acc, xdw_c = zeros()
    deg_acc, deg_c = zeros()
    invalid = np.zeros(P, dtype=bool)

    power = model.power_params
    xi_path = np.empty((P, n + 1, m)) if record_xi else None
    if record_xi:
        xi_path[:, 0, :] = xi

    for k in range(n):
        db = dB[:, k, :]
        dbt = dBt[:, k, :]
        s1 = np.asarray(model.sigma1(x), dtype=float)                 # (P, m, m)
        s2 = np.asarray(model.sigma(x), dtype=float)                  # (P, d, d)
        g2 = np.asarray(model.grad_sigma(x, xi), dtype=float)         # (P, d, d)

        # xi-drift weight term at the left node, <sigma1^{-1} xi/(T-t_k), dB_k>
        if m == 1:
            s1_scalar = s1[:, 0, 0]
            bad = np.abs(s1_scalar) < 1e-300
            invalid |= bad
            safe = np.where(bad, 1.0, s1_scalar)
            s1_inv_xi = xi / safe[:, None]
        else:
            det = np.abs(np.linalg.det(s1))
            bad = det < 1e-12 * np.abs(s1).max(axis=(1, 2)) ** m
            invalid |= bad
            s1_safe = np.where(bad[:, None, None], eye_m, s1)
            s1_inv_xi = np.linalg.solve(s1_safe, xi[..., None])[..., 0]
        _kahan_add(xdw_acc, xdw_c, (s1_inv_xi * db).sum(axis=1) / remaining[k])

        # the decay (T-t)/T of the basic weight lives inside xi here: in the
        # sigma1 = I, b1 = 0 reduction xi_t = v1 (T-t)/T exactly, so these
        # unweighted integrands coincide with the weighted basic ones
        _kahan_add(q_acc, q_c, np.einsum("pij,pkj->pik", s2, s2) * dt)
        _kahan_add(tr_acc, tr_c, dt * np.einsum("pij,pkj->pik", g2, s2))
        _kahan_add(wsi_acc, wsi_c, np.einsum("pij,pj->pi", g2, dbt))
        _kahan_add(ssi_acc, ssi_c, np.einsum("pij,pj->pi", s2, dbt))
        _kahan_add(dgi_acc, dgi_c, np.asarray(model.grad_b2(x, xi), dtype=float) * dt)
        _kahan_add(ydrift_acc, ydrift_c, np.asarray(model.b2(x), dtype=float) * dt)
        if power is not None:
            r = _batch_radius(x)
            _kahan_add(deg_acc, deg_c, (power.a**2) * r ** (2.0 * power.l) * dt)

        gs1 = np.asarray(model.grad_sigma1(x, xi), dtype=float)       # (P, m, m)
        gb1 = np.asarray(model.grad_b1(x, xi), dtype=float)           # (P, m)
        xi = factors[k] * (xi + np.einsum("pij,pj->pi", gs1, db) + gb1 * dt)
        x = x + np.einsum("pij,pj->pi", s1, db) + np.asarray(model.b1(x), dtype=float) * dt
        b_running = b_running + db
        if record_xi:
            xi_path[:, k + 1, :] = xi

    y_final = y0 + ssi_acc + ydrift_acc
    min_eig = q_acc[:, 0, 0] if d == 1 else np.linalg.eigvalsh(q_acc)[:, 0]

    finite = (
        np.isfinite(x).all(axis=1)
        & np.isfinite(y_final).all(axis=1)
        & np.isfinite(q_acc).all(axis=(1, 2))
        & np.isfinite(tr_acc).all(axis=(1, 2))
        & np.isfinite(wsi_acc).all(axis=1)
        & np.isfinite(ssi_acc).all(axis=1)
        & np.isfinite(dgi_acc).all(axis=1)
        & np.isfinite(xdw_acc)
    )

    return PathBatch(
        kind=ModelKind.EXTENDED,
        sim_direction=v,
        path_indices=path_indices,
        b_final=b_running,
        x_final=x,
        y_final=y_final,
        q_matrix=q_acc,
        trace_integral=tr_acc,
        weighted_stoch_integral=wsi_acc,
        sigma_stoch_integral=ssi_acc,
        drift_grad_integral=dgi_acc,
        xi_drift_weight=xdw_acc,
        min_eig_q=min_eig,
        degeneracy_scalar=deg_acc,
        valid=finite & ~invalid,
        xi_path=xi_path,
    )


def simulate_basic(model: ModelSpec, x0, y0, v: Direction, grid: TimeGrid,
                   rng: RngStream) -> PathFunctionals:
    """One basic-model path; a pure function of (model, inputs, rng identity)."""
    batch = simulate_basic_batch(
        model, x0, y0, v, grid, rng.master_seed, [rng.path_index], substream=rng.substream
    )
    return batch.select(0)


def simulate_extended(model: ModelSpec, x0, y0, v: Direction, grid: TimeGrid,
                      rng: RngStream, record_xi: bool = False) -> PathFunctionals:
    """One extended-model path, optionally recording the auxiliary process."""
    batch = simulate_extended_batch(
        model, x0, y0, v, grid, rng.master_seed, [rng.path_index],
        substream=rng.substream, record_xi=record_xi,
    )
    return batch.select(0)
