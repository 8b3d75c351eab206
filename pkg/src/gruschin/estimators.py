"""Monte Carlo estimators: semigroup values, weight and finite-difference gradients,
and the moment quantities behind the negative-moment and L^q inequalities.

Determinism contract: per-path sample values are pure functions of
(master_seed, path_index); they are assembled into arrays ordered by path index
and reduced by a fixed pairwise tree.  Serial and multi-worker runs are therefore
bitwise identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .models import Direction, ModelKind, ModelSpec, TestFunction
from .paths import TimeGrid, simulate_basic_batch, simulate_extended_batch
from .rng import PathStreams
from .weights import weight_terms_batch, weight_terms_shared

__all__ = [
    "DEFAULT_BATCH_SIZE",
    "MCEstimate",
    "EstimationError",
    "pairwise_sum",
    "estimate_pt",
    "estimate_gradient_bismut",
    "estimate_gradient_fd",
    "estimate_negative_moment",
    "estimate_lq_moment",
    "lq_moment_rhs",
    "LQ_INTEGRANDS",
    "default_fd_eps",
    "split_point",
    "bismut_panel",
    "fd_panel",
]

DEFAULT_BATCH_SIZE = 8192


class EstimationError(RuntimeError):
    """Raised when an estimate cannot be formed (e.g. every path invalid)."""


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo mean with its standard error and path accounting."""

    mean: float
    stderr: float
    n_valid: int
    n_invalid: int
    master_seed: int

    @property
    def half_width(self) -> float:
        """4-sigma acceptance band (two-sided ~99.99%)."""
        return 4.0 * self.stderr


def pairwise_sum(values: np.ndarray) -> float:
    """Deterministic pairwise-tree sum over a 1-d array in index order."""
    x = np.ascontiguousarray(values, dtype=float)
    return _pairwise(x)


def _pairwise(x: np.ndarray) -> float:
    n = x.size
    if n <= 1024:
        return float(np.add.reduce(x))
    mid = n // 2
    return _pairwise(x[:mid]) + _pairwise(x[mid:])


def _finalize(values: np.ndarray, valid: np.ndarray, seed: int) -> MCEstimate:
    n_total = len(values)
    good = values[valid]
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EstimationError("all paths invalid; nothing to average")
    mean = pairwise_sum(good) / n_valid
    if n_valid >= 2:
        var = pairwise_sum((good - mean) ** 2) / (n_valid - 1)
        stderr = math.sqrt(var / n_valid)
    else:
        stderr = float("inf")
    return MCEstimate(mean=mean, stderr=stderr, n_valid=n_valid,
                      n_invalid=n_total - n_valid, master_seed=seed)


def _chunks(n_paths: int, batch_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + batch_size, n_paths)) for s in range(0, n_paths, batch_size)]


def run_batches(
    n_paths: int,
    column_names: Sequence[str],
    batch_fn: Callable[[int, int], tuple[dict, np.ndarray]],
    workers: int = 1,
    batch_size: Optional[int] = None,
) -> tuple[dict, np.ndarray]:
    """Fill per-path columns chunk by chunk; placement by path index keeps the
    result independent of worker count and completion order."""
    batch_size = batch_size or DEFAULT_BATCH_SIZE
    cols = {name: np.empty(n_paths) for name in column_names}
    valid = np.empty(n_paths, dtype=bool)
    spans = _chunks(n_paths, batch_size)

    def work(span):
        start, stop = span
        out, ok = batch_fn(start, stop)
        return start, stop, out, ok

    if workers <= 1:
        results = map(work, spans)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(work, spans))
        finally:
            pool.shutdown(wait=True)
    for start, stop, out, ok in results:
        for name in column_names:
            cols[name][start:stop] = out[name]
        valid[start:stop] = ok
    return cols, valid


def split_point(model: ModelSpec, z0) -> tuple[np.ndarray, np.ndarray]:
    """Split a point of R^{m+d} into its (x, y) components."""
    z = np.atleast_1d(np.asarray(z0, dtype=float))
    if z.shape != (model.m + model.d,):
        raise ValueError(f"z0 must have shape ({model.m + model.d},), got {z.shape}")
    return z[: model.m], z[model.m:]


def default_fd_eps(z0) -> float:
    return 1e-3 * (1.0 + float(np.linalg.norm(np.asarray(z0, dtype=float))))


def _simulate(model, x0, y0, v, grid, seed, start, stop, substream=0):
    idx = np.arange(start, stop, dtype=np.int64)
    if model.kind is ModelKind.BASIC:
        return simulate_basic_batch(model, x0, y0, v, grid, seed, idx, substream=substream)
    return simulate_extended_batch(model, x0, y0, v, grid, seed, idx, substream=substream)


def _zero_direction(model: ModelSpec) -> Direction:
    return Direction(np.zeros(model.m), np.zeros(model.d))


def estimate_pt(model: ModelSpec, f: TestFunction, z0, T: float,
                n_paths: int, n_steps: int, seed: int,
                *, workers: int = 1, batch_size: Optional[int] = None) -> MCEstimate:
    """Monte Carlo estimate of the semigroup value E f(X_T, Y_T) from (x, y) = z0."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    x0, y0 = split_point(model, z0)
    grid = TimeGrid(T, n_steps)
    v0 = _zero_direction(model)

    def batch_fn(start, stop):
        batch = _simulate(model, x0, y0, v0, grid, seed, start, stop)
        vals = np.asarray(f.eval(batch.z_final), dtype=float)
        return {"value": vals}, batch.valid & np.isfinite(vals)

    cols, valid = run_batches(n_paths, ["value"], batch_fn, workers, batch_size)
    return _finalize(cols["value"], valid, seed)


def estimate_gradient_bismut(model: ModelSpec, f: TestFunction, z0, v: Direction,
                             T: float, n_paths: int, n_steps: int, seed: int,
                             *, workers: int = 1,
                             batch_size: Optional[int] = None) -> MCEstimate:
    """Directional semigroup derivative via the weight representation E[f * M_T].

    The observable should be bounded or polynomially bounded so that f * M_T is
    integrable (the weight has finite moments of every order).
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    x0, y0 = split_point(model, z0)
    grid = TimeGrid(T, n_steps)

    def batch_fn(start, stop):
        batch = _simulate(model, x0, y0, v, grid, seed, start, stop)
        drift, trace, inner, solvable = weight_terms_batch(batch, v, T)
        m_t = drift + trace + inner
        vals = np.asarray(f.eval(batch.z_final), dtype=float) * m_t
        vals = np.where(solvable, vals, 0.0)
        return {"value": vals}, batch.valid & solvable & np.isfinite(vals)

    cols, valid = run_batches(n_paths, ["value"], batch_fn, workers, batch_size)
    return _finalize(cols["value"], valid, seed)


def estimate_gradient_fd(model: ModelSpec, f: TestFunction, z0, v: Direction,
                         T: float, n_paths: int, n_steps: int, seed: int,
                         eps: Optional[float] = None,
                         *, workers: int = 1,
                         batch_size: Optional[int] = None) -> MCEstimate:
    """Central finite difference of the semigroup along v with common random numbers.

    Both shifted estimates reuse the identical Brownian increments per path index,
    so the per-path difference has drastically reduced variance.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    eps = default_fd_eps(z0) if eps is None else float(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    z = np.asarray(z0, dtype=float)
    shift = np.concatenate([v.v1, v.v2])
    x_up, y_up = split_point(model, z + eps * shift)
    x_dn, y_dn = split_point(model, z - eps * shift)
    grid = TimeGrid(T, n_steps)
    v0 = _zero_direction(model)

    def batch_fn(start, stop):
        up = _simulate(model, x_up, y_up, v0, grid, seed, start, stop)
        dn = _simulate(model, x_dn, y_dn, v0, grid, seed, start, stop)
        f_up = np.asarray(f.eval(up.z_final), dtype=float)
        f_dn = np.asarray(f.eval(dn.z_final), dtype=float)
        diff = (f_up - f_dn) / (2.0 * eps)
        return {"value": diff}, up.valid & dn.valid & np.isfinite(diff)

    cols, valid = run_batches(n_paths, ["value"], batch_fn, workers, batch_size)
    return _finalize(cols["value"], valid, seed)


def estimate_negative_moment(m: int, x, T: float, n_exp: float, alpha: float,
                             n_paths: int, n_steps: int, seed: int,
                             *, workers: int = 1,
                             batch_size: Optional[int] = None) -> MCEstimate:
    """E (int_0^T |x + B_t|^{2n} dt)^{-alpha} for an m-dimensional Brownian path."""
    if n_exp < 1:
        raise ValueError("moment exponent n must satisfy n >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (m,):
        raise ValueError(f"x must have shape ({m},)")
    grid = TimeGrid(T, n_steps)
    root_dt = math.sqrt(grid.dt)
    n = grid.n_steps

    def batch_fn(start, stop):
        idx = np.arange(start, stop, dtype=np.int64)
        streams = PathStreams(seed)
        dB = streams.fill_normals(idx, (n, m)) * root_dt
        nodes = np.concatenate([np.zeros((len(idx), 1, m)), np.cumsum(dB, axis=1)], axis=1)
        x_left = x + nodes[:, :n, :]
        r = np.abs(x_left[..., 0]) if m == 1 else np.linalg.norm(x_left, axis=-1)
        integral = T * np.mean(r ** (2.0 * n_exp), axis=1)
        ok = integral > 0.0
        vals = np.where(ok, integral, 1.0) ** (-alpha)
        return {"value": np.where(ok, vals, 0.0)}, ok

    cols, valid = run_batches(n_paths, ["value"], batch_fn, workers, batch_size)
    return _finalize(cols["value"], valid, seed)


# ---------------------------------------------------------------------------
# L^q moment inequality: catalogue of integrands with computable right-hand sides
# ---------------------------------------------------------------------------

LQ_INTEGRANDS = ("zero", "constant_unit", "adapted_cos", "sigma_row")

_LQ_CONSTANT_FACTOR = lambda q: (q * (q - 1.0) / 2.0) ** (q / 2.0)


def _double_factorial_odd(j: int) -> float:
    """(2j-1)!! = (2j)! / (2^j j!)."""
    return math.factorial(2 * j) / (2.0**j * math.factorial(j))


def _gaussian_abs_moment_even(k: int, x: float, t: float) -> float:
    """E |x + W_t|^k for even integer k: a polynomial in (x, t)."""
    total = 0.0
    for j in range(k // 2 + 1):
        total += math.comb(k, 2 * j) * x ** (k - 2 * j) * _double_factorial_odd(j) * t**j
    return total


def _cos_power_mean(q: int, t: float) -> float:
    """E cos(W_t)^q for even integer q via the binomial expansion into cosines."""
    total = 0.0
    for j in range(q + 1):
        total += math.comb(q, j) * math.exp(-((q - 2 * j) ** 2) * t / 2.0)
    return total / 2.0**q


def lq_moment_rhs(integrand: str, q: float, T: float, *, l: float = 1.0,
                  x: float = 0.0) -> float:
    """Closed-form bound {q(q-1)/2}^{q/2} (int_0^T (E|rho_t|^q)^{2/q} dt)^{q/2}."""
    if q < 2:
        raise ValueError("q must be at least 2")
    if integrand == "zero":
        return 0.0
    if integrand == "constant_unit":
        return _LQ_CONSTANT_FACTOR(q) * T ** (q / 2.0)
    if integrand == "adapted_cos":
        qi = int(q)
        if qi != q or qi % 2 != 0:
            raise ValueError("adapted_cos needs an even integer q for the closed form")
        inner, _ = quad(lambda t: _cos_power_mean(qi, t) ** (2.0 / q), 0.0, T, limit=200)
        return _LQ_CONSTANT_FACTOR(q) * inner ** (q / 2.0)
    if integrand == "sigma_row":
        k = l * q
        if int(k) != k or int(k) % 2 != 0:
            raise ValueError("sigma_row needs l*q to be an even integer for the closed form")
        k = int(k)
        inner, _ = quad(
            lambda t: _gaussian_abs_moment_even(k, x, t) ** (2.0 / q), 0.0, T, limit=200
        )
        return _LQ_CONSTANT_FACTOR(q) * inner ** (q / 2.0)
    raise ValueError(f"unknown integrand {integrand!r}; choose from {LQ_INTEGRANDS}")


def estimate_lq_moment(integrand: str, q: float, T: float,
                       n_paths: int, n_steps: int, seed: int,
                       *, l: float = 1.0, x: float = 0.0,
                       workers: int = 1,
                       batch_size: Optional[int] = None) -> MCEstimate:
    """Left-hand side E |int_0^T <rho_t, dBt_t>|^q for a catalogued predictable rho.

    Catalogue (all one-dimensional):
      zero          -- rho_t = 0 (both sides vanish);
      constant_unit -- rho_t = 1;
      adapted_cos   -- rho_t = cos(Bt_{t}) at the left node (bounded, adapted);
      sigma_row     -- rho_t = (x + W_t)^l with W an independent Brownian motion.
    """
    if q < 2:
        raise ValueError("q must be at least 2")
    if integrand not in LQ_INTEGRANDS:
        raise ValueError(f"unknown integrand {integrand!r}; choose from {LQ_INTEGRANDS}")
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    grid = TimeGrid(T, n_steps)
    n = grid.n_steps
    root_dt = math.sqrt(grid.dt)
    n_streams = 2 if integrand == "sigma_row" else 1

    def batch_fn(start, stop):
        idx = np.arange(start, stop, dtype=np.int64)
        streams = PathStreams(seed)
        eps = streams.fill_normals(idx, (n, n_streams)) * root_dt
        dBt = eps[:, :, -1]
        if integrand == "zero":
            rho = np.zeros_like(dBt)
        elif integrand == "constant_unit":
            rho = np.ones_like(dBt)
        elif integrand == "adapted_cos":
            nodes = np.concatenate(
                [np.zeros((len(idx), 1)), np.cumsum(dBt, axis=1)], axis=1
            )
            rho = np.cos(nodes[:, :n])
        else:  # sigma_row
            dW = eps[:, :, 0]
            nodes = np.concatenate(
                [np.zeros((len(idx), 1)), np.cumsum(dW, axis=1)], axis=1
            )
            w_left = x + nodes[:, :n]
            rho = np.sign(w_left) * np.abs(w_left) ** l
        n_T = (rho * dBt).sum(axis=1)
        vals = np.abs(n_T) ** q
        return {"value": vals}, np.isfinite(vals)

    cols, valid = run_batches(n_paths, ["value"], batch_fn, workers, batch_size)
    return _finalize(cols["value"], valid, seed)


# ---------------------------------------------------------------------------
# Panels: many observables / directions off shared simulations
# ---------------------------------------------------------------------------

def _direction_groups(vs: Sequence[Direction]):
    """Group directions by their v1 ray so each group shares one simulation.

    Within a group every v1 is a scalar multiple of the representative, so the
    weight follows from pathwise linearity.  v1 = 0 joins any group with scale 0.
    """
    groups: list[dict] = []
    for j, v in enumerate(vs):
        norm = float(np.linalg.norm(v.v1))
        placed = False
        for grp in groups:
            u1 = grp["u1"]
            u_norm = float(np.linalg.norm(u1))
            if norm == 0.0:
                grp["members"].append((j, 0.0))
                placed = True
                break
            if u_norm == 0.0:
                grp["u1"] = v.v1
                grp["members"].append((j, 1.0))
                placed = True
                break
            cos = float(np.dot(u1, v.v1)) / (u_norm * norm)
            if abs(abs(cos) - 1.0) < 1e-12:
                grp["members"].append((j, math.copysign(norm / u_norm, cos)))
                placed = True
                break
        if not placed:
            groups.append({"u1": v.v1, "members": [(j, 1.0)]})
    return groups


def bismut_panel(model: ModelSpec, z0, T: float,
                 fs: Sequence[TestFunction], vs: Sequence[Direction],
                 n_paths: int, n_steps: int, seed: int,
                 *, extra_obs: Sequence[tuple[str, Callable]] = (),
                 workers: int = 1, batch_size: Optional[int] = None) -> dict:
    """Weight-gradient estimates for every (f, v) plus plain semigroup observables.

    Directions whose v1 components are parallel share one simulation per batch;
    the returned dict maps ("grad", f.name, j) and ("pt", label) to MCEstimates.
    """
    x0, y0 = split_point(model, z0)
    grid = TimeGrid(T, n_steps)
    groups = _direction_groups(vs)
    names = [f"grad:{f.name}:{j}" for f in fs for j in range(len(vs))]
    names += [f"pt:{label}" for label, _ in extra_obs]

    def batch_fn(start, stop):
        out = {}
        ok = None
        for gi, grp in enumerate(groups):
            u = Direction(np.asarray(grp["u1"], dtype=float), np.zeros(model.d))
            batch = _simulate(model, x0, y0, u, grid, seed, start, stop)
            fvals = {f.name: np.asarray(f.eval(batch.z_final), dtype=float) for f in fs}
            group_ok = None
            for j, scale in grp["members"]:
                drift, trace, inner, solvable = weight_terms_shared(
                    batch, T, vs[j].v2, v1_scale=scale
                )
                m_t = np.where(solvable, drift + trace + inner, 0.0)
                group_ok = solvable  # solvability depends on Q_T only, not on v
                for f in fs:
                    out[f"grad:{f.name}:{j}"] = fvals[f.name] * m_t
            good = batch.valid & group_ok
            ok = good if ok is None else (ok & good)
            if gi == 0:
                # the state trajectory does not depend on the direction, so plain
                # observables from the first group's batch serve every direction
                for label, fn in extra_obs:
                    out[f"pt:{label}"] = np.asarray(fn(batch.z_final), dtype=float)
        return out, ok

    cols, valid = run_batches(n_paths, names, batch_fn, workers, batch_size)
    result = {}
    for f in fs:
        for j in range(len(vs)):
            result[("grad", f.name, j)] = _finalize(cols[f"grad:{f.name}:{j}"], valid, seed)
    for label, _ in extra_obs:
        result[("pt", label)] = _finalize(cols[f"pt:{label}"], valid, seed)
    return result


def fd_panel(model: ModelSpec, z0, T: float,
             fs: Sequence[TestFunction], vs: Sequence[Direction],
             n_paths: int, n_steps: int, seed: int,
             eps: Optional[float] = None,
             *, workers: int = 1, batch_size: Optional[int] = None) -> dict:
    """Common-random-number central differences for every (f, v) pair."""
    eps = default_fd_eps(z0) if eps is None else float(eps)
    z = np.asarray(z0, dtype=float)
    grid = TimeGrid(T, n_steps)
    v0 = _zero_direction(model)
    names = [f"fd:{f.name}:{j}" for f in fs for j in range(len(vs))]

    def batch_fn(start, stop):
        out = {}
        ok = None
        for j, v in enumerate(vs):
            shift = np.concatenate([v.v1, v.v2])
            x_up, y_up = split_point(model, z + eps * shift)
            x_dn, y_dn = split_point(model, z - eps * shift)
            up = _simulate(model, x_up, y_up, v0, grid, seed, start, stop)
            dn = _simulate(model, x_dn, y_dn, v0, grid, seed, start, stop)
            good = up.valid & dn.valid
            ok = good if ok is None else (ok & good)
            for f in fs:
                f_up = np.asarray(f.eval(up.z_final), dtype=float)
                f_dn = np.asarray(f.eval(dn.z_final), dtype=float)
                out[f"fd:{f.name}:{j}"] = (f_up - f_dn) / (2.0 * eps)
        return out, ok

    cols, valid = run_batches(n_paths, names, batch_fn, workers, batch_size)
    return {
        ("grad_fd", f.name, j): _finalize(cols[f"fd:{f.name}:{j}"], valid, seed)
        for f in fs
        for j in range(len(vs))
    }
