"""Verdicts on the quantitative bounds: gradient estimates, moment inequalities,
the intrinsic-distance upper bound, and the Harnack inequality.

The bounds assert existence of constants, so verification is two-grid: a constant
is fitted as the maximum normalized ratio on a calibration grid, then a disjoint
holdout grid must stay below 1.2x the fit plus statistical tolerance.  The
intrinsic distance is never computed exactly; only a constructive subunit-curve
upper bound is used, which makes a detected Harnack violation meaningful while
satisfaction is consistent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .estimators import (
    bismut_panel,
    estimate_lq_moment,
    estimate_negative_moment,
    estimate_pt,
    lq_moment_rhs,
    split_point,
)
from .models import Direction, ModelKind, ModelSpec, TestFunction
from .paths import TimeGrid, simulate_basic_batch, simulate_extended_batch
from .rng import PathStreams, derive_seed

__all__ = [
    "McParams",
    "BoundCheckVerdict",
    "RatioPoint",
    "BoundCheckReport",
    "RhoUpperBound",
    "HarnackResult",
    "check_a5",
    "check_a6",
    "check_lemma31",
    "check_lemma_ll",
    "rho_upper_bound",
    "euclidean_distance",
    "check_harnack",
    "check_harnack_suite",
    "xi_moment_growth_rate",
    "check_xi_moment_bound",
    "IntegrabilityDiagnostic",
    "integrability_diagnostic",
    "build_report",
    "SuiteReport",
    "DEFAULT_CALIBRATION_GRID",
    "DEFAULT_HOLDOUT_GRID",
    "HOLDOUT_HEADROOM",
]

# a holdout ratio may exceed the calibration fit by 20% plus statistical tolerance
HOLDOUT_HEADROOM = 1.2

DEFAULT_CALIBRATION_GRID = tuple((T, x) for T in (0.25, 1.0, 4.0) for x in (0.0, 1.0, 2.0))
DEFAULT_HOLDOUT_GRID = tuple((T, x) for T in (0.5, 2.0) for x in (0.5, 1.5))


@dataclass(frozen=True)
class McParams:
    """Monte Carlo effort shared by the checks."""

    n_paths: int
    n_steps: int
    seed: int
    workers: int = 1


class BoundCheckVerdict(enum.Enum):
    BOUNDED_CONSTANT_FOUND = "BoundedConstantFound"
    VIOLATED = "Violated"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class RatioPoint:
    """One normalized ratio with the statistical tolerance of its estimate."""

    label: str
    phase: str            # "calibration" | "holdout" | "check"
    ratio: float
    tolerance: float
    T: float
    z0: tuple
    v: tuple = ()
    f_name: str = ""
    seed: int = 0
    n_steps: int = 0


@dataclass
class BoundCheckReport:
    inequality_id: str    # "A5" | "A6" | "Lemma31" | "LemmaLL" | "A8"
    points: list[RatioPoint] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    fitted_constant: float = float("nan")
    verdict: BoundCheckVerdict = BoundCheckVerdict.INCONCLUSIVE

    @property
    def ratios(self) -> list[float]:
        return [p.ratio for p in self.points]

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.points else float("nan")

    def summary_line(self) -> str:
        return (
            f"{self.inequality_id}: {self.verdict.value} "
            f"(fitted={self.fitted_constant:.4g}, max_ratio={self.max_ratio:.4g}, "
            f"points={len(self.points)}, skipped={len(self.skipped)})"
        )


def _two_grid_verdict(report: BoundCheckReport, calibration: list[RatioPoint],
                      holdout: list[RatioPoint]) -> None:
    """Fit the constant on the calibration points, test boundedness on the holdout."""
    if not calibration:
        report.verdict = BoundCheckVerdict.INCONCLUSIVE
        return
    fitted = max(p.ratio for p in calibration)
    report.fitted_constant = fitted
    bad = [p for p in holdout
           if p.ratio > HOLDOUT_HEADROOM * fitted + p.tolerance]
    if bad:
        report.verdict = BoundCheckVerdict.VIOLATED
    else:
        report.verdict = BoundCheckVerdict.BOUNDED_CONSTANT_FOUND


def _abs_power_obs(f: TestFunction, p: float) -> Callable:
    return lambda z: np.abs(np.asarray(f.eval(z), dtype=float)) ** p


def _square_obs(f: TestFunction) -> Callable:
    return lambda z: np.asarray(f.eval(z), dtype=float) ** 2


def _a5_rate(v: Direction, T: float, x: np.ndarray, l: float) -> float:
    r2 = float(np.dot(x, x))
    n1 = float(np.linalg.norm(v.v1))
    n2 = float(np.linalg.norm(v.v2))
    return n1 / math.sqrt(T) + n2 / math.sqrt(T * (r2 + T) ** l)


def check_a5(model: ModelSpec, p: float, f_suite: Sequence[TestFunction],
             mc: McParams,
             calibration: Sequence[tuple[float, float]] = DEFAULT_CALIBRATION_GRID,
             holdout: Sequence[tuple[float, float]] = DEFAULT_HOLDOUT_GRID,
             ) -> BoundCheckReport:
    """Two-grid boundedness of |grad_v P_T f| / [(P_T|f|^p)^{1/p} * rate(v, T, x)].

    The rate factor is |v1|/sqrt(T) + |v2|/sqrt(T (|x|^2+T)^l), the claimed decay
    for models comparable to |x|^l.  Grid points are (T, x) with y = 0.
    """
    if model.power_params is None:
        raise ValueError("the gradient-rate check needs a power-law comparable model")
    if p <= 1:
        raise ValueError("p must exceed 1")
    l = model.power_params.l
    report = BoundCheckReport(inequality_id="A5")
    vs = [Direction(np.eye(model.m)[0], np.zeros(model.d)),
          Direction(np.zeros(model.m), np.eye(model.d)[0])]

    phases = [("calibration", calibration), ("holdout", holdout)]
    collected = {"calibration": [], "holdout": []}
    for phase, grid_points in phases:
        for (T, x) in grid_points:
            z0 = np.zeros(model.m + model.d)
            z0[0] = x
            seed = derive_seed(mc.seed, f"a5:{phase}:{T}:{x}")
            panel = bismut_panel(
                model, z0, T, f_suite, vs, mc.n_paths, mc.n_steps, seed,
                extra_obs=[(f.name, _abs_power_obs(f, p)) for f in f_suite],
                workers=mc.workers,
            )
            for f in f_suite:
                denom_est = panel[("pt", f.name)]
                if denom_est.mean <= 4.0 * denom_est.stderr:
                    report.skipped.append(
                        f"{phase} T={T} x={x} f={f.name}: denominator indistinguishable from 0"
                    )
                    continue
                denom = denom_est.mean ** (1.0 / p)
                for j, v in enumerate(vs):
                    grad = panel[("grad", f.name, j)]
                    rate = _a5_rate(v, T, z0[: model.m], l)
                    ratio = abs(grad.mean) / (denom * rate)
                    tol = (4.0 * grad.stderr) / (denom * rate) + ratio * (
                        4.0 * denom_est.stderr / (p * denom_est.mean)
                    )
                    pt = RatioPoint(
                        label=f"T={T},x={x},f={f.name},v={j}", phase=phase,
                        ratio=ratio, tolerance=tol, T=T, z0=tuple(z0),
                        v=(tuple(v.v1), tuple(v.v2)), f_name=f.name,
                        seed=seed, n_steps=mc.n_steps,
                    )
                    report.points.append(pt)
                    collected[phase].append(pt)
    _two_grid_verdict(report, collected["calibration"], collected["holdout"])
    return report


def check_a6(model: ModelSpec, f_suite: Sequence[TestFunction], mc: McParams,
             calibration: Sequence[tuple[float, float]] = DEFAULT_CALIBRATION_GRID,
             holdout: Sequence[tuple[float, float]] = DEFAULT_HOLDOUT_GRID,
             ) -> BoundCheckReport:
    """Two-grid boundedness of Gamma_1(P_T f)(z0) * T / P_T f^2 (z0).

    The square field of P_T f is assembled from directional weight-gradient
    estimates along the m + d coordinate directions, with the y-block contracted
    against sigma(x0)^*.
    """
    report = BoundCheckReport(inequality_id="A6")
    m, d = model.m, model.d
    vs = [Direction(np.eye(m)[i], np.zeros(d)) for i in range(m)]
    vs += [Direction(np.zeros(m), np.eye(d)[jj]) for jj in range(d)]

    phases = [("calibration", calibration), ("holdout", holdout)]
    collected = {"calibration": [], "holdout": []}
    for phase, grid_points in phases:
        for (T, x) in grid_points:
            z0 = np.zeros(m + d)
            z0[0] = x
            seed = derive_seed(mc.seed, f"a6:{phase}:{T}:{x}")
            panel = bismut_panel(
                model, z0, T, f_suite, vs, mc.n_paths, mc.n_steps, seed,
                extra_obs=[(f.name, _square_obs(f)) for f in f_suite],
                workers=mc.workers,
            )
            sigma_x0 = np.asarray(model.sigma(z0[:m]))
            for f in f_suite:
                denom_est = panel[("pt", f.name)]
                if denom_est.mean <= 4.0 * denom_est.stderr:
                    report.skipped.append(
                        f"{phase} T={T} x={x} f={f.name}: P_T f^2 indistinguishable from 0"
                    )
                    continue
                gx = np.array([panel[("grad", f.name, i)].mean for i in range(m)])
                gx_se = np.array([panel[("grad", f.name, i)].stderr for i in range(m)])
                gy = np.array([panel[("grad", f.name, m + jj)].mean for jj in range(d)])
                gy_se = np.array([panel[("grad", f.name, m + jj)].stderr for jj in range(d)])
                sty = sigma_x0.T @ gy
                gamma_hat = float(np.sum(gx**2) + np.sum(sty**2))
                # first-order error: d(g^2) = 2|g| dg, y-block through sigma^T
                dgamma = float(
                    2.0 * np.sum(np.abs(gx) * 4.0 * gx_se)
                    + 2.0 * np.sum(np.abs(sty) * (np.abs(sigma_x0.T) @ (4.0 * gy_se)))
                )
                ratio = gamma_hat * T / denom_est.mean
                tol = dgamma * T / denom_est.mean + ratio * (
                    4.0 * denom_est.stderr / denom_est.mean
                )
                pt = RatioPoint(
                    label=f"T={T},x={x},f={f.name}", phase=phase,
                    ratio=ratio, tolerance=tol, T=T, z0=tuple(z0),
                    f_name=f.name, seed=seed, n_steps=mc.n_steps,
                )
                report.points.append(pt)
                collected[phase].append(pt)
    _two_grid_verdict(report, collected["calibration"], collected["holdout"])
    return report


def check_lemma31(mc: McParams, m: int = 1, n_exp: float = 1.0, alpha: float = 1.0,
                  calibration: Sequence[tuple[float, float]] = DEFAULT_CALIBRATION_GRID,
                  holdout: Sequence[tuple[float, float]] = DEFAULT_HOLDOUT_GRID,
                  ) -> BoundCheckReport:
    """Two-grid boundedness of E(int |x+B|^{2n})^{-alpha} * T^alpha (|x|^2+T)^{alpha n}."""
    report = BoundCheckReport(inequality_id="Lemma31")
    phases = [("calibration", calibration), ("holdout", holdout)]
    collected = {"calibration": [], "holdout": []}
    for phase, grid_points in phases:
        for (T, x) in grid_points:
            seed = derive_seed(mc.seed, f"lemma31:{phase}:{T}:{x}")
            xvec = np.zeros(m)
            xvec[0] = x
            est = estimate_negative_moment(
                m, xvec, T, n_exp, alpha, mc.n_paths, mc.n_steps, seed,
                workers=mc.workers,
            )
            normalizer = T**alpha * (x**2 + T) ** (alpha * n_exp)
            pt = RatioPoint(
                label=f"T={T},x={x}", phase=phase,
                ratio=est.mean * normalizer,
                tolerance=4.0 * est.stderr * normalizer,
                T=T, z0=(x,), seed=seed, n_steps=mc.n_steps,
            )
            report.points.append(pt)
            collected[phase].append(pt)
    _two_grid_verdict(report, collected["calibration"], collected["holdout"])
    return report


DEFAULT_LQ_CASES = (
    ("constant_unit", 2.0, {}),
    ("constant_unit", 4.0, {}),
    ("adapted_cos", 4.0, {}),
    ("sigma_row", 2.0, {"l": 1.0, "x": 1.0}),
)


def check_lemma_ll(mc: McParams, T: float = 1.0,
                   cases: Sequence[tuple[str, float, dict]] = DEFAULT_LQ_CASES,
                   ) -> BoundCheckReport:
    """LHS/RHS of the stochastic-integral moment inequality on the integrand catalogue.

    Every ratio must stay below 1 within statistical tolerance; the inequality is
    an equality for q = 2 (Ito isometry), which pins the ratio near 1 there.
    """
    report = BoundCheckReport(inequality_id="LemmaLL")
    points = []
    for name, q, kwargs in cases:
        seed = derive_seed(mc.seed, f"lemma_ll:{name}:{q}")
        lhs = estimate_lq_moment(name, q, T, mc.n_paths, mc.n_steps, seed,
                                 workers=mc.workers, **kwargs)
        rhs = lq_moment_rhs(name, q, T, **kwargs)
        pt = RatioPoint(
            label=f"{name},q={q}", phase="check",
            ratio=lhs.mean / rhs, tolerance=4.0 * lhs.stderr / rhs,
            T=T, z0=(), f_name=name, seed=seed, n_steps=mc.n_steps,
        )
        report.points.append(pt)
        points.append(pt)
    report.fitted_constant = max(p.ratio for p in points)
    violated = [p for p in points if p.ratio > 1.0 + p.tolerance]
    report.verdict = (BoundCheckVerdict.VIOLATED if violated
                      else BoundCheckVerdict.BOUNDED_CONSTANT_FOUND)
    return report


# ---------------------------------------------------------------------------
# Intrinsic distance upper bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoUpperBound:
    z: tuple
    z_prime: tuple
    bound: float
    waypoint: Optional[float]       # signed x* of the y-move, None when no y-move
    segment_costs: tuple


def _golden_min(fn: Callable[[float], float], lo: float, hi: float,
                tol: float = 1e-12, max_iter: int = 200) -> tuple[float, float]:
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    xs = (a + b) / 2.0
    return xs, fn(xs)


def rho_upper_bound(model: ModelSpec, z, z_prime,
                    search_tol: float = 1e-12,
                    search_iters: int = 200) -> RhoUpperBound:
    """Constructive subunit-curve upper bound on the intrinsic distance (m = d = 1).

    The curve family has three segments: an x-move to a waypoint x* (unit cost per
    unit length), a y-move at fixed x* (cost |dy| / |x*|^l), and an x-move to the
    target.  The waypoint is optimized by golden-section search on each sign of
    x*, with the two endpoints always evaluated exactly; every member of the
    family is subunit, so the minimum is an upper bound.
    """
    if model.power_params is None or model.m != 1 or model.d != 1:
        raise ValueError("the subunit-curve family is built for m = d = 1 power-law models")
    l = model.power_params.l
    z = tuple(float(c) for c in np.atleast_1d(np.asarray(z, dtype=float)))
    z_prime = tuple(float(c) for c in np.atleast_1d(np.asarray(z_prime, dtype=float)))
    x, y = z
    xp, yp = z_prime
    dy = abs(yp - y)

    if dy == 0.0:
        return RhoUpperBound(z, z_prime, abs(x - xp), None, (abs(x - xp), 0.0, 0.0))

    def cost(s_signed: float) -> float:
        return abs(x - s_signed) + dy / abs(s_signed) ** l + abs(s_signed - xp)

    hi = max(abs(x), abs(xp), (l * dy) ** (1.0 / (l + 1.0)), 1.0) + 1.0
    lo = 1e-9
    best_s, best_c = None, math.inf
    for sign in (+1.0, -1.0):
        s, c = _golden_min(lambda s: cost(sign * s), lo, hi,
                           tol=search_tol, max_iter=search_iters)
        if c < best_c:
            best_s, best_c = sign * s, c
    for s in (x, xp):  # exact endpoint waypoints (zero-length first or last segment)
        if s != 0.0 and cost(s) < best_c:
            best_s, best_c = s, cost(s)
    return RhoUpperBound(
        z, z_prime, best_c, best_s,
        (abs(x - best_s), dy / abs(best_s) ** l, abs(best_s - xp)),
    )


def euclidean_distance(z, z_prime) -> float:
    """Exact intrinsic distance of the non-degenerate sigma = I model."""
    return float(np.linalg.norm(np.asarray(z, dtype=float) - np.asarray(z_prime, dtype=float)))


# ---------------------------------------------------------------------------
# Harnack inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarnackResult:
    z: tuple
    z_prime: tuple
    lhs: float
    rhs: float
    band: float
    rho: float
    constant: float
    verdict: str       # "holds" | "violated" | "inconclusive"


def _assert_nonnegative(model: ModelSpec, f: TestFunction, z0, T: float, seed: int) -> None:
    """Sampling check that the observable is nonnegative on reachable states."""
    x0, y0 = split_point(model, z0)
    grid = TimeGrid(T, max(2, 64))
    idx = np.arange(512, dtype=np.int64)
    v0 = Direction(np.zeros(model.m), np.zeros(model.d))
    if model.kind is ModelKind.BASIC:
        batch = simulate_basic_batch(model, x0, y0, v0, grid, seed, idx)
    else:
        batch = simulate_extended_batch(model, x0, y0, v0, grid, seed, idx)
    vals = np.asarray(f.eval(batch.z_final), dtype=float)
    if vals.min() < 0.0:
        raise ValueError(f"observable {f.name!r} is negative on sampled states")


def check_harnack(model: ModelSpec, T: float, z, z_prime, f: TestFunction,
                  constant: float, mc: McParams,
                  rho: Optional[float] = None) -> HarnackResult:
    """Test P f(z') <= P f(z) + C rho(z, z') sqrt(P f^2 (z')) with 4-sigma bands.

    ``rho`` defaults to the subunit-curve upper bound (power-law models) or the
    Euclidean distance (constant identity).  The same derived seed drives the
    estimates at both base points, so the z = z' case holds with exact equality.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z_prime = np.atleast_1d(np.asarray(z_prime, dtype=float))
    label = f"harnack:{tuple(z)}:{tuple(z_prime)}:{f.name}:{T}"
    seed = derive_seed(mc.seed, label)
    _assert_nonnegative(model, f, z_prime, T, derive_seed(mc.seed, label + ":probe"))

    if rho is None:
        if model.name.startswith("constant_identity"):
            rho = euclidean_distance(z, z_prime)
        else:
            rho = rho_upper_bound(model, z, z_prime).bound

    f_sq = TestFunction(name=f.name + "^2", eval=_square_obs(f), bounded=f.bounded)
    p_at_zp = estimate_pt(model, f, z_prime, T, mc.n_paths, mc.n_steps, seed,
                          workers=mc.workers)
    p_at_z = estimate_pt(model, f, z, T, mc.n_paths, mc.n_steps, seed,
                         workers=mc.workers)
    p_sq_zp = estimate_pt(model, f_sq, z_prime, T, mc.n_paths, mc.n_steps, seed,
                          workers=mc.workers)

    if p_sq_zp.mean < 0.0:
        return HarnackResult(tuple(z), tuple(z_prime), p_at_zp.mean, float("nan"),
                             float("nan"), rho, constant, "inconclusive")
    root = math.sqrt(p_sq_zp.mean)
    rhs = p_at_z.mean + constant * rho * root
    root_se = p_sq_zp.stderr / (2.0 * root) if root > 0 else 0.0
    band = 4.0 * math.sqrt(
        p_at_zp.stderr**2 + p_at_z.stderr**2 + (constant * rho * root_se) ** 2
    )
    verdict = "holds" if p_at_zp.mean <= rhs + band else "violated"
    return HarnackResult(tuple(z), tuple(z_prime), p_at_zp.mean, rhs, band, rho,
                         constant, verdict)


def check_harnack_suite(model: ModelSpec, T: float,
                        pairs: Sequence[tuple], f: TestFunction,
                        constant: float, mc: McParams) -> BoundCheckReport:
    """Aggregate Harnack point checks into a two-sided bound report (ratio = lhs/rhs)."""
    report = BoundCheckReport(inequality_id="A8")
    results = []
    for (z, zp) in pairs:
        res = check_harnack(model, T, z, zp, f, constant, mc)
        results.append(res)
        if res.verdict == "inconclusive" or res.rhs == 0.0:
            report.skipped.append(f"{res.z}->{res.z_prime}: inconclusive")
            continue
        report.points.append(RatioPoint(
            label=f"{res.z}->{res.z_prime}", phase="check",
            ratio=res.lhs / res.rhs, tolerance=res.band / abs(res.rhs),
            T=T, z0=res.z, v=res.z_prime, f_name=f.name,
            seed=mc.seed, n_steps=mc.n_steps,
        ))
    if not report.points:
        report.verdict = BoundCheckVerdict.INCONCLUSIVE
        return report
    report.fitted_constant = max(p.ratio for p in report.points)
    violated = any(r.verdict == "violated" for r in results)
    report.verdict = (BoundCheckVerdict.VIOLATED if violated
                      else BoundCheckVerdict.BOUNDED_CONSTANT_FOUND)
    return report


# ---------------------------------------------------------------------------
# Auxiliary-process moment growth
# ---------------------------------------------------------------------------

def xi_moment_growth_rate(model: ModelSpec) -> Optional[float]:
    """Growth constant for E|xi_t|^2 <= (T-t) (|v1|^2/T) e^{Ct} from declared bounds.

    C = 2 sup||grad b1|| + m (sup||grad sigma1||)^2; None when bounds are missing
    (the check is then skipped and logged by the caller).
    """
    bounds = model.derivative_bounds
    if "grad_b1" not in bounds or "grad_sigma1" not in bounds:
        return None
    return 2.0 * bounds["grad_b1"] + model.m * bounds["grad_sigma1"] ** 2


def check_xi_moment_bound(model: ModelSpec, x0, v1, T: float, mc: McParams,
                          ) -> tuple[Optional[bool], float]:
    """Sample-mean check of E|xi_t|^2 <= (T-t)(|v1|^2/T) e^{Ct} at every grid node.

    Returns (ok, worst_excess); ok is None when the model declares no derivative
    bounds.  The bound is tested up to five standard errors per node.
    """
    growth = xi_moment_growth_rate(model)
    if growth is None:
        return None, float("nan")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    grid = TimeGrid(T, mc.n_steps)
    v = Direction(v1, np.zeros(model.d))
    n = grid.n_steps

    sum_sq = np.zeros(n + 1)
    sum_quad = np.zeros(n + 1)
    total = 0
    chunk = 4096
    for start in range(0, mc.n_paths, chunk):
        stop = min(start + chunk, mc.n_paths)
        idx = np.arange(start, stop, dtype=np.int64)
        batch = simulate_extended_batch(
            model, x0, np.zeros(model.d), v, grid, mc.seed, idx, record_xi=True
        )
        sq = np.sum(batch.xi_path**2, axis=2)   # (P, n+1)
        sum_sq += sq.sum(axis=0)
        sum_quad += (sq**2).sum(axis=0)
        total += len(idx)

    mean_sq = sum_sq / total
    var = np.maximum(sum_quad / total - mean_sq**2, 0.0)
    se = np.sqrt(var / total)
    times = grid.times()
    v1_sq = float(np.dot(v1, v1))
    bound = (T - times) * (v1_sq / T) * np.exp(growth * times)
    excess = mean_sq - (bound + 5.0 * se)
    return bool(np.all(excess <= 0.0)), float(excess.max())


# ---------------------------------------------------------------------------
# Optional diagnostic for the standing integrability assumption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegrabilityDiagnostic:
    """MC probe of E ||Q_T^{-1}||^2 int (||grad sigma||^4 + ||sigma||^4 + 1) dt.

    The integrand can be heavy-tailed near degeneracy, so this is a diagnostic
    with a tail warning, not an acceptance quantity.
    """

    mean: float
    stderr: float
    max_over_mean: float
    heavy_tail_warning: bool


def integrability_diagnostic(model: ModelSpec, z0, T: float, mc: McParams,
                             tail_factor: float = 100.0) -> IntegrabilityDiagnostic:
    """Sample the integrability functional for a power-law basic model."""
    if not model.scalar_identity or model.power_params is None:
        raise ValueError("diagnostic implemented for scalar power-law models")
    x0, _ = split_point(model, z0)
    grid = TimeGrid(T, mc.n_steps)
    l = model.power_params.l
    vals = []
    chunk = 8192
    for start in range(0, mc.n_paths, chunk):
        stop = min(start + chunk, mc.n_paths)
        idx = np.arange(start, stop, dtype=np.int64)
        streams = PathStreams(mc.seed)
        dB = streams.fill_normals(idx, (grid.n_steps, model.m)) * math.sqrt(grid.dt)
        nodes = np.concatenate(
            [np.zeros((len(idx), 1, model.m)), np.cumsum(dB, axis=1)], axis=1
        )
        x_left = x0 + nodes[:, : grid.n_steps, :]
        r = np.abs(x_left[..., 0]) if model.m == 1 else np.linalg.norm(x_left, axis=-1)
        sig = np.abs(model.sigma_scalar(x_left))
        grad_norm = l * r ** (l - 1.0)
        q = T * np.mean(sig**2, axis=1)
        integral = T * np.mean(grad_norm**4 + sig**4 + 1.0, axis=1)
        vals.append(integral / q**2)
    v = np.concatenate(vals)
    mean = float(v.mean())
    stderr = float(v.std(ddof=1) / math.sqrt(len(v)))
    ratio = float(v.max() / mean) if mean > 0 else float("inf")
    return IntegrabilityDiagnostic(
        mean=mean, stderr=stderr, max_over_mean=ratio,
        heavy_tail_warning=bool(ratio > tail_factor),
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class SuiteReport:
    checks: list

    @property
    def all_passed(self) -> bool:
        return all(
            c.verdict is not BoundCheckVerdict.VIOLATED for c in self.checks
        )

    @property
    def exit_code(self) -> int:
        return 0 if self.all_passed else 1

    def summary_lines(self) -> list[str]:
        return [c.summary_line() for c in self.checks]

    def to_markdown(self) -> str:
        lines = ["# Bound verification report", ""]
        if not self.checks:
            lines.append("No checks were run.")
            return "\n".join(lines) + "\n"
        for c in self.checks:
            marker = "**VIOLATED**" if c.verdict is BoundCheckVerdict.VIOLATED else c.verdict.value
            lines.append(f"## {c.inequality_id}: {marker}")
            lines.append("")
            lines.append(f"- fitted constant: {c.fitted_constant!r}")
            lines.append(f"- max ratio: {c.max_ratio!r}")
            lines.append("")
            lines.append("| point | phase | ratio | tolerance |")
            lines.append("|---|---|---|---|")
            for pnt in c.points:
                lines.append(f"| {pnt.label} | {pnt.phase} | {pnt.ratio!r} | {pnt.tolerance!r} |")
            for s in c.skipped:
                lines.append(f"- skipped: {s}")
            lines.append("")
        return "\n".join(lines) + "\n"


def build_report(checks: Sequence[BoundCheckReport]) -> SuiteReport:
    """Aggregate check reports; exit status is nonzero iff any check is Violated."""
    return SuiteReport(checks=list(checks))
