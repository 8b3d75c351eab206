"""Coefficient fields of the degenerate diffusion, its square field, and test observables.

The basic model is the system

    dX_t = dB_t            (X in R^m),
    dY_t = sigma(X_t) dBt_t  (Y in R^d),

whose generator is (1/2)(Delta_x + sum_jk (sigma sigma^*)_jk d_yj d_yk).  The extended
model replaces the X-equation by a uniformly elliptic diffusion and adds drifts:

    dX_t = sigma1(X_t) dB_t + b1(X_t) dt,
    dY_t = sigma2(X_t) dBt_t + b2(X_t) dt.

Coefficient closures are vectorized: they accept points of shape (..., m) and return
(..., d, d) matrices (or (...,) scalars for the scalar-times-identity fast forms).
Directional derivatives accept a direction of shape (m,) or broadcastable (..., m).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ModelKind",
    "PowerParams",
    "Direction",
    "ModelSpec",
    "TestFunction",
    "make_power_law_model",
    "make_constant_identity_model",
    "make_extended_demo_model",
    "as_extended",
    "builtin_model",
    "BUILTIN_MODELS",
    "observable",
    "bounded_suite",
    "crosscheck_suite",
    "TEST_FUNCTION_NAMES",
    "gamma1",
    "spectral_norm",
    "power_comparability_margins",
]

Array = np.ndarray


class ModelKind(enum.Enum):
    BASIC = "basic"
    EXTENDED = "extended"


@dataclass(frozen=True)
class PowerParams:
    """Comparability constants: a*|x|^l <= ||sigma(x)|| and ||sigma|| + ||grad sigma||*|x| <= b*|x|^l."""

    a: float
    b: float
    l: float


@dataclass(frozen=True)
class Direction:
    """Differentiation direction v = (v1, v2) in R^m x R^d.  Zero is legal."""

    v1: Array
    v2: Array

    @staticmethod
    def make(v1, v2) -> "Direction":
        a1 = np.atleast_1d(np.asarray(v1, dtype=float))
        a2 = np.atleast_1d(np.asarray(v2, dtype=float))
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise ValueError("direction entries must be finite")
        return Direction(a1, a2)

    def plus(self, other: "Direction") -> "Direction":
        return Direction(self.v1 + other.v1, self.v2 + other.v2)


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient fields and declared structural constants of one diffusion model.

    ``sigma``/``grad_sigma`` always refer to the diffusion matrix of the Y-equation
    (sigma2 when kind is EXTENDED).  When the matrix is scalar-times-identity the
    ``*_scalar`` closures are set and simulation uses the cheaper scalar kernel.
    """

    m: int
    d: int
    kind: ModelKind
    sigma: Callable[[Array], Array]
    grad_sigma: Callable[[Array, Array], Array]
    name: str = "custom"
    sigma_scalar: Optional[Callable[[Array], Array]] = None
    grad_sigma_scalar: Optional[Callable[[Array, Array], Array]] = None
    power_params: Optional[PowerParams] = None
    # extended-only coefficient fields
    sigma1: Optional[Callable[[Array], Array]] = None
    grad_sigma1: Optional[Callable[[Array, Array], Array]] = None
    b1: Optional[Callable[[Array], Array]] = None
    grad_b1: Optional[Callable[[Array, Array], Array]] = None
    b2: Optional[Callable[[Array], Array]] = None
    grad_b2: Optional[Callable[[Array, Array], Array]] = None
    sigma1_inverse_bound: Optional[float] = None
    # declared sup-norms of coefficient derivatives, for the auxiliary-process
    # moment check: keys "grad_sigma1", "grad_b1", "grad_b2"
    derivative_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError("dimensions m and d must be positive")
        if self.kind is ModelKind.EXTENDED:
            missing = [n for n in ("sigma1", "grad_sigma1", "b1", "grad_b1", "b2", "grad_b2")
                       if getattr(self, n) is None]
            if missing:
                raise ValueError(f"extended model missing coefficients: {missing}")

    @property
    def scalar_identity(self) -> bool:
        return self.sigma_scalar is not None


def _identity_lift(scalar_fn, d):
    """Lift a scalar field s(x) to the matrix field s(x) * I_d."""
    eye = np.eye(d)

    def mat(x):
        return np.asarray(scalar_fn(x))[..., None, None] * eye

    return mat


def _identity_lift_grad(dscalar_fn, d):
    eye = np.eye(d)

    def dmat(x, v):
        return np.asarray(dscalar_fn(x, v))[..., None, None] * eye

    return dmat


def _dot_last(x, v):
    """<x, v> over the last axis with v of shape (m,) or broadcastable (..., m)."""
    return np.sum(np.asarray(x) * np.asarray(v), axis=-1)


def make_power_law_model(m: int, d: int, l: float) -> ModelSpec:
    """Canonical degenerate model with sigma(x) comparable to |x|^l * I.

    For m = 1 and integer l the signed power x^l is used (smooth everywhere); for
    m > 1, or non-integer l with m = 1, sigma(x) = |x|^l * I, which is not C^1 at
    the origin when l = 1 -- the directional derivative there is set to 0.  The
    comparability constants are (a, b) = (1, 1 + l), from the exact identity
    ||sigma(x)|| + ||grad sigma(x)||*|x| = (1 + l)|x|^l.
    """
    if l < 1:
        raise ValueError(f"power exponent must satisfy l >= 1, got {l}")
    l = float(l)
    signed = m == 1 and l.is_integer()

    if signed:
        k = int(l)

        def s(x):
            return np.asarray(x)[..., 0] ** k

        def ds(x, v):
            xx = np.asarray(x)[..., 0]
            vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
            if k == 1:
                return np.broadcast_to(vv, xx.shape).astype(float)
            return k * xx ** (k - 1) * vv

    elif m == 1:
        # non-integer exponent: |x|^l, with grad := 0 at the (measure-zero) origin
        def s(x):
            return np.abs(np.asarray(x)[..., 0]) ** l

        def ds(x, v):
            xx = np.asarray(x)[..., 0]
            vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                out = l * np.abs(xx) ** (l - 1.0) * np.sign(xx) * vv
            return np.where(xx == 0.0, 0.0, out)

    else:
        def s(x):
            return np.linalg.norm(np.asarray(x), axis=-1) ** l

        def ds(x, v):
            xa = np.asarray(x)
            r = np.linalg.norm(xa, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = l * r ** (l - 2.0) * _dot_last(xa, v)
            return np.where(r == 0.0, 0.0, out)

    return ModelSpec(
        m=m,
        d=d,
        kind=ModelKind.BASIC,
        sigma=_identity_lift(s, d),
        grad_sigma=_identity_lift_grad(ds, d),
        sigma_scalar=s,
        grad_sigma_scalar=ds,
        power_params=PowerParams(a=1.0, b=1.0 + l, l=l),
        name=f"power_law(m={m},d={d},l={l:g})",
    )


def make_constant_identity_model(m: int = 1, d: int = 1) -> ModelSpec:
    """Non-degenerate reference model sigma = I: both components are Brownian."""

    def s(x):
        return np.ones(np.asarray(x).shape[:-1])

    def ds(x, v):
        return np.zeros(np.asarray(x).shape[:-1])

    return ModelSpec(
        m=m,
        d=d,
        kind=ModelKind.BASIC,
        sigma=_identity_lift(s, d),
        grad_sigma=_identity_lift_grad(ds, d),
        sigma_scalar=s,
        grad_sigma_scalar=ds,
        name=f"constant_identity(m={m},d={d})",
    )


def as_extended(model: ModelSpec) -> ModelSpec:
    """Embed a basic model into the extended system with sigma1 = I, b1 = b2 = 0.

    The auxiliary process then equals v1*(T-t)/T and the extended weight reduces
    pathwise to the basic one, which the tests exploit as an exact cross-check.
    """
    if model.kind is not ModelKind.BASIC:
        raise ValueError("as_extended expects a basic model")
    m = model.m

    def sigma1(x):
        shape = np.asarray(x).shape[:-1]
        return np.broadcast_to(np.eye(m), shape + (m, m)).copy()

    def zero_mat(x, v=None):
        shape = np.asarray(x).shape[:-1]
        return np.zeros(shape + (m, m))

    def zero_vec_m(x, v=None):
        shape = np.asarray(x).shape[:-1]
        return np.zeros(shape + (m,))

    def zero_vec_d(x, v=None):
        shape = np.asarray(x).shape[:-1]
        return np.zeros(shape + (model.d,))

    return replace(
        model,
        kind=ModelKind.EXTENDED,
        name=model.name + "+extended",
        sigma1=sigma1,
        grad_sigma1=zero_mat,
        b1=zero_vec_m,
        grad_b1=zero_vec_m,
        b2=zero_vec_d,
        grad_b2=zero_vec_d,
        sigma1_inverse_bound=1.0,
        derivative_bounds={"grad_sigma1": 0.0, "grad_b1": 0.0, "grad_b2": 0.0},
    )


def make_extended_demo_model() -> ModelSpec:
    """One-dimensional extended demo: elliptic X with bounded drift, degenerate Y.

        sigma1(x) = 1 + 0.25 tanh(x)   (invertible, ||sigma1^{-1}|| <= 4/3)
        b1(x)     = -0.3 tanh(x)
        sigma2(x) = x                  (degenerate at the origin, exponent 1)
        b2(x)     = 0.5 sin(x)
    """

    def s2(x):
        return np.asarray(x)[..., 0]

    def ds2(x, v):
        vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
        return np.broadcast_to(vv, np.asarray(x).shape[:-1]).astype(float)

    def sigma1(x):
        return (1.0 + 0.25 * np.tanh(np.asarray(x)[..., 0]))[..., None, None]

    def grad_sigma1(x, v):
        xx = np.asarray(x)[..., 0]
        vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
        return (0.25 / np.cosh(xx) ** 2 * vv)[..., None, None]

    def b1(x):
        return -0.3 * np.tanh(np.asarray(x))

    def grad_b1(x, v):
        xx = np.asarray(x)[..., 0]
        vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
        return (-0.3 / np.cosh(xx) ** 2 * vv)[..., None]

    def b2(x):
        return 0.5 * np.sin(np.asarray(x))

    def grad_b2(x, v):
        xx = np.asarray(x)[..., 0]
        vv = np.broadcast_to(np.asarray(v), np.asarray(x).shape)[..., 0]
        return (0.5 * np.cos(xx) * vv)[..., None]

    return ModelSpec(
        m=1,
        d=1,
        kind=ModelKind.EXTENDED,
        sigma=_identity_lift(s2, 1),
        grad_sigma=_identity_lift_grad(ds2, 1),
        sigma_scalar=s2,
        grad_sigma_scalar=ds2,
        power_params=PowerParams(a=1.0, b=2.0, l=1.0),
        name="extended_demo",
        sigma1=sigma1,
        grad_sigma1=grad_sigma1,
        b1=b1,
        grad_b1=grad_b1,
        b2=b2,
        grad_b2=grad_b2,
        sigma1_inverse_bound=4.0 / 3.0,
        derivative_bounds={"grad_sigma1": 0.25, "grad_b1": 0.3, "grad_b2": 0.5},
    )


BUILTIN_MODELS = ("power_law", "constant_identity", "extended_demo")


def builtin_model(name: str, m: int = 1, d: int = 1, l: float = 1.0) -> ModelSpec:
    if name == "power_law":
        return make_power_law_model(m, d, l)
    if name == "constant_identity":
        return make_constant_identity_model(m, d)
    if name == "extended_demo":
        return make_extended_demo_model()
    raise ValueError(f"unknown builtin model {name!r}; choose from {BUILTIN_MODELS}")


# ---------------------------------------------------------------------------
# Test observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Scalar observable f(x, y) with optional analytic gradient and closed forms.

    ``eval``/``grad`` are vectorized over points of shape (..., m+d).  Closed forms
    take (T, x, y) with x, y arrays and are only attached when exact for the model
    the instance was built for.
    """

    name: str
    eval: Callable[[Array], Array]
    grad: Optional[Callable[[Array], Array]] = None
    closed_form_pt: Optional[Callable] = None
    closed_form_grad_pt: Optional[Callable] = None
    bounded: bool = False


def _is_one_dim_power_law(model: Optional[ModelSpec], l: float) -> bool:
    return (
        model is not None
        and model.kind is ModelKind.BASIC
        and model.m == 1
        and model.d == 1
        and model.power_params is not None
        and model.power_params.l == l
        and model.name.startswith("power_law")
    )


def _is_constant_identity(model: Optional[ModelSpec]) -> bool:
    return model is not None and model.name.startswith("constant_identity")


def _gaussian_y_factor(T, x):
    """E exp(-Q_T/2) for Q_T = int_0^T (x+B_t)^2 dt: sech(T)^(1/2) exp(-(x^2/2) tanh T)."""
    return np.cosh(T) ** -0.5 * np.exp(-0.5 * np.asarray(x) ** 2 * np.tanh(T))


def _build_test_function(name: str, model: Optional[ModelSpec]) -> TestFunction:
    m = model.m if model is not None else 1

    if name == "one":
        return TestFunction(
            name="one",
            eval=lambda z: np.ones(np.asarray(z).shape[:-1]),
            grad=lambda z: np.zeros(np.asarray(z).shape),
            closed_form_pt=lambda T, x, y: 1.0,
            closed_form_grad_pt=None,
            bounded=True,
        )

    if name == "sin_x":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., 0] = np.cos(z[..., 0])
            return g

        closed = None
        closed_grad = None
        if m == 1:  # X is Brownian for every basic model, so the heat factor is exact
            if model is None or model.kind is ModelKind.BASIC:
                closed = lambda T, x, y: np.exp(-T / 2.0) * np.sin(np.asarray(x)[..., 0])

                def closed_grad(T, x, y):
                    dx = np.exp(-T / 2.0) * np.cos(np.asarray(x)[..., 0])
                    return np.concatenate([np.atleast_1d(dx), np.zeros(np.asarray(y).shape[-1])])

        return TestFunction(
            name="sin_x",
            eval=lambda z: np.sin(np.asarray(z)[..., 0]),
            grad=grad,
            closed_form_pt=closed,
            closed_form_grad_pt=closed_grad,
            bounded=True,
        )

    if name == "cos_x":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., 0] = -np.sin(z[..., 0])
            return g

        closed = None
        if m == 1 and (model is None or model.kind is ModelKind.BASIC):
            closed = lambda T, x, y: np.exp(-T / 2.0) * np.cos(np.asarray(x)[..., 0])
        return TestFunction(
            name="cos_x",
            eval=lambda z: np.cos(np.asarray(z)[..., 0]),
            grad=grad,
            closed_form_pt=closed,
            bounded=True,
        )

    if name == "sin_y":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., m] = np.cos(z[..., m])
            return g

        closed = None
        closed_grad = None
        if _is_constant_identity(model) and model.m == 1 and model.d == 1:
            closed = lambda T, x, y: np.exp(-T / 2.0) * np.sin(np.asarray(y)[..., 0])
        elif _is_one_dim_power_law(model, l=1.0):
            def closed(T, x, y):
                return np.sin(np.asarray(y)[..., 0]) * _gaussian_y_factor(T, np.asarray(x)[..., 0])

            def closed_grad(T, x, y):
                xx = np.asarray(x)[..., 0]
                yy = np.asarray(y)[..., 0]
                fac = _gaussian_y_factor(T, xx)
                return np.array([-xx * np.tanh(T) * np.sin(yy) * fac, np.cos(yy) * fac])

        return TestFunction(
            name="sin_y",
            eval=lambda z: np.sin(np.asarray(z)[..., m]),
            grad=grad,
            closed_form_pt=closed,
            closed_form_grad_pt=closed_grad,
            bounded=True,
        )

    if name == "tanh_y":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., m] = 1.0 / np.cosh(z[..., m]) ** 2
            return g

        return TestFunction(
            name="tanh_y",
            eval=lambda z: np.tanh(np.asarray(z)[..., m]),
            grad=grad,
            bounded=True,
        )

    if name == "sin_xy":
        return TestFunction(
            name="sin_xy",
            eval=lambda z: np.sin(np.asarray(z)[..., 0] + np.asarray(z)[..., m]),
            grad=lambda z: _sin_xy_grad(z, m),
            bounded=True,
        )

    if name == "y_squared":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., m] = 2.0 * z[..., m]
            return g

        closed = None
        closed_grad = None
        if _is_constant_identity(model) and model.d == 1:
            closed = lambda T, x, y: np.asarray(y)[..., 0] ** 2 + T

            def closed_grad(T, x, y):
                return np.array([0.0] * model.m + [2.0 * np.asarray(y)[..., 0]])
        elif _is_one_dim_power_law(model, l=1.0):
            def closed(T, x, y):
                return np.asarray(y)[..., 0] ** 2 + np.asarray(x)[..., 0] ** 2 * T + T**2 / 2.0

            def closed_grad(T, x, y):
                return np.array([2.0 * np.asarray(x)[..., 0] * T, 2.0 * np.asarray(y)[..., 0]])

        return TestFunction(
            name="y_squared",
            eval=lambda z: np.asarray(z)[..., m] ** 2,
            grad=grad,
            closed_form_pt=closed,
            closed_form_grad_pt=closed_grad,
            bounded=False,
        )

    if name == "x_plus_y":
        # both coordinates are martingales under every basic model: P_T f = f
        def grad(z):
            return np.ones(np.asarray(z).shape)

        closed = None
        closed_grad = None
        if model is None or model.kind is ModelKind.BASIC:
            closed = lambda T, x, y: np.sum(np.asarray(x), axis=-1) + np.sum(np.asarray(y), axis=-1)
            closed_grad = lambda T, x, y: np.ones(np.asarray(x).shape[-1] + np.asarray(y).shape[-1])
        return TestFunction(
            name="x_plus_y",
            eval=lambda z: np.sum(np.asarray(z), axis=-1),
            grad=grad,
            closed_form_pt=closed,
            closed_form_grad_pt=closed_grad,
            bounded=False,
        )

    if name == "one_plus_tanh_y":
        def grad(z):
            z = np.asarray(z)
            g = np.zeros(z.shape)
            g[..., m] = 1.0 / np.cosh(z[..., m]) ** 2
            return g

        return TestFunction(
            name="one_plus_tanh_y",
            eval=lambda z: 1.0 + np.tanh(np.asarray(z)[..., m]),
            grad=grad,
            bounded=True,
        )

    raise ValueError(f"unknown test function {name!r}; choose from {TEST_FUNCTION_NAMES}")


def _sin_xy_grad(z, m):
    z = np.asarray(z)
    g = np.zeros(z.shape)
    c = np.cos(z[..., 0] + z[..., m])
    g[..., 0] = c
    g[..., m] = c
    return g


TEST_FUNCTION_NAMES = (
    "one", "sin_x", "cos_x", "sin_y", "tanh_y", "sin_xy",
    "y_squared", "x_plus_y", "one_plus_tanh_y",
)


def observable(name: str, model: Optional[ModelSpec] = None) -> TestFunction:
    """Builtin observable by name, with closed forms attached when exact for ``model``."""
    return _build_test_function(name, model)


def bounded_suite(model: Optional[ModelSpec] = None) -> list[TestFunction]:
    """Bounded observables used by the gradient-bound and Harnack checks."""
    return [observable(n, model) for n in ("sin_y", "cos_x", "tanh_y", "sin_xy")]


def crosscheck_suite(model: Optional[ModelSpec] = None) -> list[TestFunction]:
    """Mixed observables (bounded and polynomial) for weight vs finite-difference runs."""
    return [observable(n, model) for n in ("sin_x", "sin_y", "y_squared", "x_plus_y")]


# ---------------------------------------------------------------------------
# Square field and comparability diagnostics
# ---------------------------------------------------------------------------

def gamma1(model: ModelSpec, f: TestFunction, z) -> float:
    """Square field |grad_x f|^2 + |sigma(x)^* grad_y f|^2 at a point z = (x, y)."""
    if f.grad is None:
        raise ValueError(
            f"gamma1 needs the analytic gradient of {f.name!r}; supply TestFunction.grad"
        )
    z = np.asarray(z, dtype=float)
    g = np.asarray(f.grad(z), dtype=float)
    gx = g[..., : model.m]
    gy = g[..., model.m:]
    sig = np.asarray(model.sigma(z[..., : model.m]))
    sty = np.einsum("...ji,...j->...i", sig, gy)  # sigma^* grad_y f
    return float(np.sum(gx**2, axis=-1) + np.sum(sty**2, axis=-1))


def spectral_norm(model: ModelSpec, x) -> Array:
    """Operator norm of sigma(x); exact for scalar-times-identity fields."""
    x = np.asarray(x, dtype=float)
    if model.scalar_identity:
        return np.abs(model.sigma_scalar(x))
    return np.linalg.norm(model.sigma(x), ord=2, axis=(-2, -1))


def power_comparability_margins(model: ModelSpec, xs) -> tuple[Array, Array]:
    """Slack in the two comparability inequalities on a grid of points.

    Returns (lower, upper) with lower = ||sigma(x)|| - a|x|^l and
    upper = b|x|^l - (||sigma(x)|| + ||grad sigma(x)|| |x|); both must be >= 0.
    Only available for the built-in power-law family (exact derivative norm).
    """
    if model.power_params is None or not model.scalar_identity:
        raise ValueError("comparability margins need a power-law model")
    p = model.power_params
    xs = np.asarray(xs, dtype=float)
    r = np.abs(xs[..., 0]) if model.m == 1 else np.linalg.norm(xs, axis=-1)
    sig_norm = np.abs(model.sigma_scalar(xs))
    grad_norm = p.l * r ** (p.l - 1.0)  # sup over unit v of ||grad_v sigma||
    lower = sig_norm - p.a * r**p.l
    upper = p.b * r**p.l - (sig_norm + grad_norm * r)
    return lower, upper
