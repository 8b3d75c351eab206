"""Monte Carlo gradient estimation and inequality verification for Gruschin-type
degenerate diffusion semigroups."""

from .models import (
    Direction,
    ModelKind,
    ModelSpec,
    PowerParams,
    TestFunction,
    as_extended,
    bounded_suite,
    builtin_model,
    crosscheck_suite,
    gamma1,
    make_constant_identity_model,
    make_extended_demo_model,
    make_power_law_model,
    observable,
)
from .paths import (
    PathBatch,
    PathFunctionals,
    TimeGrid,
    simulate_basic,
    simulate_basic_batch,
    simulate_extended,
    simulate_extended_batch,
)
from .rng import PathStreams, RngStream, derive_seed
from .weights import (
    InvalidPathError,
    WeightBreakdown,
    bismut_weight,
    extended_weight,
)
from .estimators import (
    EstimationError,
    MCEstimate,
    estimate_gradient_bismut,
    estimate_gradient_fd,
    estimate_lq_moment,
    estimate_negative_moment,
    estimate_pt,
)

__version__ = "0.1.0"
