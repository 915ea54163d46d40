"""Forward stochastic reachability of LTI systems and capture-probability pursuit planning."""

from .capture import CaptureBox, CaptureEvaluator, box_indicator_ft, capture_probability, feasible
from .errors import (
    AccuracyError,
    InfeasibleTargetError,
    NonConvergenceError,
    ShapeError,
    StepRangeError,
    UnsupportedError,
    ValidationError,
)
from .fsr import (
    FsrSet,
    GridSpec,
    density_at,
    fsr_set,
    fsrpd,
    gaussian_fsrpd,
    iterative_fsrpd_oracle,
    prune_by_support,
    state_cf,
)
from .linsys import LtiSystem, Pursuer, concat_matrix, double_integrator, mean_trajectory, point_mass, pursuer_reach_set
from .mc import ParticleCloud, empirical_capture, empirical_density_grid, simulate, simulate_all
from .planner import (
    OptConfig,
    PursuitProblem,
    ScenarioPlan,
    initial_guess,
    recover_controls,
    solve_prob_b,
    solve_prob_c,
)
from .polytope import Polytope
from .quad import QuadConfig, QuadResult, estimate_truncation, inverse_cf, parseval_functional
from .randvec import DiracLaw, ExponentialLaw, GaussianLaw, UniformLaw
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"
