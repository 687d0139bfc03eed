"""Quasi-potentials and small-mass limits for damped stochastic wave equations."""
from .action import (
    ActionValue,
    DiscretePath,
    QuasiPotentialReport,
    action_decomposition,
    action_decomposition_residual,
    action_heat,
    action_wave,
    min_action_solve,
    quasipotential_closed_form,
    reversed_optimal_path,
)
from .config import ConfigError, ModelConfig, load_config, parse_config
from .dynamics import (
    ControlSignal,
    TimeGrid,
    TrajectorySample,
    apply_control_map,
    energy_balance,
    integrate_heat,
    integrate_wave,
    sk_compare,
)
from .experiments import ExitRecord, run_exit_mc, run_suite
from .potentials import Family, PotentialSpec, eval_DF, eval_drift_B, eval_F
from .spectral_core import (
    NoiseSpec,
    PhaseState,
    SemigroupDecayEstimate,
    SpectralBasis,
    cmu_quadratic,
    energy_phi,
    estimate_decay,
    gramian_closed_form,
    semigroup_step,
    sobolev_norm_sq,
)

__version__ = "0.1.0"
