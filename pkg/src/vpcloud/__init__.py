"""Repulsive Vlasov-Poisson particle simulator and decay-rate verification harness."""

from .core import (
    DimensionConstants,
    Ensemble,
    SamplerSpec,
    SimulationError,
    rescale_to_moment,
    sample_initial,
    total_charge,
    transported_moment,
    unit_ball_volume,
)
from .field import (
    FieldSample,
    ProbeSpec,
    Softening,
    field_at_points,
    field_gradient_sup,
    kinetic_energy,
    potential_energy,
    self_consistent_field,
    sup_field_estimate,
)
from .dynamics import (
    BlowUpError,
    DiagnosticsRecord,
    RunResult,
    TimeSchedule,
    TrajectoryState,
    max_translated_radius,
    run,
    step_leapfrog,
    translated_positions,
)
from .diagnostics import (
    DepositGrid,
    GridSpec,
    LimitingProfiles,
    RateFit,
    current_density,
    deposit_density,
    fit_rate,
    limiting_field,
    profile_residual_density,
    profile_residual_field,
    scattering_residual,
    velocity_marginal,
)
from .config import GridConfig, RunConfig, from_ini, make_config, to_ini

__version__ = "0.1.0"
