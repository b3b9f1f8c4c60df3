"""Urn and self-exciting point-process models of predictive-policing feedback loops."""

__version__ = "0.1.0"

from .correction import (
    CorrectionKind,
    CorrectionMode,
    MixedRates,
    UnvisitedReported,
    corrected_step_discovered,
    corrected_step_mixed,
    discovered_step,
    horvitz_step_discovered,
    mixed_step,
)
from .deployment import (
    Engine,
    IncidentKind,
    IncidentMode,
    RegionSpec,
    RunLog,
    ScenarioConfig,
    run_scenario,
    run_sepp_scenario,
    run_urn_scenario,
    warmup_history,
)
from .limits import (
    BetaLimit,
    DeterministicMatrix2,
    MixedParams,
    PointMass,
    eq1_limit,
    kappa_form,
    large_kappa_approx,
    mixed_limit,
    renlund_limit,
)
from .pointproc import EmConfig, Event, SeppModel, fit_em, intensity, log_likelihood
from .urn import (
    Bernoulli,
    DecayMode,
    DecayPolicy,
    Deterministic,
    Poisson,
    ReplacementRule,
    UrnState,
    simulate,
    simulate_many,
    step,
)
