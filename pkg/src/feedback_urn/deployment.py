"""Closed-loop daily deployment simulations.

Two engines share one scenario description:

* ``urn`` -- one urn round per day (draw = deployment), optionally with the
  rejection filter on discovered incidents, followed by decay;
* ``sepp`` -- each day an aftershock model is fit by EM to the trailing
  training window, police go to region ``i`` with probability
  ``r_i / sum(r)``, and the day's incidents are appended to the training log
  (discovered incidents pass a Bernoulli(1 - p_visited) filter when
  corrected).

Reps are simulated in fixed blocks, vectorised within a block. Rep ``r`` draws
all its randomness from a generator seeded by ``(master_seed, r)``, so a
rep's trajectory does not depend on how blocks are scheduled.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .correction import CorrectionKind, CorrectionMode, UnvisitedReported
from .errors import ConfigError, DecayModeMismatch
from .pointproc import DEFAULT_OMEGA0, DEFAULT_THETA0, em_batch
from .urn import DecayMode, DecayPolicy

logger = logging.getLogger(__name__)

__all__ = [
    "BLOCK_REPS",
    "Engine",
    "IncidentKind",
    "IncidentMode",
    "RegionSpec",
    "ScenarioConfig",
    "RunLog",
    "rep_rng",
    "run_scenario",
    "run_urn_scenario",
    "run_sepp_scenario",
    "warmup_history",
]

BLOCK_REPS = 50
_THETA_FLOOR = 1e-2


class Engine(str, enum.Enum):
    URN = "urn"
    SEPP = "sepp"


class IncidentKind(str, enum.Enum):
    DISCOVERED_ONLY = "discovered_only"
    MIXED = "mixed"


@dataclass(frozen=True)
class IncidentMode:
    kind: IncidentKind = IncidentKind.DISCOVERED_ONLY
    w_d: float = 1.0
    w_r: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", IncidentKind(self.kind))
        if self.kind is IncidentKind.DISCOVERED_ONLY:
            object.__setattr__(self, "w_d", 1.0)
            object.__setattr__(self, "w_r", 0.0)
        elif min(self.w_d, self.w_r) < 0 or abs(self.w_d + self.w_r - 1) > 1e-12:
            raise ConfigError(f"incident weights must be >= 0 and sum to 1, got {self.w_d}, {self.w_r}")

    @property
    def mixed(self) -> bool:
        return self.kind is IncidentKind.MIXED


@dataclass(frozen=True)
class RegionSpec:
    label: str
    prior: float
    rate: float


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    regions: tuple[RegionSpec, ...]
    engine: Engine = Engine.URN
    incident_mode: IncidentMode = field(default_factory=IncidentMode)
    correction: CorrectionMode = field(default_factory=CorrectionMode)
    horizon_days: int = 1000
    reps: int = 1000
    decay: DecayPolicy = field(default_factory=lambda: DecayPolicy(0.01))
    training_window_days: int = 180
    warmup_days: int | None = None
    master_seed: int = 0
    unvisited_reported: UnvisitedReported = UnvisitedReported.AS_REPORTED
    warm_start: bool = True
    em_max_iters: int = 20
    em_tolerance: float = 1e-5
    target: float | None = None
    tolerance: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "engine", Engine(self.engine))
        object.__setattr__(self, "unvisited_reported", UnvisitedReported(self.unvisited_reported))
        if len(self.regions) < 2:
            raise ConfigError(f"{self.name}: need at least two regions")
        labels = [r.label for r in self.regions]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"{self.name}: region labels must be unique, got {labels}")
        for r in self.regions:
            if not (math.isfinite(r.rate) and r.rate >= 0 and math.isfinite(r.prior) and r.prior >= 0):
                raise ConfigError(f"{self.name}: region {r.label} needs finite non-negative prior and rate")
        if sum(r.rate for r in self.regions) <= 0:
            raise ConfigError(f"{self.name}: at least one region needs a positive rate")
        if self.horizon_days < 1 or self.reps < 1:
            raise ConfigError(f"{self.name}: horizon_days and reps must be >= 1")
        if self.engine is Engine.URN and sum(r.prior for r in self.regions) <= 0:
            raise ConfigError(f"{self.name}: urn needs a positive total prior mass")
        if self.engine is Engine.SEPP and self.training_window_days < 1:
            raise ConfigError(f"{self.name}: training_window_days must be >= 1")
        if self.warmup_days is not None and self.warmup_days < 0:
            raise ConfigError(f"{self.name}: warmup_days must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"{self.name}: master_seed must be a 64-bit unsigned integer")
        kind = self.correction.kind
        if kind is CorrectionKind.DISCOVERED_REJECTION and self.incident_mode.mixed:
            raise ConfigError(f"{self.name}: mixed incidents need mixed_rejection, not discovered_rejection")
        if kind is CorrectionKind.MIXED_REJECTION:
            if not self.incident_mode.mixed:
                raise ConfigError(f"{self.name}: mixed_rejection needs mixed incidents")
            im = self.incident_mode
            if abs(self.correction.w_d - im.w_d) > 1e-12 or abs(self.correction.w_r - im.w_r) > 1e-12:
                raise ConfigError(f"{self.name}: correction weights must match incident weights")

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.regions])

    @property
    def priors(self) -> np.ndarray:
        return np.array([r.prior for r in self.regions])

    @property
    def true_fraction(self) -> float:
        """Share of crime in region 0: the deployment fraction that meets the policing goal."""
        rates = self.rates
        return float(rates[0] / rates.sum())

    @property
    def corrected(self) -> bool:
        return self.correction.active

    @property
    def warmup(self) -> int:
        return self.training_window_days if self.warmup_days is None else self.warmup_days


@dataclass
class RunLog:
    """Per rep x day records; arrays are shaped ``(reps, days)`` or ``(reps, days, regions)``.

    ``frac_or_prob`` is the region-0 urn fraction after the day's update
    (urn engine) or the region-0 deployment probability used that day
    (sepp engine). ``rates`` holds urn masses or predicted rates.
    """

    scenario: str
    engine: Engine
    reps: np.ndarray
    deployed: np.ndarray
    frac_or_prob: np.ndarray
    rates: np.ndarray
    discovered: np.ndarray
    reported: np.ndarray
    accepted: np.ndarray
    fallbacks: np.ndarray

    @property
    def n_reps(self) -> int:
        return self.deployed.shape[0]

    @property
    def n_days(self) -> int:
        return self.deployed.shape[1]

    @property
    def n_regions(self) -> int:
        return self.rates.shape[2]

    def terminal(self) -> np.ndarray:
        return self.frac_or_prob[:, -1]

    @classmethod
    def concat(cls, logs: list["RunLog"]) -> "RunLog":
        first = logs[0]
        return cls(
            first.scenario,
            first.engine,
            *(np.concatenate([getattr(g, name) for g in logs]) for name in (
                "reps", "deployed", "frac_or_prob", "rates", "discovered", "reported", "accepted", "fallbacks",
            )),
        )


def rep_rng(master_seed: int, rep: int) -> np.random.Generator:
    """Independent stream for rep ``rep`` of a run seeded with ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep,)))


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Region index per row for cumulative weights ``cum`` (rows, R) and uniforms in [0, total)."""
    return (cum[:, :-1] <= u[:, None]).sum(axis=1)


def _urn_block(cfg: ScenarioConfig, rep_ids: np.ndarray) -> RunLog:
    B, H, R = rep_ids.size, cfg.horizon_days, cfg.n_regions
    rates = cfg.rates
    mixed = cfg.incident_mode.mixed
    w_d, w_r = cfg.incident_mode.w_d, cfg.incident_mode.w_r
    binomial = cfg.decay.mode is DecayMode.PER_BALL_BINOMIAL and cfg.decay.p_d > 0
    full_unvisited = mixed and cfg.corrected and cfg.unvisited_reported is UnvisitedReported.FULL

    rngs = [rep_rng(cfg.master_seed, int(r)) for r in rep_ids]
    u_draw = np.empty((B, H))
    u_second = np.empty((B, H))
    disc = np.empty((B, H, R))
    rep = np.zeros((B, H, R))
    for b, g in enumerate(rngs):
        u_draw[b] = g.random(H)
        u_second[b] = g.random(H)
        disc[b] = g.poisson(rates, (H, R))
        if mixed:
            rep[b] = g.poisson(rates, (H, R))

    masses = np.tile(cfg.priors.astype(float), (B, 1))
    rows = np.arange(B)
    deployed = np.empty((B, H), dtype=np.int64)
    frac = np.empty((B, H))
    mass_log = np.empty((B, H, R))
    disc_log = np.zeros((B, H, R))
    accepted = np.ones((B, H), dtype=np.int8)
    keep = 1.0 - cfg.decay.p_d
    for t in range(H):
        cum = np.cumsum(masses, axis=1)
        total = cum[:, -1]
        if np.any(total <= 0):
            raise RuntimeError(f"{cfg.name}: urn emptied on day {t + 1}")
        idx = _pick(cum, u_draw[:, t] * total)
        found = disc[rows, t, idx]
        disc_log[rows, t, idx] = found
        if cfg.corrected:
            acc = _pick(cum, u_second[:, t] * total) != idx
            accepted[:, t] = acc
            found = found * acc
        if mixed:
            if full_unvisited:
                add = rep[:, t].copy()
                add[rows, idx] *= w_r
            else:
                add = w_r * rep[:, t]
            add[rows, idx] += w_d * found
        else:
            add = np.zeros((B, R))
            add[rows, idx] = found
        masses = masses + add
        if binomial:
            counts = _integral(masses, cfg).astype(np.int64)
            masses = np.stack([g.binomial(m, keep) for g, m in zip(rngs, counts)]).astype(float)
        else:
            masses = masses * keep
        deployed[:, t] = idx
        tot = masses.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac[:, t] = masses[:, 0] / tot
        mass_log[:, t] = masses
    return RunLog(
        cfg.name, Engine.URN, rep_ids.copy(), deployed, frac, mass_log, disc_log, rep,
        accepted, np.zeros((B, H), dtype=bool),
    )


def _integral(masses: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    rounded = np.rint(masses)
    if not np.array_equal(rounded, masses):
        raise DecayModeMismatch(f"{cfg.name}: per-ball binomial decay needs integer masses")
    return rounded


def _warmup_counts(cfg: ScenarioConfig, g: np.random.Generator) -> np.ndarray:
    days = cfg.warmup
    if days == 0:
        return np.zeros((0, cfg.n_regions))
    return g.poisson(cfg.priors / days, (days, cfg.n_regions)).astype(float)


def warmup_history(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Synthetic pre-simulation history: daily counts ``(warmup_days, regions)``.

    Region ``r`` gets Poisson(prior_r / warmup_days) incidents per day, so the
    expected totals equal the configured priors.
    """
    return _warmup_counts(cfg, rng)


def _sepp_block(cfg: ScenarioConfig, rep_ids: np.ndarray) -> RunLog:
    B, H, R = rep_ids.size, cfg.horizon_days, cfg.n_regions
    W = cfg.training_window_days
    U = cfg.warmup
    rates = cfg.rates
    mixed = cfg.incident_mode.mixed
    w_d, w_r = cfg.incident_mode.w_d, cfg.incident_mode.w_r

    hist = np.zeros((B, R, U + H))
    u_deploy = np.empty((B, H))
    u_filter = np.empty((B, H))
    truth = np.empty((B, H, R))
    rep = np.zeros((B, H, R))
    for b, r in enumerate(rep_ids):
        g = rep_rng(cfg.master_seed, int(r))
        hist[b, :, :U] = _warmup_counts(cfg, g).T
        u_deploy[b] = g.random(H)
        u_filter[b] = g.random(H)
        truth[b] = g.poisson(rates, (H, R))
        if mixed:
            rep[b] = g.poisson(rates, (H, R))

    rows = np.arange(B)
    deployed = np.empty((B, H), dtype=np.int64)
    prob = np.empty((B, H))
    rate_log = np.empty((B, H, R))
    disc_log = np.zeros((B, H, R))
    accepted = np.ones((B, H), dtype=np.int8)
    fallbacks = np.zeros((B, H), dtype=bool)

    grid = np.arange(W) + 0.5  # window-relative midpoints; prediction at t = W
    mu = np.zeros((B, R))
    theta = np.full(B, DEFAULT_THETA0)
    omega = np.full(B, DEFAULT_OMEGA0)
    fitted = np.zeros(B, dtype=bool)
    last_rates = np.full((B, R), np.nan)

    for t in range(H):
        stop = U + t
        start = stop - W
        window = np.zeros((B, R, W))
        lo = max(start, 0)
        window[:, :, lo - start:] = hist[:, :, lo:stop]
        per_region = window.sum(axis=2)
        has_data = per_region.sum(axis=1) > 0

        default_mu = per_region / W
        if cfg.warm_start:
            mu0 = np.where(fitted[:, None] & (mu > 0), mu, default_mu)
            theta0 = np.where(fitted, np.maximum(theta, _THETA_FLOOR), DEFAULT_THETA0)
            omega0 = np.where(fitted, omega, DEFAULT_OMEGA0)
        else:
            mu0, theta0, omega0 = default_mu, np.full(B, DEFAULT_THETA0), np.full(B, DEFAULT_OMEGA0)

        r_pred = np.full((B, R), np.nan)
        fit_idx = np.flatnonzero(has_data)
        if fit_idx.size:
            m, th, om, *_ = em_batch(
                grid, window[fit_idx], float(W), mu0[fit_idx], theta0[fit_idx], omega0[fit_idx],
                cfg.em_max_iters, cfg.em_tolerance,
            )
            mu[fit_idx], theta[fit_idx], omega[fit_idx] = m, th, om
            fitted[fit_idx] = True
            kernel = np.exp(-om[:, None] * (W - grid)[None, :])
            excite = np.einsum("brn,bn->br", window[fit_idx], kernel)
            r_pred[fit_idx] = m + (th * om)[:, None] * excite

        ok = np.isfinite(r_pred).all(axis=1) & (np.nansum(r_pred, axis=1) > 0)
        fall = ~ok
        if fall.any():
            fallbacks[fall, t] = True
            r_pred[fall] = last_rates[fall]
            logger.debug("%s day %d: %d reps fell back to prior-day rates", cfg.name, t + 1, int(fall.sum()))
        uniform = ~(np.isfinite(r_pred).all(axis=1) & (np.nansum(r_pred, axis=1) > 0))
        r_pred[uniform] = 1.0
        last_rates = r_pred

        p = r_pred / r_pred.sum(axis=1, keepdims=True)
        idx = _pick(np.cumsum(p, axis=1), u_deploy[:, t])
        found = truth[rows, t, idx]
        disc_log[rows, t, idx] = found
        if cfg.corrected:
            acc = u_filter[:, t] < 1.0 - p[rows, idx]
            accepted[:, t] = acc
            found = found * acc
        today = np.zeros((B, R))
        today[rows, idx] = (w_d if mixed else 1.0) * found
        if mixed:
            today += w_r * rep[:, t]
        hist[:, :, U + t] = today

        deployed[:, t] = idx
        prob[:, t] = p[:, 0]
        rate_log[:, t] = r_pred
    return RunLog(cfg.name, Engine.SEPP, rep_ids.copy(), deployed, prob, rate_log, disc_log, rep, accepted, fallbacks)


def _run_block(args) -> RunLog:
    cfg, rep_ids = args
    if cfg.engine is Engine.URN:
        return _urn_block(cfg, rep_ids)
    return _sepp_block(cfg, rep_ids)


def run_scenario(cfg: ScenarioConfig, workers: int = 1, reps: int | None = None, seed: int | None = None) -> RunLog:
    """Simulate every rep of ``cfg``; ``workers > 1`` spreads rep blocks over processes."""
    if reps is not None or seed is not None:
        cfg = replace(cfg, reps=cfg.reps if reps is None else reps, master_seed=cfg.master_seed if seed is None else seed)
    rep_ids = np.arange(cfg.reps)
    blocks = [(cfg, rep_ids[i:i + BLOCK_REPS]) for i in range(0, cfg.reps, BLOCK_REPS)]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, blocks))
    else:
        parts = [_run_block(b) for b in blocks]
    log = RunLog.concat(parts)
    n_fallback = int(log.fallbacks.sum())
    if n_fallback:
        logger.info("%s: %d rep-days used prior-day rates after an empty or failed fit", cfg.name, n_fallback)
    return log


def run_urn_scenario(cfg: ScenarioConfig, workers: int = 1) -> RunLog:
    if cfg.engine is not Engine.URN:
        raise ConfigError(f"{cfg.name}: engine is {cfg.engine.value}, not urn")
    return run_scenario(cfg, workers)


def run_sepp_scenario(cfg: ScenarioConfig, workers: int = 1) -> RunLog:
    if cfg.engine is not Engine.SEPP:
        raise ConfigError(f"{cfg.name}: engine is {cfg.engine.value}, not sepp")
    return run_scenario(cfg, workers)
