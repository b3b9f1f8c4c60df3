"""Self-exciting (aftershock) crime-rate model: intensity, EM fitting, prediction.

Intensity of region ``r``::

    lambda_r(t) = mu_r + sum_{t_i < t} theta * omega * exp(-omega (t - t_i))

``theta`` and ``omega`` are shared by all regions, ``mu_r`` is per region.
Events carry a weight (1 for a single incident, a count for aggregated daily
incidents, a fraction for down-weighted incident classes). Weights act both
as the number of targets at a time point and as the number of sources
exciting later points; events at the same instant do not excite each other.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyWindow, FutureEvent, NonFinite, UnstableModelWarning

__all__ = [
    "Event",
    "SeppModel",
    "EmConfig",
    "FitResult",
    "exp_sums",
    "em_batch",
    "intensity",
    "predict_rates",
    "fit_em",
    "fit_em_result",
    "log_likelihood",
    "generate_events",
    "daily_events",
    "simulate_sepp",
]

DEFAULT_THETA0 = 0.5
DEFAULT_OMEGA0 = 0.1
# Largest omega * (time span) handled in one prefix-sum block.
_BLOCK_EXPONENT = 50.0


@dataclass(frozen=True)
class Event:
    region: int
    time: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.time):
            raise ValueError("event time must be finite")
        if self.region < 0 or self.weight < 0:
            raise ValueError("region index and weight must be non-negative")


@dataclass(frozen=True)
class SeppModel:
    mu: tuple[float, ...]
    theta: float
    omega: float

    def __post_init__(self) -> None:
        mu = tuple(float(m) for m in np.atleast_1d(self.mu))
        if any(not math.isfinite(m) or m < 0 for m in mu):
            raise ValueError(f"background rates must be finite and >= 0, got {mu}")
        if not math.isfinite(self.theta) or self.theta < 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if not math.isfinite(self.omega) or self.omega <= 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "omega", float(self.omega))
        if self.theta >= 1:
            warnings.warn(f"theta={self.theta} >= 1: branching is explosive", UnstableModelWarning, stacklevel=3)

    @property
    def n_regions(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 1000
    rel_tolerance: float = 1e-8
    # (mu0, theta0, omega0); mu0 may be None for "events / window length" per region.
    init: tuple | None = None

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.init is not None:
            mu0, theta0, omega0 = self.init
            if mu0 is not None and np.any(np.asarray(mu0, float) < 0):
                raise ValueError("initial mu must be >= 0")
            if theta0 < 0 or omega0 <= 0:
                raise ValueError("initial theta must be >= 0 and omega > 0")


@dataclass(frozen=True)
class FitResult:
    model: SeppModel
    iterations: int
    converged: bool
    loglik: np.ndarray = field(repr=False)


def exp_sums(times, weights, omega):
    """Excitation sums over strictly earlier points.

    For a shared sorted grid ``times`` (n,), weights ``(..., n)`` and decay
    rates ``omega`` broadcastable to ``weights.shape[:-1]``, returns ``(S, G)``
    with

        S_i = sum_{j<i} w_j exp(-omega (t_i - t_j))
        G_i = sum_{j<i} w_j (t_i - t_j) exp(-omega (t_i - t_j))

    computed as prefix sums in blocks short enough that ``exp(omega * dt)``
    stays finite, carrying the running sums across block boundaries.
    """
    times = np.asarray(times, dtype=float)
    w = np.asarray(weights, dtype=float)
    om = np.asarray(omega, dtype=float)[..., None]
    shape = np.broadcast_shapes(w.shape, om.shape)
    w = np.broadcast_to(w, shape)
    n = times.size
    S = np.empty(shape)
    G = np.empty(shape)
    if n == 0:
        return S, G
    om_max = float(om.max())
    carry_s = np.zeros(shape[:-1] + (1,))
    carry_g = np.zeros(shape[:-1] + (1,))
    s = 0
    while s < n:
        if om_max > 0:
            e = int(np.searchsorted(times, times[s] + _BLOCK_EXPONENT / om_max, side="right"))
        else:
            e = n
        e = max(e, s + 1)
        u = times[s:e] - times[s]
        grow = w[..., s:e] * np.exp(om * u)
        grow_u = grow * u
        c = np.zeros_like(grow)
        d = np.zeros_like(grow)
        np.cumsum(grow[..., :-1], axis=-1, out=c[..., 1:])
        np.cumsum(grow_u[..., :-1], axis=-1, out=d[..., 1:])
        shrink = np.exp(-om * u)
        S[..., s:e] = shrink * (carry_s + c)
        G[..., s:e] = shrink * (carry_g + u * carry_s + u * c - d)
        if e < n:
            gap = times[e] - times[s]
            f = np.exp(-om * gap)
            tot_c = c[..., -1:] + grow[..., -1:]
            tot_d = d[..., -1:] + grow_u[..., -1:]
            carry_g = f * (carry_g + gap * carry_s + gap * tot_c - tot_d)
            carry_s = f * (carry_s + tot_c)
        s = e
    # Rounding in the block differences can leave values a hair below zero.
    np.maximum(G, 0.0, out=G)
    return S, G


def em_batch(
    times,
    weights,
    length: float,
    mu0,
    theta0,
    omega0,
    max_iters: int = 1000,
    rel_tolerance: float = 1e-8,
):
    """Latent-branching EM on a batch of independent datasets sharing a time grid.

    ``weights`` has shape ``(B, R, n)``; ``mu0`` ``(B, R)``; ``theta0`` and
    ``omega0`` ``(B,)``. Each batch element stops updating once its largest
    relative parameter change drops below ``rel_tolerance``.

    Returns ``(mu, theta, omega, iterations, converged, loglik)`` where
    ``loglik`` has shape ``(B, iterations + 1)`` (NaN-padded after a batch
    element stops) and holds the objective at each visited parameter value.
    """
    times = np.asarray(times, dtype=float)
    w = np.asarray(weights, dtype=float)
    B, R, n = w.shape
    mu = np.array(mu0, dtype=float).reshape(B, R).copy()
    theta = np.array(theta0, dtype=float).reshape(B).copy()
    omega = np.array(omega0, dtype=float).reshape(B).copy()
    has = w > 0
    w_total = w.sum(axis=(1, 2))
    region_has = w.sum(axis=2) > 0
    mu[~region_has] = 0.0

    active = w_total > 0
    iterations = np.zeros(B, dtype=int)
    converged = ~active
    trace = np.full((B, max_iters + 1), np.nan)

    def evaluate(idx, mu, theta, omega):
        wi, hi = w[idx], has[idx]
        S, G = exp_sums(times, wi, omega[:, None])
        tw = (theta * omega)[:, None, None]
        lam = mu[:, :, None] + tw * S
        lam = np.where(hi, lam, 1.0)
        inv = wi / lam
        ll = (np.where(hi, wi * np.log(lam), 0.0).sum(axis=(1, 2)) - mu.sum(axis=1) * length - theta * w_total[idx])
        bg = (inv * mu[:, :, None]).sum(axis=2)
        trig = (inv * tw * S).sum(axis=(1, 2))
        gaps = (inv * tw * G).sum(axis=(1, 2))
        return ll, bg, trig, gaps

    for k in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ll, bg, trig, gaps = evaluate(idx, mu[idx], theta[idx], omega[idx])
        trace[idx, k] = ll
        new_mu = bg / length
        with np.errstate(divide="ignore", invalid="ignore"):
            new_theta = trig / w_total[idx]
            new_omega = np.where((trig > 0) & (gaps > 0), trig / gaps, omega[idx])
        if not (np.all(np.isfinite(new_mu)) and np.all(np.isfinite(new_theta)) and np.all(np.isfinite(new_omega))):
            raise NonFinite("EM produced a non-finite parameter")
        tiny = 1e-300
        change = np.maximum.reduce(
            [
                (np.abs(new_mu - mu[idx]) / np.maximum(np.abs(mu[idx]), tiny)).max(axis=1, initial=0.0, where=region_has[idx]),
                np.abs(new_theta - theta[idx]) / np.maximum(theta[idx], tiny),
                np.abs(new_omega - omega[idx]) / np.maximum(omega[idx], tiny),
            ]
        )
        mu[idx] = new_mu
        theta[idx] = new_theta
        omega[idx] = new_omega
        iterations[idx] += 1
        done = change < rel_tolerance
        converged[idx[done]] = True
        active[idx[done]] = False

    ran = np.flatnonzero(iterations > 0)
    if ran.size:
        ll, *_ = evaluate(ran, mu[ran], theta[ran], omega[ran])
        trace[ran, iterations[ran]] = ll
    width = int(iterations.max()) + 1 if B else 1
    return mu, theta, omega, iterations, converged, trace[:, :width]


def _as_events(events: Iterable) -> list[Event]:
    return [e if isinstance(e, Event) else Event(*e) for e in events]


def _grid(events: Sequence[Event], n_regions: int, t0: float):
    """Union time grid (relative to ``t0``) and per-region weights on it."""
    if not events:
        return np.empty(0), np.zeros((n_regions, 0))
    times = np.array([e.time for e in events]) - t0
    regions = np.array([e.region for e in events])
    wts = np.array([e.weight for e in events])
    grid, inverse = np.unique(times, return_inverse=True)
    w = np.zeros((n_regions, grid.size))
    np.add.at(w, (regions, inverse), wts)
    return grid, w


def fit_em_result(
    events: Iterable,
    window: tuple[float, float],
    config: EmConfig | None = None,
    n_regions: int | None = None,
) -> FitResult:
    """Fit an aftershock model to the events inside ``(t_start, t_end]``."""
    config = config or EmConfig()
    t_start, t_end = (float(v) for v in window)
    length = t_end - t_start
    if not length > 0:
        raise EmptyWindow(f"window ({t_start}, {t_end}] is empty")
    events = _as_events(events)
    if n_regions is None:
        n_regions = max((e.region for e in events), default=-1) + 1
    inside = [e for e in events if t_start < e.time <= t_end and e.weight > 0]
    if not inside or n_regions == 0:
        raise EmptyWindow(f"no events in window ({t_start}, {t_end}]")
    grid, w = _grid(inside, n_regions, t_start)

    per_region = w.sum(axis=1)
    mu0, theta0, omega0 = config.init if config.init is not None else (None, DEFAULT_THETA0, DEFAULT_OMEGA0)
    mu0 = per_region / length if mu0 is None else np.broadcast_to(np.asarray(mu0, float), (n_regions,))
    mu, theta, omega, iters, conv, trace = em_batch(
        grid, w[None], length, mu0[None], [theta0], [omega0], config.max_iters, config.rel_tolerance
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnstableModelWarning)
        model = SeppModel(tuple(mu[0]), float(theta[0]), float(omega[0]))
    if model.theta >= 1:
        warnings.warn(f"fitted theta={model.theta} >= 1: branching is explosive", UnstableModelWarning, stacklevel=2)
    ll = trace[0]
    return FitResult(model, int(iters[0]), bool(conv[0]), ll[~np.isnan(ll)])


def fit_em(
    events: Iterable,
    window: tuple[float, float],
    config: EmConfig | None = None,
    n_regions: int | None = None,
) -> SeppModel:
    return fit_em_result(events, window, config, n_regions).model


def log_likelihood(model: SeppModel, events: Iterable, window: tuple[float, float]) -> float:
    """The objective EM climbs: log-intensity at events minus the fully integrated kernel mass.

    Every event contributes ``theta * weight`` to the compensator, i.e. the
    excitation it triggers is counted in full even past the window end.
    """
    t_start, t_end = window
    inside = [e for e in _as_events(events) if t_start < e.time <= t_end and e.weight > 0]
    grid, w = _grid(inside, model.n_regions, t_start)
    mu = np.asarray(model.mu)
    S, _ = exp_sums(grid, w, model.omega)
    lam = mu[:, None] + model.theta * model.omega * S
    has = w > 0
    lam = np.where(has, lam, 1.0)
    return float(
        np.where(has, w * np.log(lam), 0.0).sum() - mu.sum() * (t_end - t_start) - model.theta * w.sum()
    )


def intensity(model: SeppModel, region: int, t: float, history) -> float:
    """``mu_r`` plus the decayed excitation of every earlier event in ``history``.

    ``history`` holds either :class:`Event` objects of this region or plain
    times (weight 1).
    """
    times = []
    wts = []
    for h in history:
        if isinstance(h, Event):
            if h.region != region:
                continue
            times.append(h.time)
            wts.append(h.weight)
        else:
            times.append(float(h))
            wts.append(1.0)
    mu = model.mu[region]
    if not times:
        return mu
    times = np.asarray(times)
    if np.any(times >= t):
        raise FutureEvent(f"history contains events at or after t={t}")
    excite = np.dot(wts, np.exp(-model.omega * (t - times)))
    return float(mu + model.theta * model.omega * excite)


def predict_rates(model: SeppModel, events: Iterable, t: float) -> np.ndarray:
    """Intensity of every region at time ``t`` given the event log."""
    events = _as_events(events)
    return np.array([intensity(model, r, t, events) for r in range(model.n_regions)])


def generate_events(true_rates: Sequence[float], day: int, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson incident counts per region for one day (no self-excitation)."""
    rates = np.asarray(true_rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("rates must be >= 0")
    return rng.poisson(rates)


def daily_events(counts, first_day: int = 0) -> list[Event]:
    """Daily counts ``(days, regions)`` as weighted events at each day's midpoint."""
    counts = np.asarray(counts)
    events = []
    for d, row in enumerate(counts):
        for r, c in enumerate(row):
            if c > 0:
                events.append(Event(r, first_day + d + 0.5, float(c)))
    return events


def simulate_sepp(model: SeppModel, horizon: float, rng: np.random.Generator) -> list[Event]:
    """Draw a realization of the aftershock model on ``[0, horizon)`` by branching."""
    out = []
    for r, mu in enumerate(model.mu):
        generation = np.sort(rng.uniform(0.0, horizon, rng.poisson(mu * horizon)))
        while generation.size:
            out.extend(Event(r, float(t)) for t in generation)
            n_kids = rng.poisson(model.theta, generation.size)
            parents = np.repeat(generation, n_kids)
            kids = parents + rng.exponential(1.0 / model.omega, parents.size)
            generation = kids[kids < horizon]
    out.sort(key=lambda e: (e.time, e.region))
    return out
