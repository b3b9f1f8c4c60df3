"""Rejection-filtered urn updates that make additions proportional to true rates.

A discovered incident in region ``i`` is only added when a second,
independent draw from the same urn state lands on a different color, i.e.
with probability ``1 - x_i``. Deployment happens with probability ``x_i``,
so the expected addition to region ``i`` becomes ``x_i (1 - x_i) lambda_i``
for two regions: proportional to ``lambda_i`` with a common factor.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .urn import (
    NO_DECAY,
    AdditionSpec,
    DecayPolicy,
    UrnState,
    draw,
    realize_addition,
)

__all__ = [
    "IncidentBatch",
    "CorrectionKind",
    "CorrectionMode",
    "UnvisitedReported",
    "MixedRates",
    "acceptance_probability",
    "rejection_accepts",
    "discovered_step",
    "corrected_step_discovered",
    "mixed_step",
    "corrected_step_mixed",
    "horvitz_weight",
    "horvitz_step_discovered",
]


@dataclass(frozen=True)
class IncidentBatch:
    """Incidents logged in one round; discovered ones only for the visited region."""

    region: int
    discovered_count: int
    reported_counts: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.region < 0:
            raise ValueError("region index must be non-negative")
        if self.discovered_count < 0 or any(c < 0 for c in self.reported_counts):
            raise ValueError("incident counts must be non-negative")
        if self.reported_counts and self.region >= len(self.reported_counts):
            raise ValueError("visited region has no reported-count slot")


class CorrectionKind(str, enum.Enum):
    NONE = "none"
    DISCOVERED_REJECTION = "discovered_rejection"
    MIXED_REJECTION = "mixed_rejection"


@dataclass(frozen=True)
class CorrectionMode:
    kind: CorrectionKind = CorrectionKind.NONE
    w_d: float | None = None
    w_r: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CorrectionKind(self.kind))
        if self.kind is CorrectionKind.MIXED_REJECTION:
            if self.w_d is None or self.w_r is None:
                raise ValueError("mixed rejection needs w_d and w_r")
            if min(self.w_d, self.w_r) < 0 or abs(self.w_d + self.w_r - 1) > 1e-12:
                raise ValueError(f"weights must be >= 0 and sum to 1, got {self.w_d}, {self.w_r}")

    @property
    def active(self) -> bool:
        return self.kind is not CorrectionKind.NONE


class UnvisitedReported(str, enum.Enum):
    """Weight given to reported incidents of regions that were not visited.

    ``AS_REPORTED`` keeps weight ``w_r`` everywhere, so only discovered data
    is filtered. ``FULL`` gives unvisited regions weight 1 on top of the
    discovered filter; that combination has a fixed point away from the
    true rate ratio (see ``tests/test_correction.py``).
    """

    AS_REPORTED = "as_reported"
    FULL = "full"


@dataclass(frozen=True)
class MixedRates:
    w_d: float
    w_r: float
    discovered: tuple[AdditionSpec, ...]
    reported: tuple[AdditionSpec, ...]

    def __post_init__(self) -> None:
        if min(self.w_d, self.w_r) < 0 or abs(self.w_d + self.w_r - 1) > 1e-12:
            raise ValueError(f"weights must be >= 0 and sum to 1, got {self.w_d}, {self.w_r}")
        object.__setattr__(self, "discovered", tuple(self.discovered))
        object.__setattr__(self, "reported", tuple(self.reported))
        if len(self.discovered) != len(self.reported):
            raise ValueError("discovered and reported rates need one entry per region")


def acceptance_probability(state: UrnState, region: int) -> float:
    """Probability that the second draw differs from ``region``."""
    return 1.0 - state.fraction(region)


def rejection_accepts(state: UrnState, visited: int, rng: np.random.Generator) -> bool:
    return draw(state, rng) != visited


def _gate(state, visited, amount, rng, per_incident):
    if per_incident:
        # Integer counts only; each incident gets its own second draw.
        return float(rng.binomial(int(round(amount)), acceptance_probability(state, visited)))
    return amount if rejection_accepts(state, visited, rng) else 0.0


def discovered_step(
    state: UrnState,
    rates: Sequence[AdditionSpec],
    rng: np.random.Generator,
    correct: bool = False,
    decay: DecayPolicy = NO_DECAY,
    per_incident: bool = False,
) -> UrnState:
    """One round with discovered incidents only (uncorrected unless ``correct``)."""
    if len(rates) != state.n:
        raise ValueError("need one rate per region")
    i = draw(state, rng)
    amount = realize_addition(rates[i], rng)
    if correct and amount > 0:
        amount = _gate(state, i, amount, rng, per_incident)
    masses = np.array(state.masses)
    masses[i] += amount
    return UrnState(decay.apply(masses, rng), state.step + 1)


def corrected_step_discovered(
    state: UrnState,
    rates: Sequence[AdditionSpec],
    rng: np.random.Generator,
    decay: DecayPolicy = NO_DECAY,
    per_incident: bool = False,
) -> UrnState:
    return discovered_step(state, rates, rng, True, decay, per_incident)


def mixed_step(
    state: UrnState,
    rates: MixedRates,
    rng: np.random.Generator,
    correct: bool = False,
    unvisited_reported: UnvisitedReported = UnvisitedReported.AS_REPORTED,
    decay: DecayPolicy = NO_DECAY,
    per_incident: bool = False,
) -> UrnState:
    """One round with discovered and reported incidents.

    Discovered incidents of the visited region enter with weight ``w_d``
    (filtered when ``correct``); reported incidents of every region enter
    with weight ``w_r``, except that with ``correct`` and
    ``UnvisitedReported.FULL`` unvisited regions get weight 1.
    """
    n = state.n
    if len(rates.discovered) != n:
        raise ValueError("need one rate per region")
    unvisited_reported = UnvisitedReported(unvisited_reported)
    i = draw(state, rng)
    discovered = realize_addition(rates.discovered[i], rng)
    if correct and discovered > 0:
        discovered = _gate(state, i, discovered, rng, per_incident)
    reported = np.array([realize_addition(spec, rng) for spec in rates.reported])

    weights = np.full(n, rates.w_r)
    if correct and unvisited_reported is UnvisitedReported.FULL:
        weights[:] = 1.0
        weights[i] = rates.w_r
    masses = np.array(state.masses) + weights * reported
    masses[i] += rates.w_d * discovered
    return UrnState(decay.apply(masses, rng), state.step + 1)


def corrected_step_mixed(
    state: UrnState,
    rates: MixedRates,
    rng: np.random.Generator,
    unvisited_reported: UnvisitedReported = UnvisitedReported.AS_REPORTED,
    decay: DecayPolicy = NO_DECAY,
    per_incident: bool = False,
) -> UrnState:
    return mixed_step(state, rates, rng, True, unvisited_reported, decay, per_incident)


def horvitz_weight(deploy_prob: float) -> float:
    """Inverse-probability weight for an incident found where police went with ``deploy_prob``."""
    if deploy_prob == 0:
        raise ZeroDivisionError("deployment probability is zero")
    if not 0 < deploy_prob <= 1:
        raise ValueError(f"deployment probability must lie in (0, 1], got {deploy_prob!r}")
    return 1.0 / deploy_prob


def horvitz_step_discovered(
    state: UrnState,
    rates: Sequence[AdditionSpec],
    rng: np.random.Generator,
    decay: DecayPolicy = NO_DECAY,
) -> UrnState:
    """Importance-weighted alternative to the rejection filter."""
    fractions = state.fractions()
    i = draw(state, rng)
    amount = realize_addition(rates[i], rng)
    masses = np.array(state.masses)
    masses[i] += amount * horvitz_weight(fractions[i])
    return UrnState(decay.apply(masses, rng), state.step + 1)
