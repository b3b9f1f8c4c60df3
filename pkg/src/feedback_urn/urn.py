"""Generalized Pólya urn: state, proportional draws, stochastic replacement and decay.

Masses are non-negative reals measured in ball-equivalents, so fractional
additions (deterministic-equivalent urns, weighted incident classes) are
first-class. Every function that needs randomness takes an explicit
``numpy.random.Generator``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DecayModeMismatch, EmptyUrn

__all__ = [
    "Deterministic",
    "Bernoulli",
    "Poisson",
    "AdditionSpec",
    "Region",
    "UrnState",
    "ReplacementRule",
    "DecayMode",
    "DecayPolicy",
    "NO_DECAY",
    "draw",
    "realize_addition",
    "step",
    "simulate",
    "simulate_many",
]


def _check_nonneg(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")
    return value


@dataclass(frozen=True)
class Deterministic:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _check_nonneg("value", self.value))

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return self.value
        return np.full(size, self.value)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self) -> None:
        p = _check_nonneg("p", self.p)
        if p > 1:
            raise ValueError(f"Bernoulli probability must lie in [0, 1], got {p!r}")
        object.__setattr__(self, "p", p)

    @property
    def mean(self) -> float:
        return self.p

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return 1.0 if rng.random() < self.p else 0.0
        return (rng.random(size) < self.p).astype(float)


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", _check_nonneg("lam", self.lam))

    @property
    def mean(self) -> float:
        return self.lam

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return float(rng.poisson(self.lam))
        return rng.poisson(self.lam, size).astype(float)


AdditionSpec = Union[Deterministic, Bernoulli, Poisson]


@dataclass(frozen=True)
class Region:
    """A labelled region; ``index`` is its column in the urn."""

    index: int
    label: str


def realize_addition(spec: AdditionSpec, rng: np.random.Generator) -> float:
    """Draw one realization of an addition spec."""
    return spec.sample(rng)


@dataclass(frozen=True, eq=False)
class UrnState:
    masses: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        masses = np.array(self.masses, dtype=float)
        if masses.ndim != 1 or masses.size == 0:
            raise ValueError("masses must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise ValueError(f"masses must be finite and non-negative, got {masses}")
        if self.step < 0:
            raise ValueError("step must be non-negative")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UrnState):
            return NotImplemented
        return self.step == other.step and np.array_equal(self.masses, other.masses)

    def __hash__(self) -> int:
        return hash((self.step, self.masses.tobytes()))

    @property
    def n(self) -> int:
        return self.masses.size

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def fractions(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise EmptyUrn("urn has zero total mass")
        return self.masses / total

    def fraction(self, i: int = 0) -> float:
        return float(self.fractions()[i])


@dataclass(frozen=True)
class ReplacementRule:
    """Square grid of addition specs; row = drawn color, column = color added."""

    matrix: tuple[tuple[AdditionSpec, ...], ...]

    def __post_init__(self) -> None:
        rows = tuple(tuple(row) for row in self.matrix)
        n = len(rows)
        if n == 0 or any(len(row) != n for row in rows):
            raise ValueError("replacement matrix must be square and non-empty")
        for row in rows:
            for spec in row:
                if not isinstance(spec, (Deterministic, Bernoulli, Poisson)):
                    raise TypeError(f"not an addition spec: {spec!r}")
        if not any(spec.mean > 0 for row in rows for spec in row):
            raise ValueError("at least one replacement entry must have positive expected value")
        object.__setattr__(self, "matrix", rows)

    @classmethod
    def standard_polya(cls, n: int = 2) -> "ReplacementRule":
        return cls.from_means(np.eye(n))

    @classmethod
    def from_means(cls, means) -> "ReplacementRule":
        """Deterministic rule with the given entries."""
        means = np.asarray(means, dtype=float)
        return cls(tuple(tuple(Deterministic(v) for v in row) for row in means))

    @classmethod
    def diagonal(cls, specs: Sequence[AdditionSpec]) -> "ReplacementRule":
        n = len(specs)
        zero = Deterministic(0.0)
        return cls(tuple(tuple(specs[i] if i == j else zero for j in range(n)) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.matrix)

    def expected(self) -> np.ndarray:
        return np.array([[spec.mean for spec in row] for row in self.matrix])

    def is_deterministic(self) -> bool:
        return all(isinstance(spec, Deterministic) for row in self.matrix for spec in row)

    def realize_row(self, i: int, rng: np.random.Generator) -> np.ndarray:
        return np.array([realize_addition(spec, rng) for spec in self.matrix[i]])


class DecayMode(str, enum.Enum):
    PER_BALL_BINOMIAL = "per_ball_binomial"
    EXPECTED_MULTIPLICATIVE = "expected_multiplicative"


@dataclass(frozen=True)
class DecayPolicy:
    """Each ball disappears independently with probability ``p_d`` after every round.

    ``EXPECTED_MULTIPLICATIVE`` scales masses by ``1 - p_d`` and is the only
    mode defined for fractional masses.
    """

    p_d: float = 0.0
    mode: DecayMode = DecayMode.EXPECTED_MULTIPLICATIVE

    def __post_init__(self) -> None:
        p_d = _check_nonneg("p_d", self.p_d)
        if p_d > 1:
            raise ValueError(f"p_d must lie in [0, 1], got {p_d!r}")
        object.__setattr__(self, "p_d", p_d)
        object.__setattr__(self, "mode", DecayMode(self.mode))

    def apply(self, masses: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.p_d == 0:
            return masses
        if self.mode is DecayMode.EXPECTED_MULTIPLICATIVE:
            return masses * (1.0 - self.p_d)
        rounded = np.rint(masses)
        if not np.array_equal(rounded, masses):
            raise DecayModeMismatch("per-ball binomial decay needs integer masses")
        return rng.binomial(rounded.astype(np.int64), 1.0 - self.p_d).astype(float)


NO_DECAY = DecayPolicy()


def draw(state: UrnState, rng: np.random.Generator) -> int:
    """Index of a region drawn with probability proportional to its mass."""
    cum = np.cumsum(state.masses)
    total = cum[-1]
    if total <= 0:
        raise EmptyUrn("cannot draw from an urn with zero total mass")
    i = int(np.searchsorted(cum, rng.random() * total, side="right"))
    return min(i, state.n - 1)


def step(
    state: UrnState,
    rule: ReplacementRule,
    decay: DecayPolicy = NO_DECAY,
    rng: np.random.Generator | None = None,
) -> UrnState:
    """Draw a ball, apply the drawn row of ``rule``, then decay."""
    if rng is None:
        raise TypeError("step requires an explicit rng")
    if rule.n != state.n:
        raise ValueError(f"rule is {rule.n}x{rule.n} but urn has {state.n} colors")
    i = draw(state, rng)
    masses = state.masses + rule.realize_row(i, rng)
    masses = decay.apply(masses, rng)
    return UrnState(masses, state.step + 1)


def simulate(
    initial: UrnState,
    rule: ReplacementRule,
    decay: DecayPolicy,
    horizon: int,
    rng: np.random.Generator,
    verbose: bool = False,
):
    """Run one urn for ``horizon`` steps.

    Returns the region-0 mass fraction after each step; with ``verbose`` also
    returns the raw masses, shape ``(horizon, n)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    fractions = np.empty(horizon)
    masses = np.empty((horizon, initial.n)) if verbose else None
    state = initial
    for t in range(horizon):
        state = step(state, rule, decay, rng)
        total = state.total
        fractions[t] = state.masses[0] / total if total > 0 else np.nan
        if verbose:
            masses[t] = state.masses
    if verbose:
        return fractions, masses
    return fractions


def _batch_draw(masses: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(masses, axis=1)
    total = cum[:, -1]
    if np.any(total <= 0):
        raise EmptyUrn("cannot draw from an urn with zero total mass")
    u = rng.random(masses.shape[0]) * total
    return (cum[:, :-1] <= u[:, None]).sum(axis=1)


def simulate_many(
    initial: UrnState,
    rule: ReplacementRule,
    decay: DecayPolicy,
    horizon: int,
    runs: int,
    rng: np.random.Generator,
    record: str = "final",
) -> np.ndarray:
    """Run ``runs`` independent urns side by side from the same initial state.

    Same process as :func:`simulate`, vectorised across runs. ``record``
    selects the output: ``"final"`` -> final masses ``(runs, n)``,
    ``"fractions"`` -> region-0 fraction per step ``(horizon, runs)``,
    ``"masses"`` -> all masses ``(horizon, runs, n)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if record not in ("final", "fractions", "masses"):
        raise ValueError(f"unknown record mode {record!r}")
    n = initial.n
    masses = np.tile(initial.masses, (runs, 1))
    out = None
    if record == "fractions":
        out = np.empty((horizon, runs))
    elif record == "masses":
        out = np.empty((horizon, runs, n))

    means = rule.expected()
    deterministic = rule.is_deterministic()
    stochastic = [
        (i, j, spec)
        for i, row in enumerate(rule.matrix)
        for j, spec in enumerate(row)
        if spec.mean > 0
    ]
    rows = np.arange(runs)
    for t in range(horizon):
        idx = _batch_draw(masses, rng)
        if deterministic:
            masses = masses + means[idx]
        else:
            add = np.zeros((runs, n))
            for i, j, spec in stochastic:
                hit = idx == i
                k = int(hit.sum())
                if k:
                    add[rows[hit], j] += spec.sample(rng, k)
            masses = masses + add
        masses = decay.apply(masses, rng)
        if record == "fractions":
            total = masses.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[t] = masses[:, 0] / total
        elif record == "masses":
            out[t] = masses
    return masses if record == "final" else out
