"""Closed-form asymptotics for two-color generalized urns.

The point-mass limit of an urn with deterministic replacement matrix
``[[a, b], [c, d]]`` is the root in [0, 1] of

    f(x) = (c + d - a - b) x**2 + (a - 2c - d) x + c

at which ``f`` is decreasing; ``a == d, b == c == 0`` instead gives a Beta law.
The mixed discovered/reported urn reduces to that polynomial, and its limit
also has the change-of-variables form in ``kappa = R / delta_d`` used by
:func:`kappa_form`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

from .errors import (
    DegenerateMatrix,
    DegenerateRates,
    FeedbackUrnError,
    NegativeRadicand,
    NoValidRoot,
    OutOfRegimeWarning,
)

__all__ = [
    "EPS",
    "DeterministicMatrix2",
    "PointMass",
    "BetaLimit",
    "LimitResult",
    "MixedParams",
    "quadratic_roots",
    "renlund_limit",
    "mixed_limit",
    "eq1_limit",
    "kappa_form",
    "large_kappa_approx",
]

EPS = 1e-12
_ROOT_SLACK = 1e-9


@dataclass(frozen=True)
class DeterministicMatrix2:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "d"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"matrix entry {name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def scale(self) -> float:
        return max(self.a, self.b, self.c, self.d)

    def coefficients(self) -> tuple[float, float, float]:
        """(quadratic, linear, constant) coefficients of the limit polynomial."""
        a, b, c, d = self.a, self.b, self.c, self.d
        return c + d - a - b, a - 2 * c - d, c

    def f(self, x: float) -> float:
        qa, qb, qc = self.coefficients()
        return (qa * x + qb) * x + qc

    def fprime(self, x: float) -> float:
        qa, qb, _ = self.coefficients()
        return 2 * qa * x + qb


@dataclass(frozen=True)
class PointMass:
    x_star: float
    flagged: bool = False  # set when root selection hit a numerical tie


@dataclass(frozen=True)
class BetaLimit:
    alpha: float
    beta: float


LimitResult = Union[PointMass, BetaLimit]


def quadratic_roots(qa: float, qb: float, qc: float) -> tuple[float, ...]:
    """Real roots of ``qa x^2 + qb x + qc`` without cancellation.

    The larger-magnitude root comes from ``q = -(qb + sign(qb) sqrt(disc)) / 2``
    and the other from the product of roots, ``qc / q``.
    """
    if qa == 0:
        if qb == 0:
            return ()
        return (-qc / qb,)
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        if disc < -1e-14 * (qb * qb + abs(4 * qa * qc)):
            return ()
        disc = 0.0
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    if q == 0:
        return (0.0,)
    r1, r2 = q / qa, qc / q
    return (r1,) if r1 == r2 else (r1, r2)


def renlund_limit(
    m: DeterministicMatrix2, initial_A: float = 1.0, initial_B: float = 1.0
) -> LimitResult:
    """Almost-sure limit of the A-fraction for a deterministic 2x2 urn."""
    if initial_A <= 0 or initial_B <= 0:
        raise ValueError("initial ball counts must be positive")
    scale = m.scale
    if scale == 0:
        raise DegenerateMatrix("all replacement entries are zero")
    tol = EPS * scale
    if abs(m.a - m.d) <= tol and m.b <= tol and m.c <= tol:
        # Each draw adds `a` balls of its own color: Beta in units of a.
        return BetaLimit(initial_A / m.a, initial_B / m.a)

    qa, qb, qc = m.coefficients()
    if abs(qa) <= tol:
        roots = (-qc / qb,) if abs(qb) > tol else ()
        qa = 0.0
    else:
        roots = quadratic_roots(qa, qb, qc)

    valid = []
    for r in roots:
        if -_ROOT_SLACK <= r <= 1 + _ROOT_SLACK and 2 * qa * r + qb < 0:
            valid.append(min(max(r, 0.0), 1.0))
    if not valid:
        raise NoValidRoot(f"no root in [0, 1] with negative slope for {m}")
    if len(valid) > 1:
        return PointMass(min(valid, key=lambda r: abs(r - 0.5)), flagged=True)
    return PointMass(valid[0])


@dataclass(frozen=True)
class MixedParams:
    """Weights and rates of the discovered + reported incident urn."""

    w_d: float
    w_r: float
    d_A: float
    d_B: float
    r_A: float
    r_B: float

    def __post_init__(self) -> None:
        for name in ("w_d", "w_r", "d_A", "d_B", "r_A", "r_B"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)
        if self.w_d > 1 or self.w_r > 1 or abs(self.w_d + self.w_r - 1) > 1e-12:
            raise ValueError(f"weights must lie in [0, 1] and sum to 1, got {self.w_d}, {self.w_r}")

    @property
    def R(self) -> float:
        return self.w_r * (self.r_A + self.r_B)

    @property
    def delta_d(self) -> float:
        return self.w_d * (self.d_B - self.d_A)

    @property
    def lambda_star(self) -> float:
        return self.r_A / (self.r_A + self.r_B)

    @property
    def kappa(self) -> float:
        return self.R / self.delta_d

    def matrix(self) -> DeterministicMatrix2:
        w_d, w_r = self.w_d, self.w_r
        return DeterministicMatrix2(
            w_d * self.d_A + w_r * self.r_A,
            w_r * self.r_B,
            w_r * self.r_A,
            w_d * self.d_B + w_r * self.r_B,
        )


def eq1_limit(p: MixedParams) -> float:
    """``nu - sqrt(nu^2 - w_r r_A / delta_d)`` with ``nu = 1/2 + R / (2 delta_d)``.

    Only meaningful for ``delta_d > 0``. Evaluated in the conjugate form
    ``q / (nu + sqrt(nu^2 - q))``, which is the same number without the
    cancellation when ``nu`` is large.
    """
    delta = p.delta_d
    if delta <= 0:
        raise ValueError("closed form requires delta_d > 0")
    nu = 0.5 + p.R / (2 * delta)
    q = p.w_r * p.r_A / delta
    rad = nu * nu - q
    if rad < 0:
        raise NegativeRadicand(f"radicand {rad} < 0")
    return q / (nu + math.sqrt(rad))


def mixed_limit(p: MixedParams) -> float:
    """Limiting A-fraction of the mixed urn (general solver, either sign of delta_d)."""
    m = p.matrix()
    if p.r_A + p.r_B == 0 and p.d_A == p.d_B == 0:
        raise DegenerateRates("no reported and no discovered incidents")
    if abs(p.delta_d) < EPS * max(m.scale, 1e-300):
        if p.R == 0:
            raise DegenerateRates("no discovered differential and no reported weight: limit is not a point mass")
        return p.w_r * p.r_A / p.R
    result = renlund_limit(m)
    if not isinstance(result, PointMass):
        raise DegenerateRates("mixed urn has a Beta limit, not a point mass")
    x = result.x_star
    if p.delta_d > 0:
        closed = eq1_limit(p)
        if abs(closed - x) > 1e-9 * max(1.0, abs(x)):
            raise FeedbackUrnError(f"closed form {closed!r} disagrees with polynomial root {x!r}")
    return x


def kappa_form(lambda_star: float, kappa: float) -> float:
    """``(1+kappa)/2 - sqrt(((1+kappa)/2)^2 - lambda_star * kappa)``.

    Derived for ``kappa > 0``; a negative ``kappa`` is evaluated but warns.
    """
    if kappa < 0:
        warnings.warn(
            f"kappa={kappa} < 0 lies outside the regime the closed form was derived for",
            OutOfRegimeWarning,
            stacklevel=2,
        )
    nu = 0.5 * (1 + kappa)
    prod = lambda_star * kappa
    rad = nu * nu - prod
    if rad < 0:
        raise NegativeRadicand(f"radicand {rad} < 0 for lambda*={lambda_star}, kappa={kappa}")
    root = math.sqrt(rad)
    if nu > 0:
        return prod / (nu + root)
    return nu - root


def large_kappa_approx(lambda_star: float, R: float, delta_d: float) -> float:
    """First-order (binomial) approximation ``lambda* R / (R + delta_d)``."""
    denom = R + delta_d
    if denom == 0:
        raise ZeroDivisionError("R + delta_d == 0")
    return lambda_star * R / denom
