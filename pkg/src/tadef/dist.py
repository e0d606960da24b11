"""Parametric distributions with additive offset and clamping.

Every sample is ``raw + start``, clamped below at 0 and above at ``max``
(when ``max > 0``). The random source is any :class:`random.Random`;
by default a :class:`random.SystemRandom` (OS CSPRNG) is used.
"""
from __future__ import annotations

import enum
import math
import random
import struct
from dataclasses import dataclass
from typing import Optional

__all__ = [
    "DistKind",
    "Distribution",
    "InvalidDistribution",
    "default_rng",
    "sample",
    "validate",
]

_DIST_STRUCT = struct.Struct("<Bdddd")
DIST_SIZE = _DIST_STRUCT.size  # 33 bytes


class InvalidDistribution(ValueError):
    """Raised when a distribution's parameters are invalid for its kind."""


class DistKind(enum.IntEnum):
    NONE = 0
    UNIFORM = 1
    NORMAL = 2
    LOGNORMAL = 3
    BINOMIAL = 4
    PARETO = 5
    POISSON = 6
    WEIBULL = 7
    GAMMA = 8
    BETA = 9


def default_rng() -> random.Random:
    return random.SystemRandom()


@dataclass(frozen=True, eq=False)
class Distribution:
    """A sampleable distribution.

    Parameterizations (``param1``, ``param2``):

    ======== ==========================
    UNIFORM  low, high
    NORMAL   mean, std
    LOGNORMAL mu, sigma
    BINOMIAL trials, success probability
    PARETO   scale, shape
    POISSON  lambda, (unused)
    WEIBULL  scale, shape
    GAMMA    shape, scale
    BETA     alpha, beta
    ======== ==========================

    ``NONE`` contributes 0, so it samples as the constant ``start``.
    """

    kind: DistKind = DistKind.NONE
    param1: float = 0.0
    param2: float = 0.0
    start: float = 0.0
    max: float = 0.0

    @classmethod
    def constant(cls, value: float) -> "Distribution":
        return cls(DistKind.NONE, start=float(value))

    def sample(self, rng: Optional[random.Random] = None) -> float:
        return sample(self, rng)

    def to_bytes(self) -> bytes:
        return _DIST_STRUCT.pack(
            int(self.kind), self.param1, self.param2, self.start, self.max
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Distribution":
        kind, p1, p2, start, mx = _DIST_STRUCT.unpack(buf)
        try:
            kind = DistKind(kind)
        except ValueError:
            raise InvalidDistribution(f"unknown distribution kind {kind}") from None
        return cls(kind, p1, p2, start, mx)

    # Floats compare by exact bit pattern so that -0.0 != 0.0 and the
    # serialized form fully determines equality.
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


def validate(d: Distribution) -> None:
    """Raise :class:`InvalidDistribution` unless ``d`` is usable."""
    try:
        kind = DistKind(d.kind)
    except ValueError:
        raise InvalidDistribution(f"unknown distribution kind {d.kind!r}") from None
    p1, p2 = d.param1, d.param2
    for name, v in (("param1", p1), ("param2", p2), ("start", d.start), ("max", d.max)):
        if not math.isfinite(v):
            raise InvalidDistribution(f"{name} must be finite, got {v}")
    if d.start < 0:
        raise InvalidDistribution(f"start must be >= 0, got {d.start}")
    if d.max < 0:
        raise InvalidDistribution(f"max must be >= 0, got {d.max}")

    if kind is DistKind.UNIFORM:
        if p1 > p2:
            raise InvalidDistribution(f"uniform requires low <= high, got {p1} > {p2}")
    elif kind in (DistKind.NORMAL, DistKind.LOGNORMAL):
        if p2 < 0:
            raise InvalidDistribution(f"{kind.name.lower()} requires std >= 0, got {p2}")
    elif kind is DistKind.BINOMIAL:
        if p1 < 0 or p1 != math.floor(p1):
            raise InvalidDistribution(f"binomial trials must be a non-negative integer, got {p1}")
        if not 0.0 <= p2 <= 1.0:
            raise InvalidDistribution(f"binomial probability must be in [0, 1], got {p2}")
    elif kind is DistKind.POISSON:
        if p1 < 0:
            raise InvalidDistribution(f"poisson lambda must be >= 0, got {p1}")
    elif kind in (DistKind.PARETO, DistKind.WEIBULL, DistKind.GAMMA, DistKind.BETA):
        if p1 <= 0 or p2 <= 0:
            raise InvalidDistribution(
                f"{kind.name.lower()} requires positive parameters, got ({p1}, {p2})"
            )


def sample(d: Distribution, rng: Optional[random.Random] = None) -> float:
    if rng is None:
        rng = default_rng()
    try:
        raw = _RAW[d.kind](rng, d.param1, d.param2)
    except OverflowError:
        # heavy tails (tiny Pareto shape, large log-normal mu)
        raw = math.inf
    r = max(0.0, raw + d.start)
    if d.max > 0.0:
        return min(r, d.max)
    return r


def _binomial(rng: random.Random, n: float, p: float) -> float:
    n = int(n)
    if p <= 0.0 or n == 0:
        return 0.0
    if p >= 1.0:
        return float(n)
    if p > 0.5:
        return float(n - _binomial_int(rng, n, 1.0 - p))
    return float(_binomial_int(rng, n, p))


def _binomial_int(rng: random.Random, n: int, p: float) -> int:
    # p <= 0.5 here
    if n * p < 10.0:
        # geometric waiting times (Devroye)
        c = math.log1p(-p)
        x = y = 0
        while True:
            y += math.floor(math.log(1.0 - rng.random()) / c) + 1
            if y > n:
                return x
            x += 1

    # BTRS (Hörmann 1993), transformed rejection with squeeze
    spq = math.sqrt(n * p * (1.0 - p))
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    vr = 0.92 - 4.2 / b
    alpha = (2.83 + 5.1 / b) * spq
    lpq = math.log(p / (1.0 - p))
    m = math.floor((n + 1) * p)
    h = math.lgamma(m + 1) + math.lgamma(n - m + 1)
    while True:
        u = rng.random() - 0.5
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + c)
        if k < 0 or k > n:
            continue
        v = rng.random()
        if us >= 0.07 and v <= vr:
            return k
        v *= alpha / (a / (us * us) + b)
        if v > 0 and math.log(v) <= h - math.lgamma(k + 1) - math.lgamma(n - k + 1) + (k - m) * lpq:
            return k


def _poisson(rng: random.Random, lam: float, _unused: float) -> float:
    if lam <= 0.0:
        return 0.0
    if lam < 10.0:
        # multiplication method
        limit = math.exp(-lam)
        k = 0
        prod = rng.random()
        while prod > limit:
            k += 1
            prod *= rng.random()
        return float(k)

    # PTRS (Hörmann 1993)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return float(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if v > 0 and (
            math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
            <= -lam + k * loglam - math.lgamma(k + 1)
        ):
            return float(k)


_RAW = {
    DistKind.NONE: lambda rng, p1, p2: 0.0,
    DistKind.UNIFORM: lambda rng, p1, p2: rng.uniform(p1, p2),
    DistKind.NORMAL: lambda rng, p1, p2: rng.normalvariate(p1, p2),
    DistKind.LOGNORMAL: lambda rng, p1, p2: rng.lognormvariate(p1, p2),
    DistKind.BINOMIAL: _binomial,
    DistKind.PARETO: lambda rng, p1, p2: p1 * rng.paretovariate(p2),
    DistKind.POISSON: _poisson,
    DistKind.WEIBULL: lambda rng, p1, p2: rng.weibullvariate(p1, p2),
    DistKind.GAMMA: lambda rng, p1, p2: rng.gammavariate(p1, p2),
    DistKind.BETA: lambda rng, p1, p2: rng.betavariate(p1, p2),
}
