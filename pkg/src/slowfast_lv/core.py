"""Shared geometry of the three-species simplex.

Barycentric points, integer occupation states on the simplicial grid, the
cyclic jump vectors, and the conserved product z = x1*x2*x3.  All types here
are immutable values and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Maximum of x1*x2*x3 on the simplex, attained at the centre.
Z_MAX = 1.0 / 27.0

# Sum deviations up to this are silently renormalized; larger ones are errors.
_RENORM_TOL = 1e-9


@dataclass(frozen=True)
class SimplexPoint:
    """Barycentric point (x1, x2, x3), renormalized so the sum is exactly 1."""

    x1: float
    x2: float
    x3: float

    def __post_init__(self):
        s = self.x1 + self.x2 + self.x3
        if not np.isfinite(s) or abs(s - 1.0) > _RENORM_TOL:
            raise ValueError(f"coordinates sum to {s!r}, not 1 within {_RENORM_TOL}")
        if min(self.x1, self.x2, self.x3) < -1e-15:
            raise ValueError(f"negative coordinate in ({self.x1}, {self.x2}, {self.x3})")
        object.__setattr__(self, "x1", max(self.x1, 0.0) / s)
        object.__setattr__(self, "x2", max(self.x2, 0.0) / s)
        object.__setattr__(self, "x3", max(self.x3, 0.0) / s)

    @classmethod
    def from_array(cls, x) -> "SimplexPoint":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])

    def cycled(self, k: int = 1) -> "SimplexPoint":
        """Point with coordinates shifted cyclically by k slots (x_i -> x_{i+k})."""
        x = self.as_array()
        return SimplexPoint.from_array(np.roll(x, k))


CENTRE = SimplexPoint(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True)
class CountState:
    """Occupation numbers (n1, n2, n3) of the three species; n is the total."""

    n1: int
    n2: int
    n3: int

    def __post_init__(self):
        for v in (self.n1, self.n2, self.n3):
            if int(v) != v or v < 0:
                raise ValueError(f"counts must be nonnegative integers, got {self}")

    @property
    def n(self) -> int:
        return self.n1 + self.n2 + self.n3

    def counts(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    def count(self, i: int) -> int:
        return self.counts()[i % 3]


@dataclass(frozen=True)
class JumpVector:
    """Cyclic jump channel i: one particle moves from species i to species i+1.

    Species indices are 0-based here; channel i has the count-level increment
    (-1 at slot i, +1 at slot i+1 mod 3).
    """

    index: int

    def __post_init__(self):
        if self.index not in (0, 1, 2):
            raise ValueError(f"jump index must be 0, 1 or 2, got {self.index}")

    @property
    def source(self) -> int:
        return self.index

    @property
    def target(self) -> int:
        return (self.index + 1) % 3

    def delta(self) -> np.ndarray:
        d = np.zeros(3, dtype=np.int64)
        d[self.source] = -1
        d[self.target] = 1
        return d


JUMPS = (JumpVector(0), JumpVector(1), JumpVector(2))


@dataclass(frozen=True)
class ModelParams:
    """Intrinsic rate a >= 0, optionally bundled with a population size."""

    a: float
    n: int | None = None

    def __post_init__(self):
        if not (self.a >= 0.0):
            raise ValueError(f"intrinsic rate a must be >= 0, got {self.a}")
        if self.n is not None and self.n < 0:
            raise ValueError(f"population size must be >= 0, got {self.n}")


def z_of(p: SimplexPoint) -> float:
    """Conserved product x1*x2*x3; at most 1/27, with equality only at the centre."""
    return p.x1 * p.x2 * p.x3


def z_of_array(x: np.ndarray) -> np.ndarray:
    """z on raw coordinate arrays of shape (..., 3)."""
    x = np.asarray(x)
    return x[..., 0] * x[..., 1] * x[..., 2]


def to_point(s: CountState) -> SimplexPoint:
    """Normalized coordinates n_i / n of a count state."""
    if s.n == 0:
        raise ValueError("cannot normalize the empty population")
    return SimplexPoint(s.n1 / s.n, s.n2 / s.n, s.n3 / s.n)


def apply_jump(s: CountState, j: JumpVector) -> CountState:
    """State after one jump through channel j; total population is conserved."""
    c = list(s.counts())
    if c[j.source] < 1:
        raise ValueError(f"jump {j.index} from empty species {j.source} in {s}")
    c[j.source] -= 1
    c[j.target] += 1
    return CountState(c[0], c[1], c[2])


def nearest_state(n: int, p: SimplexPoint) -> CountState:
    """Grid state of total n closest to p (largest-remainder rounding)."""
    if n <= 0:
        raise ValueError("population size must be positive")
    raw = np.array([p.x1, p.x2, p.x3]) * n
    base = np.floor(raw).astype(np.int64)
    missing = n - int(base.sum())
    order = np.argsort(-(raw - base))
    for k in range(missing):
        base[order[k]] += 1
    return CountState(int(base[0]), int(base[1]), int(base[2]))
