"""Empirical measures on R^d: moments, r-norms, Wasserstein distances, lifts.

An n-point atom array plays two roles at once: the empirical measure
mu_x = (1/n) sum_i delta_{x_i}, and the piecewise-constant random variable
sum_i x_i 1_{((i-1)/n, i/n)} on (0,1) whose push-forward is mu_x. Order matters
for the second reading (VectorTuple), not for the first (EmpiricalMeasure).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


class UnsupportedShapeError(ValueError):
    """Transport between unequal atom counts in dimension d > 1."""


def _as_atoms(obj) -> np.ndarray:
    """Coerce to a (n, d) float array; accepts EmpiricalMeasure, VectorTuple, arrays."""
    if isinstance(obj, (EmpiricalMeasure, VectorTuple)):
        return obj.atoms
    a = np.asarray(obj, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError(f"atoms must have shape (n, d), got {a.shape}")
    return a


def _check_finite(a: np.ndarray):
    if not np.all(np.isfinite(a)):
        raise ValueError("atom coordinates must be finite")


@dataclass(frozen=True)
class EmpiricalMeasure:
    """n equally weighted Dirac atoms in R^d; equality is permutation-invariant."""

    atoms: np.ndarray

    def __post_init__(self):
        a = _as_atoms(self.atoms)
        _check_finite(a)
        object.__setattr__(self, "atoms", a)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def canonical(self) -> np.ndarray:
        """Atoms sorted lexicographically (the comparison key)."""
        order = np.lexsort(self.atoms.T[::-1])
        return self.atoms[order]

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        if self.atoms.shape != other.atoms.shape:
            return False
        return bool(np.array_equal(self.canonical(), other.canonical()))

    def __hash__(self):
        return hash(self.canonical().tobytes())

    def to_json(self):
        return self.atoms.tolist()

    @classmethod
    def from_json(cls, data) -> "EmpiricalMeasure":
        return cls(np.asarray(data, dtype=np.float64))


@dataclass(frozen=True)
class VectorTuple:
    """Ordered state tuple x in (R^d)^n; forgetting order yields the measure."""

    components: np.ndarray

    def __post_init__(self):
        a = _as_atoms(self.components)
        _check_finite(a)
        object.__setattr__(self, "components", a)

    @property
    def atoms(self) -> np.ndarray:
        return self.components

    @property
    def n(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.components.copy())


def _check_r(r: float):
    if not (1.0 <= r <= 2.0):
        raise ValueError(f"r must lie in [1, 2], got {r}")


def moment_r(mu, r: float) -> float:
    """r-th moment M_r(mu) = (1/n) sum_i |x_i|^r."""
    _check_r(r)
    a = _as_atoms(mu)
    return float(np.mean(np.linalg.norm(a, axis=1) ** r))


def rnorm(x, r: float) -> float:
    """|x|_r = n^{-1/r} (sum_i |x_i|^r)^{1/r}; satisfies rnorm(x,r)^r = M_r(mu_x)."""
    _check_r(r)
    a = _as_atoms(x)
    return float(np.mean(np.linalg.norm(a, axis=1) ** r) ** (1.0 / r))


def duplicate_atoms(x, m: int):
    """Repeat each atom m times; the induced empirical measure is unchanged."""
    if m < 1:
        raise ValueError("duplication factor must be >= 1")
    a = _as_atoms(x)
    out = np.repeat(a, m, axis=0)
    return VectorTuple(out) if isinstance(x, VectorTuple) else out


def _quantile_distance_1d(a: np.ndarray, b: np.ndarray, r: float) -> float:
    """Sorted common-refinement coupling, optimal in d=1 for any atom counts."""
    n, m = a.shape[0], b.shape[0]
    lcm = n * m // math.gcd(n, m)
    if lcm > 10_000_000:
        raise UnsupportedShapeError(
            f"common refinement of sizes {n} and {m} is too large ({lcm})"
        )
    av = np.repeat(np.sort(a[:, 0]), lcm // n)
    bv = np.repeat(np.sort(b[:, 0]), lcm // m)
    return float(np.mean(np.abs(av - bv) ** r) ** (1.0 / r))


def wasserstein_r(mu, nu, r: float) -> float:
    """Wasserstein distance d_r between empirical measures.

    Equal atom counts: exact optimal bijection via a shortest-augmenting-path
    assignment solve on the cost matrix |x_i - y_j|^r. Unequal counts are
    supported in d=1 only (quantile coupling).
    """
    _check_r(r)
    a, b = _as_atoms(mu), _as_atoms(nu)
    if a.shape[1] != b.shape[1]:
        raise UnsupportedShapeError(
            f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    if a.shape[0] != b.shape[0]:
        if a.shape[1] == 1:
            return _quantile_distance_1d(a, b, r)
        raise UnsupportedShapeError(
            "transport between unequal atom counts requires d = 1"
        )
    diff = a[:, None, :] - b[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** r
    rows, cols = linear_sum_assignment(cost)
    return float((cost[rows, cols].mean()) ** (1.0 / r))


def brute_force_wasserstein(mu, nu, r: float) -> float:
    """Exact minimum over all n! bijections; oracle for the assignment route."""
    _check_r(r)
    a, b = _as_atoms(mu), _as_atoms(nu)
    n = a.shape[0]
    if b.shape[0] != n:
        raise UnsupportedShapeError("oracle requires equal atom counts")
    if n > 8:
        raise ValueError(f"brute force refused for n = {n} > 8")
    diff = a[:, None, :] - b[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** r
    idx = np.arange(n)
    best = min(cost[idx, perm].sum() for perm in itertools.permutations(range(n)))
    return float((best / n) ** (1.0 / r))
