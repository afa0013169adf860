"""Triangular-norm algebra over fuzzy membership vectors.

A fuzzy vector is a numpy array with every entry in [0, 1]; entry i is the
probability that the i-th cell of a fixed partition of the universe belongs
to the represented set.  The all-one vector is the universe, the all-zero
vector the empty set.

Three logic systems are provided.  Product and Godel are the ones used for
query embedding; Lukasiewicz is exposed for the algebra and its tests only,
since its outputs concentrate on {0, 1} and starve gradient-based learning.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence

import numpy as np

__all__ = [
    "Logic",
    "DRIFT_TOL",
    "fuzzy_vec",
    "check_fuzzy",
    "tnorm",
    "tconorm",
    "negate",
    "fold_conj",
    "fold_disj",
]

# Construction clamps entries to [0, 1] but refuses drift beyond this bound,
# so accumulated float error is absorbed while real bugs still surface.
DRIFT_TOL = 1e-9


class Logic(enum.Enum):
    PRODUCT = "product"
    GODEL = "godel"
    LUKASIEWICZ = "lukasiewicz"

    @classmethod
    def parse(cls, name: str) -> "Logic":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown logic {name!r}; expected one of "
                             f"{[l.value for l in cls]}") from None


def fuzzy_vec(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Build a fuzzy vector, clamping float drift into [0, 1].

    Raises ValueError if any entry lies outside [-DRIFT_TOL, 1 + DRIFT_TOL]
    before clamping.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("fuzzy vector has non-finite entries")
    if np.any(v < -DRIFT_TOL) or np.any(v > 1.0 + DRIFT_TOL):
        bad = v[(v < -DRIFT_TOL) | (v > 1.0 + DRIFT_TOL)]
        raise ValueError(f"entries outside [0,1] beyond drift tolerance: {bad[:4]}")
    return np.clip(v, 0.0, 1.0)


def check_fuzzy(v: np.ndarray) -> None:
    """Assert membership in [0,1]^d without copying."""
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError("vector is not inside [0,1]^d")


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def tnorm(logic: Logic, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise fuzzy conjunction.

    Product: a*b.  Godel: min(a, b).  Lukasiewicz: max(a + b - 1, 0).
    """
    _check_dims(a, b)
    if logic is Logic.PRODUCT:
        return a * b
    if logic is Logic.GODEL:
        return np.minimum(a, b)
    return np.maximum(a + b - 1.0, 0.0)


def tconorm(logic: Logic, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise fuzzy disjunction, the De Morgan dual of `tnorm`.

    Product: a + b - a*b.  Godel: max(a, b).  Lukasiewicz: min(a + b, 1).
    """
    _check_dims(a, b)
    if logic is Logic.PRODUCT:
        return a + b - a * b
    if logic is Logic.GODEL:
        return np.maximum(a, b)
    return np.minimum(a + b, 1.0)


def negate(v: np.ndarray) -> np.ndarray:
    """Canonical negator 1 - v (set complement)."""
    return 1.0 - v


def fold_conj(logic: Logic, vs: Sequence[np.ndarray]) -> np.ndarray:
    """Left fold of `tnorm` over one or more vectors."""
    if len(vs) == 0:
        raise ValueError("fold over empty sequence")
    out = vs[0]
    for v in vs[1:]:
        out = tnorm(logic, out, v)
    return out


def fold_disj(logic: Logic, vs: Sequence[np.ndarray]) -> np.ndarray:
    """Left fold of `tconorm` over one or more vectors."""
    if len(vs) == 0:
        raise ValueError("fold over empty sequence")
    out = vs[0]
    for v in vs[1:]:
        out = tconorm(logic, out, v)
    return out
