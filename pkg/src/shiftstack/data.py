"""Core data containers and input validation helpers.

``DomainData`` holds one domain's feature matrix and (for source domains)
its outcome vector.  Feature and outcome reads go through counting
properties so information-flow audits can prove, at runtime, that a code
path never looked at data it was supposed to ignore (unlabeled targets,
hidden outcomes in cross-domain stacking, target features when alignment
is disabled).
"""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatchError


def as_feature_matrix(X, name: str = "X") -> np.ndarray:
    """Validate and return a 2-d float64 feature matrix."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-d, got ndim={arr.ndim}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} has no rows")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_outcome_vector(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Validate and return a 1-d float64 outcome vector."""
    arr = np.asarray(y, dtype=float).ravel()
    if n is not None and arr.shape[0] != n:
        raise DimensionMismatchError(
            f"{name} has length {arr.shape[0]}, expected {n}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class DomainData:
    """Feature matrix plus optional outcome vector for one domain.

    Reads of ``X`` and ``y`` increment ``x_reads`` / ``y_reads``; shape
    metadata (``n``, ``p``, ``has_outcomes``) is free, so dimension checks
    never count as data access.
    """

    def __init__(self, X, y=None):
        self._x = as_feature_matrix(X)
        self._y = None if y is None else as_outcome_vector(y, self._x.shape[0])
        self.n: int = self._x.shape[0]
        self.p: int = self._x.shape[1]
        self.x_reads: int = 0
        self.y_reads: int = 0

    @property
    def X(self) -> np.ndarray:
        self.x_reads += 1
        return self._x

    @property
    def y(self) -> np.ndarray:
        if self._y is None:
            raise ValueError("domain has no outcomes")
        self.y_reads += 1
        return self._y

    @property
    def has_outcomes(self) -> bool:
        return self._y is not None

    def features_only(self) -> "DomainData":
        """View of this domain with outcomes stripped (fresh counters)."""
        return DomainData(self._x)

    def __repr__(self) -> str:
        tag = "labeled" if self.has_outcomes else "features-only"
        return f"DomainData(n={self.n}, p={self.p}, {tag})"
