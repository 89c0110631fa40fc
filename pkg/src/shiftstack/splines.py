"""Restricted cubic spline basis for the continuous importance-weight curve.

The basis has M = J columns for J knots: an intercept, the identity, and
J-2 truncated-cube terms normalized by the squared knot span so the design
stays well conditioned.  The nonlinear terms cancel to exact linearity
outside the boundary knots.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDataError


@dataclass(frozen=True)
class SplineSpec:
    """Strictly increasing knot vector; basis size equals the knot count."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 3:
            raise ValueError("need at least 3 knots")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")

    @property
    def n_knots(self) -> int:
        return self.knots.size

    @property
    def basis_size(self) -> int:
        return self.knots.size

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist()}

    @staticmethod
    def from_dict(doc: dict) -> "SplineSpec":
        return SplineSpec(knots=np.asarray(doc["knots"], dtype=float))


def knots_from_quantiles(y_source: np.ndarray, n_knots: int) -> SplineSpec:
    """Place knots at the equally spaced empirical quantile levels k/(J+1).

    Duplicate knots produced by heavy ties collapse with a warning (smaller
    basis); fewer distinct values than requested knots is an error.
    """
    y = np.asarray(y_source, dtype=float).ravel()
    if n_knots < 3:
        raise ValueError("n_knots must be >= 3")
    n_distinct = np.unique(y).size
    if n_distinct < n_knots:
        raise DegenerateDataError(
            f"y has only {n_distinct} distinct values; choose n_knots <= {n_distinct}"
        )
    levels = np.arange(1, n_knots + 1) / (n_knots + 1)
    knots = np.quantile(y, levels)
    unique = np.unique(knots)
    if unique.size < knots.size:
        warnings.warn(
            f"collapsed {knots.size - unique.size} duplicate quantile knots; "
            f"basis reduced to {unique.size} knots",
            stacklevel=2,
        )
        knots = unique
    if knots.size < 3:
        raise DegenerateDataError("fewer than 3 distinct knots after collapsing ties")
    return SplineSpec(knots=knots)


def rcs_basis(spec: SplineSpec, y: np.ndarray) -> np.ndarray:
    """Basis matrix: [1, y, C_1(y), ..., C_{J-2}(y)].

    C_j uses truncated cubes anchored at knot j with the last two knots as
    the cancellation pair, scaled by 1/(t_J - t_1)^2; each column is linear
    beyond the boundary knots by construction, so extrapolation is safe.
    """
    y = np.asarray(y, dtype=float).ravel()
    t = spec.knots
    J = t.size
    span_sq = (t[-1] - t[0]) ** 2
    basis = np.empty((y.size, J))
    basis[:, 0] = 1.0
    basis[:, 1] = y

    def cube(u):
        return np.maximum(u, 0.0) ** 3

    denom = t[-1] - t[-2]
    for j in range(J - 2):
        term = (
            cube(y - t[j])
            - cube(y - t[-2]) * (t[-1] - t[j]) / denom
            + cube(y - t[-1]) * (t[-2] - t[j]) / denom
        )
        basis[:, 2 + j] = term / span_sq
    return basis
