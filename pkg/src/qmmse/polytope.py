"""Polyhedral convex hull of the phase-quantized transmit set X^M."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, DimensionError

__all__ = ["Polyhedron", "build_polyhedron", "subproblem_columns", "hull_membership",
           "active_facets"]

FACET_TOL = 1e-9


@dataclass(frozen=True)
class Polyhedron:
    """``A x_r <= b`` for real-stacked ``x_r`` of length 2M.

    Rows are ordered with the facet index outermost and the antenna
    innermost: row ``i * M + m`` holds ``beta_i`` on the columns of
    antenna ``m``.
    """

    A: np.ndarray
    b: np.ndarray
    alpha_x: int
    M: int
    E_tx: float = 1.0

    @property
    def R(self) -> np.ndarray:
        return np.hstack([self.A, -self.b[:, None]])

    @property
    def facet_normals(self) -> np.ndarray:
        """The ``alpha_x`` row vectors ``beta_i``, shape (alpha_x, 2)."""
        return _facet_normals(self.alpha_x)

    @property
    def offset(self) -> float:
        """Common right-hand side value of every row."""
        return float(self.b[0])


def _facet_normals(alpha_x: int) -> np.ndarray:
    phi = 2.0 * np.pi * np.arange(1, alpha_x + 1) / alpha_x
    return np.stack([np.cos(phi), -np.sin(phi)], axis=1)


def build_polyhedron(M: int, alpha_x: int, E_tx: float = 1.0) -> Polyhedron:
    """Convex hull of ``X^M`` for the ``alpha_x``-PSK transmit alphabet.

    The right-hand side is ``sqrt(E_tx) * cos(pi / alpha_x) / sqrt(M)``,
    the distance from the origin to each edge of the polygon spanned by
    the per-antenna alphabet.
    """
    if alpha_x < 3:
        raise ConfigurationError(
            f"alpha_x={alpha_x}: the hull of a 2-point alphabet is a segment, unsupported"
        )
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    beta = _facet_normals(alpha_x)
    eye = np.eye(M)
    A = np.vstack([np.kron(eye, beta_i[None, :]) for beta_i in beta])
    b = np.full(M * alpha_x, np.sqrt(E_tx) * np.cos(np.pi / alpha_x) / np.sqrt(M))
    A.setflags(write=False)
    b.setflags(write=False)
    return Polyhedron(A, b, int(alpha_x), int(M), float(E_tx))


def subproblem_columns(P: Polyhedron, d: int):
    """Constraints on the last ``M - d`` antennas once ``d`` are fixed.

    Returns ``(A', b', R')``.  Rows that only involve fixed antennas are
    dropped.
    """
    if not 0 <= d < P.M:
        raise DimensionError(f"need 0 <= d < M={P.M}, got d={d}")
    rows = np.array([i * P.M + m for i in range(P.alpha_x) for m in range(d, P.M)])
    A_sub = P.A[rows][:, 2 * d:]
    b_sub = P.b[rows]
    return A_sub, b_sub, np.hstack([A_sub, -b_sub[:, None]])


def hull_membership(P: Polyhedron, x_r, tol: float = FACET_TOL) -> bool:
    x_r = np.asarray(x_r, dtype=float)
    if x_r.shape[-1] != 2 * P.M:
        raise DimensionError(f"expected length {2 * P.M}, got {x_r.shape[-1]}")
    return bool(np.all(P.A @ x_r <= P.b + tol))


def active_facets(P: Polyhedron, x_r, tol: float = FACET_TOL) -> np.ndarray:
    """Boolean mask of rows with ``|A x_r - b| <= tol``."""
    return np.abs(P.A @ np.asarray(x_r, dtype=float) - P.b) <= tol
