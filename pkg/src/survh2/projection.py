"""Orthonormal covariate basis and residual projection.

Fixed covariates are removed from every moment equation through the
projector V = I - H H', where H holds the left singular vectors of the
covariate matrix. Only H is ever materialized; V is applied as a
rank-r update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputFormatError

__all__ = ["CovariateBasis", "build_basis", "empty_basis", "project_out"]


@dataclass(frozen=True)
class CovariateBasis:
    """Orthonormal basis H (n x r) of the covariate column span."""

    h: np.ndarray
    rank: int
    n: int

    @property
    def trace_v(self) -> int:
        """Trace of the residual projector, n - r."""
        return self.n - self.rank


def empty_basis(n: int) -> CovariateBasis:
    """Basis for a model with no covariates at all (V is the identity)."""
    if n < 1:
        raise InputFormatError("sample size must be positive")
    return CovariateBasis(h=np.zeros((n, 0)), rank=0, n=n)


def build_basis(w) -> CovariateBasis:
    """Orthonormalize a covariate matrix, dropping collinear directions.

    Parameters
    ----------
    w : (n, c) covariate matrix, or None for the no-covariate model.

    Singular directions with s <= max(n, c) * eps * s_max are treated as
    numerically zero, so duplicated or collinear columns reduce the rank
    instead of poisoning the projector.
    """
    if w is None:
        raise InputFormatError("covariate matrix is required; use empty_basis for none")
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or w.shape[0] < 1:
        raise InputFormatError("covariates must form a 2-d matrix with rows as subjects")
    if w.shape[1] == 0:
        return empty_basis(w.shape[0])
    if not np.all(np.isfinite(w)):
        raise InputFormatError("covariates contain non-finite values")
    u, s, _ = linalg.svd(w, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise InputFormatError("covariate matrix is identically zero")
    tol = max(w.shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > tol))
    if rank == 0:
        raise InputFormatError("covariate matrix is identically zero")
    return CovariateBasis(h=np.ascontiguousarray(u[:, :rank]), rank=rank, n=w.shape[0])


def project_out(basis: CovariateBasis, x):
    """Apply V = I - H H' to a vector or to columns of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != basis.n:
        raise InputFormatError(f"expected leading dimension {basis.n}, got {x.shape[0]}")
    if basis.rank == 0:
        return x.copy()
    return x - basis.h @ (basis.h.T @ x)
