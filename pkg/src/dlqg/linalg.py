"""Small dense-matrix helpers shared by the filter and Riccati layers."""

from __future__ import annotations

import numpy as np
import scipy.linalg

# Conditioning beyond this is treated as singular rather than regularized.
COND_LIMIT = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be inverted is singular or too badly conditioned.

    Attributes:
        name: label of the offending matrix (e.g. ``"Ups"``).
        k: time/iteration index at which it occurred, or None.
        cond: condition number estimate (``inf`` if exactly singular).
    """

    def __init__(self, name: str, cond: float, k: int | None = None):
        self.name = name
        self.cond = cond
        self.k = k
        where = f" at k={k}" if k is not None else ""
        super().__init__(f"{name} singular or ill-conditioned{where} (cond={cond:.3e})")


def symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def fro(X) -> float:
    return float(np.linalg.norm(np.atleast_2d(X), "fro"))


def asymmetry(X: np.ndarray) -> float:
    """Relative asymmetry ||X - X'||_F / (1 + ||X||_F)."""
    return fro(X - X.T) / (1.0 + fro(X))


def min_eig(X: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(X)).min())


def is_psd(X: np.ndarray, rtol: float = 1e-10) -> bool:
    """Eigenvalue floor test: lambda_min >= -rtol * (1 + ||X||_F)."""
    return min_eig(X) >= -rtol * (1.0 + fro(X))


def is_pd(X: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(symmetrize(X))
    except np.linalg.LinAlgError:
        return False
    return min_eig(X) > 0.0


def solve_guarded(Amat: np.ndarray, Bmat: np.ndarray, name: str, k: int | None = None,
                  symmetric: bool = False) -> np.ndarray:
    """Solve ``Amat X = Bmat``, refusing singular or badly conditioned systems.

    ``symmetric`` only selects the LAPACK path; it does not alter ``Amat``.
    """
    cond = np.linalg.cond(Amat)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(name, float(cond), k)
    if symmetric:
        return scipy.linalg.solve(Amat, Bmat, assume_a="sym")
    return np.linalg.solve(Amat, Bmat)


def spectral_radius(X: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(X))))


def flat_names(prefix: str, shape: tuple[int, ...]) -> list[str]:
    """Row-major column names ``prefix_i_j`` (or ``prefix_i`` for vectors)."""
    if len(shape) == 1:
        return [f"{prefix}_{i}" for i in range(shape[0])]
    return [f"{prefix}_{i}_{j}" for i in range(shape[0]) for j in range(shape[1])]
