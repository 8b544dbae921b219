"""Kalman estimators for the two controllers.

Controller 1 filters the stacked observation y = [y1; y2] and knows every
input, including the private correction ``utilde1``. Controller 2 filters y2
and only knows the common input u = [uhat1; u2]. The correction it cannot see
makes its error covariance depend on the gain Gamma that generates
``utilde1 = -Gamma (xhat1 - xhat2)``. That dependence is captured by
:func:`c2_cov_predict`.

All means may carry a leading batch axis: ``x`` of shape (m,) or (n, m).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import fro, solve_guarded, symmetrize
from .model import ProblemDef


@dataclass
class FilterState1:
    x_pred: np.ndarray
    x_filt: np.ndarray
    Sig_pred: np.ndarray
    Sig_filt: np.ndarray
    gain: np.ndarray  # m x (p+q)
    k: int


@dataclass
class FilterState2:
    x_pred: np.ndarray
    x_filt: np.ndarray
    Sig_pred: np.ndarray
    Sig_filt: np.ndarray
    gain: np.ndarray  # m x q
    k: int


def kalman_gain(Sig_pred: np.ndarray, H: np.ndarray, V: np.ndarray, k: int | None = None) -> np.ndarray:
    """G = Sig H' (H Sig H' + V)^{-1}, via a guarded symmetric solve.

    A prior with Sig H' = 0 carries no uncertainty the measurement could
    reduce, so the gain is zero even if the innovation covariance is singular.
    """
    if not np.any(Sig_pred @ H.T):
        return np.zeros((Sig_pred.shape[0], H.shape[0]))
    S = symmetrize(H @ Sig_pred @ H.T + V)
    return solve_guarded(S, H @ Sig_pred.T, "innovation covariance", k, symmetric=True).T


def joseph_update(Sig_pred: np.ndarray, gain: np.ndarray, H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """(I - GH) Sig (I - GH)' + G V G', symmetrized."""
    I_GH = np.eye(Sig_pred.shape[0]) - gain @ H
    return symmetrize(I_GH @ Sig_pred @ I_GH.T + gain @ V @ gain.T)


def predict_cov(Sig_filt: np.ndarray, problem: ProblemDef) -> np.ndarray:
    return symmetrize(problem.A @ Sig_filt @ problem.A.T + problem.Qw)


def c1_update(x_pred, Sig_pred, y, problem: ProblemDef, k: int = 0) -> FilterState1:
    """Measurement update of controller 1's filter from a given prior."""
    H, Qv = problem.aug.H, problem.aug.Qv
    Sig_pred = symmetrize(np.asarray(Sig_pred, dtype=float))
    G = kalman_gain(Sig_pred, H, Qv, k)
    x_pred = np.asarray(x_pred, dtype=float)
    x_filt = x_pred + (np.asarray(y, dtype=float) - x_pred @ H.T) @ G.T
    return FilterState1(x_pred, x_filt, Sig_pred, joseph_update(Sig_pred, G, H, Qv), G, k)


def c1_step(state: FilterState1, y, u_prev, utilde_prev, problem: ProblemDef) -> FilterState1:
    """One predict/update cycle of controller 1's filter.

    The prediction uses the full input: A xhat1 + B u_prev + B1 utilde_prev.
    """
    A, B1, B = problem.A, problem.B1, problem.aug.B
    x_pred = state.x_filt @ A.T + np.asarray(u_prev) @ B.T + np.asarray(utilde_prev) @ B1.T
    return c1_update(x_pred, predict_cov(state.Sig_filt, problem), y, problem, state.k + 1)


def c2_update(x_pred, Sig_pred, y2, problem: ProblemDef, k: int = 0) -> FilterState2:
    """Measurement update of controller 2's filter from a given prior."""
    H2, Qv2 = problem.H2, problem.Qv2
    Sig_pred = symmetrize(np.asarray(Sig_pred, dtype=float))
    G2 = kalman_gain(Sig_pred, H2, Qv2, k)
    x_pred = np.asarray(x_pred, dtype=float)
    x_filt = x_pred + (np.asarray(y2, dtype=float) - x_pred @ H2.T) @ G2.T
    return FilterState2(x_pred, x_filt, Sig_pred, joseph_update(Sig_pred, G2, H2, Qv2), G2, k)


def c2_step(state: FilterState2, y2, u_prev, Sig_pred, problem: ProblemDef) -> FilterState2:
    """One predict/update cycle of controller 2's filter.

    The mean prediction is A xhat2 + B u_prev; controller 2 never sees
    ``utilde1``. ``Sig_pred`` must come from :func:`c2_cov_predict`, because
    the predicted covariance depends on the gain Gamma.
    """
    x_pred = state.x_filt @ problem.A.T + np.asarray(u_prev) @ problem.aug.B.T
    return c2_update(x_pred, Sig_pred, y2, problem, state.k + 1)


def c2_cov_predict(Sig2_filt, Sig1_filt, Gamma, problem: ProblemDef) -> np.ndarray:
    """Predicted error covariance of controller 2 with the correction decoupled.

    (A - B1 Gamma)(Sig2 - Sig1)(A - B1 Gamma)' + A Sig1 A' + Qw, where
    Sig2 - Sig1 is the covariance of the estimate gap xhat1 - xhat2.
    """
    F = problem.A - problem.B1 @ np.asarray(Gamma, dtype=float)
    gap = np.asarray(Sig2_filt) - np.asarray(Sig1_filt)
    return symmetrize(F @ gap @ F.T + problem.A @ Sig1_filt @ problem.A.T + problem.Qw)


@dataclass
class C1Covariances:
    """Arrays indexed by k = 0..N: Sig_pred[k] = Sig1_{k|k-1}, Sig_filt[k] = Sig1_{k|k}, gain[k] = G_{k|k-1}."""

    Sig_pred: np.ndarray
    Sig_filt: np.ndarray
    gain: np.ndarray


def c1_cov_rollforward(Sigma0, problem: ProblemDef, N: int) -> C1Covariances:
    """Controller 1's covariance and gain sequences; these do not depend on any input."""
    m, pq = problem.dims.m, problem.dims.p + problem.dims.q
    Sig_pred = np.empty((N + 1, m, m))
    Sig_filt = np.empty((N + 1, m, m))
    gain = np.empty((N + 1, m, pq))
    H, Qv = problem.aug.H, problem.aug.Qv
    Sig_pred[0] = symmetrize(np.asarray(Sigma0, dtype=float))
    for k in range(N + 1):
        if k > 0:
            Sig_pred[k] = predict_cov(Sig_filt[k - 1], problem)
        gain[k] = kalman_gain(Sig_pred[k], H, Qv, k)
        Sig_filt[k] = joseph_update(Sig_pred[k], gain[k], H, Qv)
    return C1Covariances(Sig_pred, Sig_filt, gain)


@dataclass
class FilterPipeline:
    """Covariances and gains of both filters for k = 0..N+1 under a Gamma schedule.

    ``Sig*_pred[k]`` is the k|k-1 covariance, ``Sig*_filt[k]`` the k|k one,
    ``G[k]`` and ``G2[k]`` the gains applied at time k.
    """

    Sig1_pred: np.ndarray
    Sig1_filt: np.ndarray
    G: np.ndarray
    Sig2_pred: np.ndarray
    Sig2_filt: np.ndarray
    G2: np.ndarray

    @property
    def horizon(self) -> int:
        return self.G.shape[0] - 2


def covariance_pipeline(problem: ProblemDef, Gammas: np.ndarray, Sigma_init=None) -> FilterPipeline:
    """Run both covariance recursions for k = 0..N+1 given Gamma_0..Gamma_N.

    ``Sigma_init`` is the common prior covariance (defaults to Sigma0).
    """
    Gammas = np.asarray(Gammas, dtype=float)
    N = Gammas.shape[0] - 1
    c1 = c1_cov_rollforward(problem.Sigma0 if Sigma_init is None else Sigma_init, problem, N + 1)
    m, q = problem.dims.m, problem.dims.q
    Sig2_pred = np.empty((N + 2, m, m))
    Sig2_filt = np.empty((N + 2, m, m))
    G2 = np.empty((N + 2, m, q))
    Sig2_pred[0] = c1.Sig_pred[0]
    for k in range(N + 2):
        if k > 0:
            Sig2_pred[k] = c2_cov_predict(Sig2_filt[k - 1], c1.Sig_filt[k - 1], Gammas[k - 1], problem)
        G2[k] = kalman_gain(Sig2_pred[k], problem.H2, problem.Qv2, k)
        Sig2_filt[k] = joseph_update(Sig2_pred[k], G2[k], problem.H2, problem.Qv2)
    return FilterPipeline(c1.Sig_pred, c1.Sig_filt, c1.gain, Sig2_pred, Sig2_filt, G2)


def is_detectable(A: np.ndarray, H: np.ndarray, tol: float = 1e-8) -> bool:
    """PBH test: [lambda I - A; H] has full column rank at every |lambda| >= 1."""
    m = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        pbh = np.vstack([lam * np.eye(m) - A, H.astype(complex)])
        s = np.linalg.svd(pbh, compute_uv=False)
        if s.min() <= tol * max(1.0, s.max()):
            return False
    return True


class ConvergenceError(RuntimeError):
    def __init__(self, what: str, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{what} did not converge in {iterations} iterations (last residual {residual:.3e})")


@dataclass
class SteadyFilters:
    Sig1: np.ndarray       # predicted
    Sig1_filt: np.ndarray
    G: np.ndarray
    Sig2: np.ndarray       # predicted
    Sig2_filt: np.ndarray
    G2: np.ndarray
    iterations: int


def steady_filters(problem: ProblemDef, Gamma, tol: float = 1e-12, max_iter: int = 100_000,
                   Sigma_init=None) -> SteadyFilters:
    """Fixed points of both covariance recursions for a constant Gamma.

    Controller 1's recursion is iterated first. Controller 2's recursion is
    then iterated with Sig1_filt frozen at its fixed point.
    """
    H, Qv = problem.aug.H, problem.aug.Qv
    if not is_detectable(problem.A, H):
        raise ValueError("(A, H) is not detectable")
    Sig = symmetrize(np.asarray(problem.Sigma0 if Sigma_init is None else Sigma_init, dtype=float))
    start = Sig.copy()
    it1 = _iterate(lambda S: predict_cov(joseph_update(S, kalman_gain(S, H, Qv), H, Qv), problem),
                   Sig, tol, max_iter, "controller-1 covariance")
    Sig1, n1 = it1
    G = kalman_gain(Sig1, H, Qv)
    Sig1_filt = joseph_update(Sig1, G, H, Qv)
    H2, Qv2 = problem.H2, problem.Qv2

    def step2(S):
        return c2_cov_predict(joseph_update(S, kalman_gain(S, H2, Qv2), H2, Qv2), Sig1_filt, Gamma, problem)

    Sig2, n2 = _iterate(step2, start, tol, max_iter, "controller-2 covariance")
    G2 = kalman_gain(Sig2, H2, Qv2)
    return SteadyFilters(Sig1, Sig1_filt, G, Sig2, joseph_update(Sig2, G2, H2, Qv2), G2, n1 + n2)


def _iterate(f, X, tol, max_iter, what):
    for i in range(1, max_iter + 1):
        Xn = f(X)
        diff = fro(Xn - X)
        X = Xn
        if not np.all(np.isfinite(X)) or fro(X) > 1e12:
            raise ConvergenceError(what + " (diverged)", i, diff)
        if diff <= tol * (1.0 + fro(X)):
            return X, i
    raise ConvergenceError(what, max_iter, diff)
