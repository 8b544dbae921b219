"""Coupled Riccati recursions for the asymmetric-information LQG problem.

Two value matrices are carried. P is the ordinary LQR Riccati matrix for the
common input u = [uhat1; u2]. S prices the estimate gap xhat1 - xhat2 and
enters through

    Phi = (P - S) G2 H2 + S,

which involves controller 2's filter gain G2. Phi is not symmetric in
general. Both ``L0 = B1' Phi' A`` and ``L = B1' Phi A`` are kept.

The filter gain G2 in turn depends on Gamma = Lam^{-1} L through the
controller-2 covariance recursion. In finite horizon this gives a backward
recursion (control) coupled to a forward one (estimation). This module offers:

* :func:`backward_pass`: the backward recursion for a given G2 sequence;
* :func:`forward_iteration`: a joint forward iteration whose fixed point
  solves the algebraic (steady-state) equations;
* :func:`solve_finite_horizon`: alternating backward/forward sweeps until the
  G2 sequence used by the backward pass is the one the filters produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import (
    FilterPipeline,
    covariance_pipeline,
    is_detectable,
    joseph_update,
    kalman_gain,
    predict_cov,
)
from .linalg import fro, min_eig, solve_guarded, symmetrize
from .model import ProblemDef

DIVERGENCE_LIMIT = 1e12


@dataclass
class RiccatiTrajectory:
    """Backward-pass quantities.

    ``P``, ``S`` and ``Phi`` have N+2 entries, with index N+1 holding the
    terminal value Theta. The remaining arrays have N+1 entries, for k = 0..N.
    """

    P: np.ndarray
    S: np.ndarray
    Phi: np.ndarray
    M: np.ndarray
    Ups: np.ndarray
    L0: np.ndarray
    L: np.ndarray
    Lam: np.ndarray

    @property
    def N(self) -> int:
        return self.M.shape[0] - 1


def _control_terms(problem: ProblemDef, P_next, Phi_next, k=None):
    A, B1 = problem.A, problem.B1
    B, R = problem.aug.B, problem.aug.R
    M = B.T @ P_next @ A
    Ups = B.T @ P_next @ B + R
    L0 = B1.T @ Phi_next.T @ A
    L = B1.T @ Phi_next @ A
    Lam = B1.T @ Phi_next @ B1 + problem.R1
    Ups_inv_M = solve_guarded(Ups, M, "Ups", k, symmetric=True)
    # Lam is not symmetric when Phi is not.
    Lam_inv_L = solve_guarded(Lam, L, "Lam", k)
    return M, Ups, L0, L, Lam, Ups_inv_M, Lam_inv_L


def backward_pass(problem: ProblemDef, g2_seq, N: int) -> RiccatiTrajectory:
    """Backward recursion from P_{N+1} = S_{N+1} = Theta, given G2_{k|k-1} for k = 0..N.

    Evaluates, for k = N..0,

        P_k   = A' P_{k+1} A - M_k' Ups_k^{-1} M_k + Q
        S_k   = A' Phi_{k+1} A - L0_k' Lam_k^{-1} L_k + Q
        Phi_k = (P_k - S_k) G2_{k|k-1} H2 + S_k

    Raises :class:`~dlqg.linalg.SingularMatrixError` if Ups_k or Lam_k is
    singular.
    """
    g2_seq = np.asarray(g2_seq, dtype=float)
    if g2_seq.shape[0] < N + 1:
        raise ValueError(f"g2_seq needs N+1={N + 1} entries, got {g2_seq.shape[0]}")
    m, l, r = problem.dims.m, problem.dims.l, problem.dims.r
    A, Q, H2 = problem.A, problem.Q, problem.H2
    P = np.empty((N + 2, m, m))
    S = np.empty((N + 2, m, m))
    Phi = np.empty((N + 2, m, m))
    M = np.empty((N + 1, l + r, m))
    Ups = np.empty((N + 1, l + r, l + r))
    L0 = np.empty((N + 1, l, m))
    L = np.empty((N + 1, l, m))
    Lam = np.empty((N + 1, l, l))
    P[N + 1] = S[N + 1] = Phi[N + 1] = problem.Theta
    for k in range(N, -1, -1):
        M[k], Ups[k], L0[k], L[k], Lam[k], Ups_inv_M, Lam_inv_L = _control_terms(problem, P[k + 1], Phi[k + 1], k)
        P[k] = symmetrize(A.T @ P[k + 1] @ A - M[k].T @ Ups_inv_M + Q)
        S[k] = A.T @ Phi[k + 1] @ A - L0[k].T @ Lam_inv_L + Q
        Phi[k] = (P[k] - S[k]) @ g2_seq[k] @ H2 + S[k]
    return RiccatiTrajectory(P, S, Phi, M, Ups, L0, L, Lam)


@dataclass
class SteadyState:
    """Fixed point of the joint iteration plus every derived quantity.

    ``Sig1``/``Sig2`` are the predicted (k|k-1) steady covariances and
    ``Sig1_filt``/``Sig2_filt`` the filtered ones.
    """

    P: np.ndarray
    S: np.ndarray
    Phi: np.ndarray
    M: np.ndarray
    Ups: np.ndarray
    L0: np.ndarray
    L: np.ndarray
    Lam: np.ndarray
    Sig1: np.ndarray
    Sig1_filt: np.ndarray
    Sig2: np.ndarray
    Sig2_filt: np.ndarray
    G: np.ndarray
    G2: np.ndarray
    iterations: int
    status: str = "converged"  # or "max_iter" / "diverged"
    message: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def K(self) -> np.ndarray:
        return solve_guarded(self.Ups, self.M, "Ups", symmetric=True)

    @property
    def Gamma(self) -> np.ndarray:
        return solve_guarded(self.Lam, self.L, "Lam")

    @property
    def S_asymmetry(self) -> float:
        return fro(self.S - self.S.T)


@dataclass
class IterationTrace:
    """Per-iterate history of the joint forward iteration (row k = iterate k)."""

    P: np.ndarray
    S: np.ndarray
    Sig1_pred: np.ndarray
    Sig1_filt: np.ndarray
    Sig2_pred: np.ndarray
    Sig2_filt: np.ndarray
    Ups: np.ndarray
    M: np.ndarray
    Lam: np.ndarray
    L: np.ndarray
    Phi: np.ndarray
    residual: np.ndarray  # joint relative change into iterate k (NaN at k=0)


def _seed(value, default: float, m: int) -> np.ndarray:
    """Scalars mean ``value * I``."""
    if value is None:
        value = default
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(m)
    return arr.reshape(m, m).copy()


def _rel_change(new, old) -> float:
    return fro(new - old) / (1.0 + fro(new))


def steady_from(problem: ProblemDef, P, S, Sig1, Sig2, iterations=0, status="converged",
                message="") -> SteadyState:
    """Assemble a :class:`SteadyState` from (P, S, Sig1_pred, Sig2_pred)."""
    H, Qv, H2, Qv2 = problem.aug.H, problem.aug.Qv, problem.H2, problem.Qv2
    G = kalman_gain(Sig1, H, Qv)
    G2 = kalman_gain(Sig2, H2, Qv2)
    Phi = (P - S) @ G2 @ H2 + S
    M, Ups, L0, L, Lam, _, _ = _control_terms(problem, P, Phi)
    ss = SteadyState(P=P, S=S, Phi=Phi, M=M, Ups=Ups, L0=L0, L=L, Lam=Lam,
                     Sig1=Sig1, Sig1_filt=joseph_update(Sig1, G, H, Qv),
                     Sig2=Sig2, Sig2_filt=joseph_update(Sig2, G2, H2, Qv2),
                     G=G, G2=G2, iterations=iterations, status=status, message=message)
    ss.residuals = are_residuals(ss, problem)
    return ss


def forward_iteration(problem: ProblemDef, seed_P=None, seed_S=None, seed_cov=None,
                      tol: float = 1e-9, max_iter: int = 10_000):
    """Joint forward iteration for the steady-state equations.

    Starting from ``seed_P``, ``seed_S`` (default I) and the covariance seed
    ``seed_cov`` (default 0.1 I) for both filters, each iterate computes

        G2_k, Phi_k = (P_k - S_k) G2_k H2 + S_k, M_k, Ups_k, L0_k, L_k, Lam_k,
        P_{k+1} = A' P_k A - M_k' Ups_k^{-1} M_k + Q,
        S_{k+1} = A' Phi_k A - L0_k' Lam_k^{-1} L_k + Q,
        Sig2_{k+1|k} = (A - B1 Lam_k^{-1} L_k)(Sig2_{k|k} - Sig1_{k|k})(...)' + A Sig1_{k|k} A' + Qw,

    plus the standard controller-1 covariance step. Iteration stops when the
    joint relative Frobenius change of (P, S, Sig2) is <= ``tol``.

    Returns ``(SteadyState, IterationTrace)``. Non-convergence and divergence
    (any norm > 1e12) are reported through ``SteadyState.status`` rather than
    raised, so the trace is always available.
    """
    m = problem.dims.m
    P = symmetrize(_seed(seed_P, 1.0, m))
    S = _seed(seed_S, 1.0, m)
    cov = symmetrize(_seed(seed_cov, 0.1, m))
    if not is_detectable(problem.A, problem.aug.H):
        raise ValueError("(A, H) is not detectable")

    A, Q, H2 = problem.A, problem.Q, problem.H2
    H, Qv, Qv2 = problem.aug.H, problem.aug.Qv, problem.Qv2
    Sig1, Sig2 = cov.copy(), cov.copy()
    hist = {k: [] for k in IterationTrace.__dataclass_fields__}
    status, message = "max_iter", ""
    k = 0
    res = np.nan
    for k in range(max_iter + 1):
        G = kalman_gain(Sig1, H, Qv, k)
        G2 = kalman_gain(Sig2, H2, Qv2, k)
        Sig1_filt = joseph_update(Sig1, G, H, Qv)
        Sig2_filt = joseph_update(Sig2, G2, H2, Qv2)
        Phi = (P - S) @ G2 @ H2 + S
        M, Ups, L0, L, Lam, Ups_inv_M, Gamma = _control_terms(problem, P, Phi, k)
        for name, val in (("P", P), ("S", S), ("Sig1_pred", Sig1), ("Sig1_filt", Sig1_filt),
                          ("Sig2_pred", Sig2), ("Sig2_filt", Sig2_filt), ("Ups", Ups), ("M", M),
                          ("Lam", Lam), ("L", L), ("Phi", Phi), ("residual", res)):
            hist[name].append(val)
        if k > 0 and res <= tol:
            status = "converged"
            break
        if k == max_iter:
            break
        P_next = symmetrize(A.T @ P @ A - M.T @ Ups_inv_M + Q)
        S_next = A.T @ Phi @ A - L0.T @ Gamma + Q
        F = A - problem.B1 @ Gamma
        Sig2_next = symmetrize(F @ (Sig2_filt - Sig1_filt) @ F.T + A @ Sig1_filt @ A.T + problem.Qw)
        Sig1_next = predict_cov(Sig1_filt, problem)
        res = max(_rel_change(P_next, P), _rel_change(S_next, S), _rel_change(Sig2_next, Sig2))
        P, S, Sig1, Sig2 = P_next, S_next, Sig1_next, Sig2_next
        if not all(np.all(np.isfinite(X)) and fro(X) <= DIVERGENCE_LIMIT for X in (P, S, Sig1, Sig2)):
            status = "diverged"
            message = f"iterate norm exceeded {DIVERGENCE_LIMIT:.0e} at iteration {k + 1}"
            break
    trace = IterationTrace(**{name: np.array(v) for name, v in hist.items()})
    if status == "max_iter":
        message = f"no convergence within {max_iter} iterations (last change {res:.3e})"
    if status == "diverged":
        # last finite iterate; derived quantities may be meaningless
        P, S, Sig1, Sig2 = trace.P[-1], trace.S[-1], trace.Sig1_pred[-1], trace.Sig2_pred[-1]
    ss = steady_from(problem, P, S, Sig1, Sig2, iterations=k, status=status, message=message)
    ss.residuals["last_change"] = float(res)
    return ss, trace


def are_residuals(ss: SteadyState, problem: ProblemDef) -> dict[str, float]:
    """Frobenius residuals of the steady-state equations at ``ss``.

    Keys: ``P``, ``S``, ``Sig2``, ``Sig1`` (fixed-point equations), ``G`` and
    ``G2`` (gain formulas), ``Phi`` (its defining identity).
    """
    A, Q, B1, Qw = problem.A, problem.Q, problem.B1, problem.Qw
    B, R, H, Qv = problem.aug.B, problem.aug.R, problem.aug.H, problem.aug.Qv
    H2, Qv2 = problem.H2, problem.Qv2
    P, S, Phi = ss.P, ss.S, ss.Phi
    M = B.T @ P @ A
    Ups = B.T @ P @ B + R
    G2 = ss.Sig2 @ H2.T @ np.linalg.inv(H2 @ ss.Sig2 @ H2.T + Qv2)
    G = ss.Sig1 @ H.T @ np.linalg.inv(H @ ss.Sig1 @ H.T + Qv)
    Phi_def = (P - S) @ G2 @ H2 + S
    L0 = B1.T @ Phi.T @ A
    L = B1.T @ Phi @ A
    Lam = B1.T @ Phi @ B1 + problem.R1
    rP = P - (A.T @ P @ A - M.T @ np.linalg.solve(Ups, M) + Q)
    rS = S - (A.T @ Phi @ A - L0.T @ np.linalg.solve(Lam, L) + Q)
    Sig1_filt = joseph_update(ss.Sig1, G, H, Qv)
    Sig2_filt = joseph_update(ss.Sig2, G2, H2, Qv2)
    F = A - B1 @ np.linalg.solve(Lam, L)
    rSig2 = ss.Sig2 - (F @ (Sig2_filt - Sig1_filt) @ F.T + A @ Sig1_filt @ A.T + Qw)
    rSig1 = ss.Sig1 - (A @ Sig1_filt @ A.T + Qw)
    return {
        "P": fro(rP), "S": fro(rS), "Sig2": fro(rSig2), "Sig1": fro(rSig1),
        "G": fro(ss.G - G), "G2": fro(ss.G2 - G2), "Phi": fro(Phi - Phi_def),
    }


@dataclass
class FiniteHorizonSolution:
    riccati: RiccatiTrajectory
    filters: FilterPipeline
    Gamma: np.ndarray  # (N+1, l, m)
    sweeps: int
    change: float  # max Gamma change in the last sweep


def solve_finite_horizon(problem: ProblemDef, N: int, tol: float = 1e-13, max_sweeps: int = 500,
                         Gamma_init=None) -> FiniteHorizonSolution:
    """Consistent finite-horizon solution by alternating sweeps.

    A forward covariance pass under the current Gamma schedule yields G2;
    the backward pass with that G2 yields a new Gamma schedule. The loop ends
    when Gamma changes by at most ``tol`` (relative, max over k).
    """
    m, l = problem.dims.m, problem.dims.l
    Gamma = np.zeros((N + 1, l, m)) if Gamma_init is None else np.array(Gamma_init, dtype=float)
    change = np.inf
    for sweep in range(1, max_sweeps + 1):
        filters = covariance_pipeline(problem, Gamma)
        rt = backward_pass(problem, filters.G2, N)
        new = np.stack([solve_guarded(rt.Lam[k], rt.L[k], "Lam", k) for k in range(N + 1)])
        change = max(_rel_change(a, b) for a, b in zip(new, Gamma))
        Gamma = new
        if change <= tol:
            break
    else:
        raise RuntimeError(f"finite-horizon sweeps did not settle in {max_sweeps} sweeps "
                           f"(last change {change:.3e})")
    filters = covariance_pipeline(problem, Gamma)
    rt = backward_pass(problem, filters.G2, N)
    return FiniteHorizonSolution(rt, filters, Gamma, sweep, change)


def psd_floor(seq) -> float:
    """Smallest eigenvalue over a sequence of symmetric matrices."""
    return min(min_eig(X) for X in seq)
