"""Decentralized control laws, optimal cost and costate.

Both controllers use controller 2's estimate for the common part of the
input:

    u       = [uhat1; u2] = -K xhat2,           K     = Ups^{-1} M
    utilde1 = -Gamma (xhat1 - xhat2),           Gamma = Lam^{-1} L
    u1 = uhat1 + utilde1,   u2 = second block of u.

Controller 1 adds a private correction driven by the gap between the two
estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import FilterPipeline
from .linalg import fro, solve_guarded
from .model import ProblemDef
from .riccati import RiccatiTrajectory, SteadyState

FINITE = "finite-horizon"
STEADY = "steady-state"


@dataclass
class GainSchedule:
    """Gains K_k, Gamma_k for k = 0..N.

    ``mode`` records whether the gains come from the finite-horizon solution
    or are steady-state gains repeated over the horizon. Steady gains are
    suboptimal for a finite horizon.
    """

    K: np.ndarray      # (N+1, l+r, m)
    Gamma: np.ndarray  # (N+1, l, m)
    mode: str = FINITE

    @property
    def N(self) -> int:
        return self.K.shape[0] - 1

    @classmethod
    def constant(cls, K, Gamma, N: int, mode: str = STEADY) -> "GainSchedule":
        K = np.asarray(K, dtype=float)
        Gamma = np.asarray(Gamma, dtype=float)
        return cls(np.repeat(K[None], N + 1, axis=0), np.repeat(Gamma[None], N + 1, axis=0), mode)

    def zeroed(self) -> "GainSchedule":
        return GainSchedule(np.zeros_like(self.K), np.zeros_like(self.Gamma), self.mode)


@dataclass
class SteadyGains:
    K: np.ndarray
    Gamma: np.ndarray

    def schedule(self, N: int) -> GainSchedule:
        return GainSchedule.constant(self.K, self.Gamma, N, STEADY)


@dataclass
class CostateSample:
    lam: np.ndarray  # lambda_{k-1}
    k: int


@dataclass
class ControlInputs:
    u1: np.ndarray
    u2: np.ndarray
    u: np.ndarray
    utilde1: np.ndarray


def synthesize(rt: RiccatiTrajectory) -> GainSchedule:
    """Solve Ups_k K_k = M_k and Lam_k Gamma_k = L_k for every k."""
    K = np.stack([solve_guarded(rt.Ups[k], rt.M[k], "Ups", k, symmetric=True) for k in range(rt.N + 1)])
    Gamma = np.stack([solve_guarded(rt.Lam[k], rt.L[k], "Lam", k) for k in range(rt.N + 1)])
    return GainSchedule(K, Gamma, FINITE)


def steady_gains(ss: SteadyState) -> SteadyGains:
    return SteadyGains(ss.K, ss.Gamma)


def gain_residual(rt: RiccatiTrajectory, gains: GainSchedule) -> float:
    """Largest relative residual of Ups K = M and Lam Gamma = L over k."""
    worst = 0.0
    for k in range(rt.N + 1):
        worst = max(worst,
                    fro(rt.Ups[k] @ gains.K[k] - rt.M[k]) / (1.0 + fro(rt.M[k])),
                    fro(rt.Lam[k] @ gains.Gamma[k] - rt.L[k]) / (1.0 + fro(rt.L[k])))
    return worst


def control_inputs(K, Gamma, x1hat, x2hat) -> ControlInputs:
    """Apply the control law. Estimates may be (m,) or batched (n, m).

    ``u`` depends on ``x2hat`` alone, so controller 2 can compute it.
    """
    K = np.asarray(K)
    Gamma = np.asarray(Gamma)
    l = Gamma.shape[0]
    x1hat = np.asarray(x1hat, dtype=float)
    x2hat = np.asarray(x2hat, dtype=float)
    u = -(x2hat @ K.T)
    utilde1 = -((x1hat - x2hat) @ Gamma.T)
    u1 = u[..., :l] + utilde1
    u2 = u[..., l:]
    return ControlInputs(u1=u1, u2=u2, u=u, utilde1=utilde1)


def optimal_cost(problem: ProblemDef, rt: RiccatiTrajectory, filters: FilterPipeline) -> float:
    """Theoretical optimal cost J*_N for horizon N = ``rt.N``.

    The k = 0 expectation is evaluated in closed form from the Gaussian prior:

        E[x0' P0 xhat2_0] = mu' P0 mu + tr(P0 (Sigma0 - Sig2_{0|0}))
        E[x0' S0 (xhat1_0 - xhat2_0)] = tr(S0 (Sig2_{0|0} - Sig1_{0|0}))

    The remaining terms are trace terms in Sig1_{k|k}, S, Phi and controller 1's
    gain G_{k+1|k}. ``filters`` must span k = 0..N+1 and be generated by the
    same Gamma schedule as ``rt``.
    """
    N = rt.N
    if filters.Sig1_filt.shape[0] < N + 2:
        raise ValueError("filters must provide Sig1_{k|k} up to k = N+1")
    A, Q, Qw, mu = problem.A, problem.Q, problem.Qw, problem.mu
    H = problem.aug.H
    P, S, Phi = rt.P, rt.S, rt.Phi
    Sig1f, Sig2f, G = filters.Sig1_filt, filters.Sig2_filt, filters.G
    J = (mu @ P[0] @ mu + np.trace(P[0] @ (problem.Sigma0 - Sig2f[0]))
         + np.trace(S[0] @ (Sig2f[0] - Sig1f[0])))
    J += np.trace(Sig1f[N + 1] @ problem.Theta)
    for k in range(N + 1):
        SGH = S[k + 1] @ G[k + 1] @ H
        J += np.trace(Sig1f[k] @ (Q - A.T @ (S[k + 1] - Phi[k + 1] - SGH) @ A))
        J += np.trace(Qw @ (SGH + Phi[k + 1] - S[k + 1]))
    return float(J)


def transpose_discrepancy(rt: RiccatiTrajectory) -> float:
    """max_k ||Lam_k^{-T} L0_k - Lam_k^{-1} L_k||_F.

    The two forms of the completed square agree only when Phi is symmetric.
    """
    worst = 0.0
    for k in range(rt.N + 1):
        a = np.linalg.solve(rt.Lam[k].T, rt.L0[k])
        b = np.linalg.solve(rt.Lam[k], rt.L[k])
        worst = max(worst, fro(a - b))
    return worst


def costate(rt: RiccatiTrajectory, x1hat, x2hat, k: int) -> CostateSample:
    """lambda_{k-1} = P_k xhat2_{k|k} + S_k (xhat1_{k|k} - xhat2_{k|k}), 0 <= k <= N+1."""
    if not 0 <= k <= rt.N + 1:
        raise IndexError(f"k={k} outside 0..{rt.N + 1}")
    x1hat = np.asarray(x1hat, dtype=float)
    x2hat = np.asarray(x2hat, dtype=float)
    lam = x2hat @ rt.P[k].T + (x1hat - x2hat) @ rt.S[k].T
    return CostateSample(lam, k)
