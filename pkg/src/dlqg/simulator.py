"""Closed-loop Monte Carlo for the decentralized LQG law.

Random streams
--------------
Replicate ``i`` of a run with global seed ``s`` draws its noise from
``numpy.random.Generator(PCG64(replicate_seed(s, i)))``, where

    replicate_seed(s, i) = splitmix64(splitmix64(s) XOR i)     (mod 2**64)

and ``splitmix64`` is the standard SplitMix64 output function. Each replicate
draws, in this order: m standard normals for x0, then for k = 0..N the
blocks v1_k (p), v2_k (q), w_k (m). Standard normals are mapped through a
lower-triangular factor of the matching covariance. Streams therefore depend
only on (seed, index), not on chunking or thread scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controller import FINITE, STEADY, GainSchedule, SteadyGains, control_inputs
from .estimator import FilterPipeline, c1_step, c1_update, c2_step, c2_update, covariance_pipeline
from .linalg import fro, spectral_radius, symmetrize
from .model import ProblemDef
from .riccati import SteadyState

MASK64 = (1 << 64) - 1
CHUNK = 8192


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replicate_seed(seed: int, index: int) -> int:
    return splitmix64(splitmix64(seed & MASK64) ^ (index & MASK64))


def noise_factor(C: np.ndarray) -> np.ndarray:
    """Lower-triangular F with F F' = C; PSD-singular C falls back to a QR-triangularized eigenfactor."""
    C = symmetrize(np.asarray(C, dtype=float))
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        # root root' = C; make it lower triangular via QR of root'
        _, r = np.linalg.qr(root.T)
        return r.T


@dataclass
class SimConfig:
    seed: int = 0
    N: int = 20
    replications: int = 1000
    mode: str = STEADY  # gains from the steady state, or FINITE for the finite-horizon schedule
    record_level: str = "summary"  # or "full"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.mode not in (STEADY, FINITE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.record_level not in ("summary", "full"):
            raise ValueError(f"unknown record level {self.record_level!r}")


@dataclass
class NoiseBatch:
    """Scaled noise for n replicates: x0 (n, m), w (n, N+1, m), v1 (n, N+1, p), v2 (n, N+1, q)."""

    x0: np.ndarray
    w: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    @property
    def n(self) -> int:
        return self.x0.shape[0]


def draw_noise(problem: ProblemDef, N: int, seed: int, indices) -> NoiseBatch:
    d = problem.dims
    m, p, q = d.m, d.p, d.q
    per_step = p + q + m
    indices = list(indices)
    z = np.empty((len(indices), m + (N + 1) * per_step))
    for row, i in enumerate(indices):
        rng = np.random.Generator(np.random.PCG64(replicate_seed(seed, i)))
        z[row] = rng.standard_normal(z.shape[1])
    steps = z[:, m:].reshape(len(indices), N + 1, per_step)
    return NoiseBatch(
        x0=problem.mu + z[:, :m] @ noise_factor(problem.Sigma0).T,
        w=steps[:, :, p + q:] @ noise_factor(problem.Qw).T,
        v1=steps[:, :, :p] @ noise_factor(problem.Qv1).T,
        v2=steps[:, :, p:p + q] @ noise_factor(problem.Qv2).T,
    )


@dataclass
class BatchResult:
    """Closed-loop arrays for n replicates; time is axis 1.

    ``x`` has N+2 steps (terminal state included); ``x2pred`` holds
    xhat2_{k|k-1} for k = 0..N+1. Everything else has N+1 steps.
    """

    x: np.ndarray
    y: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u: np.ndarray
    utilde1: np.ndarray
    x1hat: np.ndarray
    x2hat: np.ndarray
    x2pred: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: np.ndarray

    @property
    def total_cost(self) -> np.ndarray:
        return self.stage_cost.sum(axis=1) + self.terminal_cost


def _as_schedule(gains, N: int) -> GainSchedule:
    if isinstance(gains, SteadyGains):
        return gains.schedule(N)
    if isinstance(gains, SteadyState):
        return GainSchedule.constant(gains.K, gains.Gamma, N, STEADY)
    if gains.N < N:
        raise ValueError(f"gain schedule covers k=0..{gains.N}, horizon needs 0..{N}")
    if gains.N > N:
        return GainSchedule(gains.K[:N + 1], gains.Gamma[:N + 1], gains.mode)
    return gains


def _stage_cost(problem: ProblemDef, x, u1, u2):
    return (np.einsum("ni,ij,nj->n", x, problem.Q, x)
            + np.einsum("ni,ij,nj->n", u1, problem.R1, u1)
            + np.einsum("ni,ij,nj->n", u2, problem.R2, u2))


def simulate_batch(problem: ProblemDef, gains, noise: NoiseBatch, N: int,
                   filters: FilterPipeline | None = None) -> BatchResult:
    """Roll out the closed loop for every replicate in ``noise``.

    Controller 2's filter is advanced from y2 and the common input only. The
    filter covariances come from ``filters`` (computed from the Gamma schedule
    if omitted) so both estimators are the exact conditional means.
    """
    sched = _as_schedule(gains, N)
    if filters is None:
        filters = covariance_pipeline(problem, sched.Gamma)
    A, B1, B2, H1, H2 = problem.A, problem.B1, problem.B2, problem.H1, problem.H2
    d = problem.dims
    n = noise.n
    x = np.empty((n, N + 2, d.m))
    out = {name: np.empty((n, N + 1, size)) for name, size in (
        ("y", d.p + d.q), ("y2", d.q), ("u1", d.l), ("u2", d.r), ("u", d.l + d.r),
        ("utilde1", d.l), ("x1hat", d.m), ("x2hat", d.m))}
    x2pred = np.empty((n, N + 2, d.m))
    stage = np.empty((n, N + 1))
    x[:, 0] = noise.x0
    mu = np.broadcast_to(problem.mu, (n, d.m))
    s1 = s2 = ctrl = None
    for k in range(N + 1):
        xk = x[:, k]
        y2 = xk @ H2.T + noise.v2[:, k]
        y = np.concatenate([xk @ H1.T + noise.v1[:, k], y2], axis=1)
        if k == 0:
            s1 = c1_update(mu, filters.Sig1_pred[0], y, problem, 0)
            s2 = c2_update(mu, filters.Sig2_pred[0], y2, problem, 0)
        else:
            s1 = c1_step(s1, y, ctrl.u, ctrl.utilde1, problem)
            s2 = c2_step(s2, y2, ctrl.u, filters.Sig2_pred[k], problem)
        ctrl = control_inputs(sched.K[k], sched.Gamma[k], s1.x_filt, s2.x_filt)
        x2pred[:, k] = s2.x_pred
        for name, val in (("y", y), ("y2", y2), ("u1", ctrl.u1), ("u2", ctrl.u2), ("u", ctrl.u),
                          ("utilde1", ctrl.utilde1), ("x1hat", s1.x_filt), ("x2hat", s2.x_filt)):
            out[name][:, k] = val
        stage[:, k] = _stage_cost(problem, xk, ctrl.u1, ctrl.u2)
        x[:, k + 1] = xk @ A.T + ctrl.u1 @ B1.T + ctrl.u2 @ B2.T + noise.w[:, k]
    x2pred[:, N + 1] = s2.x_filt @ A.T + ctrl.u @ problem.aug.B.T
    terminal = np.einsum("ni,ij,nj->n", x[:, N + 1], problem.Theta, x[:, N + 1])
    return BatchResult(x=x, x2pred=x2pred, stage_cost=stage, terminal_cost=terminal, **out)


def replay_controllers(problem: ProblemDef, gains, y1, y2, filters: FilterPipeline | None = None):
    """Run both controllers on recorded observation streams.

    ``y1`` has shape (N+1, p) and ``y2`` has shape (N+1, q). Controller 2's
    chain is evaluated from ``y2`` alone, before controller 1 is touched.
    Returns ``(u1, u2)``. It is used to check the information pattern:
    replacing ``y1`` must leave ``u2`` unchanged.
    """
    y1 = np.atleast_2d(np.asarray(y1, dtype=float))
    y2 = np.atleast_2d(np.asarray(y2, dtype=float))
    N = y2.shape[0] - 1
    sched = _as_schedule(gains, N)
    if filters is None:
        filters = covariance_pipeline(problem, sched.Gamma)
    l = problem.dims.l
    # controller 2: needs only y2 and its own past common inputs
    x2hat = np.empty((N + 1, problem.dims.m))
    u = np.empty((N + 1, l + problem.dims.r))
    s2 = None
    for k in range(N + 1):
        if k == 0:
            s2 = c2_update(problem.mu, filters.Sig2_pred[0], y2[0], problem, 0)
        else:
            s2 = c2_step(s2, y2[k], u[k - 1], filters.Sig2_pred[k], problem)
        x2hat[k] = s2.x_filt
        u[k] = -(sched.K[k] @ s2.x_filt)
    # controller 1: sees everything, including controller 2's past inputs
    y = np.concatenate([y1, y2], axis=1)
    u1 = np.empty((N + 1, l))
    s1 = ut = None
    for k in range(N + 1):
        if k == 0:
            s1 = c1_update(problem.mu, filters.Sig1_pred[0], y[0], problem, 0)
        else:
            s1 = c1_step(s1, y[k], u[k - 1], ut, problem)
        ctrl = control_inputs(sched.K[k], sched.Gamma[k], s1.x_filt, x2hat[k])
        ut = ctrl.utilde1
        u1[k] = ctrl.u1
    return u1, u[:, l:]


@dataclass
class Trajectory:
    """One closed-loop sample path (arrays indexed by k; ``x`` includes k = N+1)."""

    x: np.ndarray
    y: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u: np.ndarray
    utilde1: np.ndarray
    x1hat: np.ndarray
    x2hat: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: float
    replicate: int = 0

    @property
    def total_cost(self) -> float:
        return float(self.stage_cost.sum() + self.terminal_cost)


def _trajectory(batch: BatchResult, row: int, index: int) -> Trajectory:
    return Trajectory(
        x=batch.x[row], y=batch.y[row], y2=batch.y2[row], u1=batch.u1[row], u2=batch.u2[row],
        u=batch.u[row], utilde1=batch.utilde1[row], x1hat=batch.x1hat[row], x2hat=batch.x2hat[row],
        stage_cost=batch.stage_cost[row], terminal_cost=float(batch.terminal_cost[row]), replicate=index,
    )


def rollout(problem: ProblemDef, gains, sim: SimConfig, replicate_index: int = 0,
            noise: NoiseBatch | None = None) -> Trajectory:
    if noise is None:
        noise = draw_noise(problem, sim.N, sim.seed, [replicate_index])
    return _trajectory(simulate_batch(problem, gains, noise, sim.N), 0, replicate_index)


@dataclass
class SimSummary:
    """Aggregated Monte Carlo statistics.

    Second moments are raw (uncentred) sample means of outer products, with
    entrywise standard errors ``std / sqrt(n)``:

    * ``Exx[k]`` = E[x_k x_k'] for k = 0..N+1;
    * ``Sig1_emp[k]``, ``Sig2_emp[k]``: error second moments of xhat1_{k|k}, xhat2_{k|k};
    * ``Sig2_pred_emp[k]`` for xhat2_{k|k-1}, k = 0..N+1;
    * ``gap_cross[k]`` = E[(xhat1 - xhat2)(x - xhat2)'].
    """

    replications: int
    N: int
    mode: str
    cost_mean: float
    cost_se: float
    stage_cost_mean: np.ndarray
    stage_cost_se: np.ndarray
    Exx: np.ndarray
    Exx_se: np.ndarray
    Sig1_emp: np.ndarray
    Sig1_emp_se: np.ndarray
    Sig2_emp: np.ndarray
    Sig2_emp_se: np.ndarray
    Sig2_pred_emp: np.ndarray
    Sig2_pred_emp_se: np.ndarray
    gap_cross: np.ndarray
    gap_cross_se: np.ndarray
    rho: float
    bounded: bool
    trajectories: list = field(default_factory=list, repr=False)


_MOMENTS = ("Exx", "Sig1_emp", "Sig2_emp", "Sig2_pred_emp", "gap_cross")


def _outer(a, b):
    return np.einsum("nki,nkj->nkij", a, b)


def _chunk_sums(problem, sched, filters, N, seed, indices):
    noise = draw_noise(problem, N, seed, indices)
    b = simulate_batch(problem, sched, noise, N, filters)
    e2 = b.x[:, :N + 1] - b.x2hat
    prods = {
        "Exx": _outer(b.x, b.x),
        "Sig1_emp": _outer(b.x[:, :N + 1] - b.x1hat, b.x[:, :N + 1] - b.x1hat),
        "Sig2_emp": _outer(e2, e2),
        "Sig2_pred_emp": _outer(b.x - b.x2pred, b.x - b.x2pred),
        "gap_cross": _outer(b.x1hat - b.x2hat, e2),
    }
    total = b.total_cost
    sums = {"cost": (total.sum(), (total ** 2).sum()),
            "stage": (b.stage_cost.sum(axis=0), (b.stage_cost ** 2).sum(axis=0))}
    for name, v in prods.items():
        sums[name] = (v.sum(axis=0), (v ** 2).sum(axis=0))
    return sums, b


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("DLQG_THREADS", "0") or 0)
    return threads if threads > 0 else (os.cpu_count() or 1)


def _mean_se(s, s2, n):
    mean = s / n
    if n < 2:
        return mean, np.zeros_like(np.asarray(mean, dtype=float))
    var = np.clip((s2 - n * mean ** 2) / (n - 1), 0.0, None)
    return mean, np.sqrt(var / n)


def monte_carlo(problem: ProblemDef, gains, sim: SimConfig, threads: int | None = None) -> SimSummary:
    """Run ``sim.replications`` closed-loop replicates and aggregate.

    Replicates are processed in fixed-size chunks whose partial sums are
    combined in chunk order, so results are bit-identical for any thread count.
    """
    N = sim.N
    sched = _as_schedule(gains, N)
    filters = covariance_pipeline(problem, sched.Gamma)
    n = sim.replications
    chunks = [range(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    keep = sim.record_level == "full"

    def work(idx):
        return _chunk_sums(problem, sched, filters, N, sim.seed, idx)

    workers = min(_threads(threads), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    totals = {}
    trajectories = []
    for (sums, batch), idx in zip(parts, chunks):
        for key, (s, s2) in sums.items():
            if key in totals:
                totals[key] = (totals[key][0] + s, totals[key][1] + s2)
            else:
                totals[key] = (s, s2)
        if keep:
            trajectories.extend(_trajectory(batch, row, i) for row, i in enumerate(idx))
    stats = {key: _mean_se(*totals[key], n) for key in totals}
    rho = spectral_radius(problem.A - problem.aug.B @ sched.K[0])
    Exx = stats["Exx"][0]
    return SimSummary(
        replications=n, N=N, mode=sched.mode,
        cost_mean=float(stats["cost"][0]), cost_se=float(stats["cost"][1]),
        stage_cost_mean=stats["stage"][0], stage_cost_se=stats["stage"][1],
        **{name: stats[name][0] for name in _MOMENTS},
        **{name + "_se": stats[name][1] for name in _MOMENTS},
        rho=rho, bounded=bool(rho < 1.0 and np.all(np.isfinite(Exx))),
        trajectories=trajectories,
    )


def second_moment_recursion(problem: ProblemDef, gains, filters: FilterPipeline | None = None,
                            N: int | None = None) -> np.ndarray:
    """Exact E[x_k x_k'] for k = 0..N+1 under the closed loop.

    Writing e2 = x - xhat2 and d = xhat1 - xhat2, the closed loop is

        x_{k+1} = (A - B K) x_k + B K e2_k - B1 Gamma d_k + w_k.

    The orthogonality relations E[x e2'] = E[e2 e2'] = Sig2_{k|k} and
    E[x d'] = E[e2 d'] = E[d d'] = Sig2_{k|k} - Sig1_{k|k} close the recursion.
    """
    if N is None:
        N = gains.N if isinstance(gains, GainSchedule) else None
    sched = _as_schedule(gains, N)
    if filters is None:
        filters = covariance_pipeline(problem, sched.Gamma)
    A, B, B1, Qw = problem.A, problem.aug.B, problem.B1, problem.Qw
    X = np.empty((N + 2, problem.dims.m, problem.dims.m))
    X[0] = np.outer(problem.mu, problem.mu) + problem.Sigma0
    for k in range(N + 1):
        BK = B @ sched.K[k]
        BG = B1 @ sched.Gamma[k]
        F = A - BK
        S2 = filters.Sig2_filt[k]
        D = S2 - filters.Sig1_filt[k]
        cross = F @ S2 @ BK.T - F @ D @ BG.T - BK @ D @ BG.T
        X[k + 1] = symmetrize(F @ X[k] @ F.T + cross + cross.T + BK @ S2 @ BK.T + BG @ D @ BG.T + Qw)
    return X


def stability_report(problem: ProblemDef, ss: SteadyState, gains: SteadyGains | None = None,
                     summary: SimSummary | None = None, N: int = 200) -> dict:
    """Mean-square stability diagnostics for steady gains.

    Reports the closed-loop spectral radius rho(A - B K), the residual of the
    Lyapunov form of the P equation

        P = M' Ups^{-1} R Ups^{-1} M + Q + (A - B K)' P (A - B K),

    and the predicted second moments E[x x'] from
    :func:`second_moment_recursion`. If ``summary`` is given, the
    predictions are also compared with its Monte Carlo moments as z-scores.
    """
    if gains is None:
        gains = SteadyGains(ss.K, ss.Gamma)
    A, B, R = problem.A, problem.aug.B, problem.aug.R
    K = np.linalg.solve(ss.Ups, ss.M)
    F = A - B @ K
    lyap = fro(ss.P - K.T @ R @ K - problem.Q - F.T @ ss.P @ F)
    rho = spectral_radius(A - B @ gains.K)
    horizon = summary.N if summary is not None else N
    X = second_moment_recursion(problem, gains.schedule(horizon), N=horizon)
    report = {
        "spectral_radius": rho,
        "mean_square_bounded": bool(rho < 1.0),
        "lyapunov_residual": lyap,
        "predicted_second_moment": X,
        "predicted_trace_final": float(np.trace(X[-1])),
    }
    if summary is not None:
        se = np.where(summary.Exx_se > 0, summary.Exx_se, np.inf)
        z = np.abs(summary.Exx - X) / se
        report["second_moment_max_z"] = float(np.nanmax(np.where(np.isfinite(z), z, 0.0)))
    return report
