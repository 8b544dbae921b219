"""Problem definition for the two-controller LQG problem with asymmetric information.

The plant is

    x_{k+1} = A x_k + B1 u1_k + B2 u2_k + w_k
    y1_k    = H1 x_k + v1_k
    y2_k    = H2 x_k + v2_k

Controller 1 sees (y1, y2) and controller 2's past inputs; controller 2 sees
only y2. The cost is E[sum_k x'Qx + u1'R1u1 + u2'R2u2 + x_{N+1}' Theta x_{N+1}].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from .linalg import asymmetry, is_pd, is_psd, symmetrize

MATRIX_KEYS = ("A", "B1", "B2", "H1", "H2", "Qw", "Qv1", "Qv2", "Q", "R1", "R2", "Theta", "Sigma0")
VECTOR_KEYS = ("mu",)
SYMMETRIC_KEYS = ("Qw", "Qv1", "Qv2", "Sigma0", "Q", "R1", "R2", "Theta")

SYMMETRY_RTOL = 1e-10
SYMMETRIZE_WARN_RTOL = 1e-8
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class Dimensions:
    """State m, input sizes l (C1) and r (C2), observation sizes p (sensor 1) and q (sensor 2)."""

    m: int
    l: int
    r: int
    p: int
    q: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if int(v) != v or v < 1:
                raise ValueError(f"dimension {f.name} must be a positive integer, got {v!r}")

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        m, l, r, p, q = self.m, self.l, self.r, self.p, self.q
        return {
            "A": (m, m), "B1": (m, l), "B2": (m, r), "H1": (p, m), "H2": (q, m),
            "Qw": (m, m), "Qv1": (p, p), "Qv2": (q, q), "Q": (m, m), "R1": (l, l),
            "R2": (r, r), "Theta": (m, m), "mu": (m,), "Sigma0": (m, m),
        }


@dataclass(frozen=True, eq=False)
class AugmentedDef:
    """Stacked quantities: B = [B1 B2], H = [H1; H2], R = diag(R1, R2), Qv = diag(Qv1, Qv2)."""

    B: np.ndarray
    H: np.ndarray
    R: np.ndarray
    Qv: np.ndarray


def _as_array(value, vector: bool = False) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if vector:
        arr = arr.reshape(-1)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """System, noise, cost and initial-belief data.

    Arrays are stored read-only; use :func:`dataclasses.replace` to derive
    variants. Shapes are not enforced here, see :func:`validate`.
    """

    dims: Dimensions
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    Qw: np.ndarray
    Qv1: np.ndarray
    Qv2: np.ndarray
    Q: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    Theta: np.ndarray
    mu: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        for key in MATRIX_KEYS:
            object.__setattr__(self, key, _as_array(getattr(self, key)))
        object.__setattr__(self, "mu", _as_array(self.mu, vector=True))

    @cached_property
    def aug(self) -> AugmentedDef:
        return augment(self)

    def replace(self, **changes) -> "ProblemDef":
        return replace(self, **changes)

    def matrices(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in MATRIX_KEYS + VECTOR_KEYS}


def shape_violations(problem: ProblemDef) -> list[str]:
    out = []
    for key, shape in problem.dims.expected_shapes().items():
        got = getattr(problem, key).shape
        if got != shape:
            out.append(f"{key} has shape {got}, expected {shape}")
    return out


def validate(problem: ProblemDef) -> list[str]:
    """Return every violated invariant as a readable message; empty means valid."""
    violations = shape_violations(problem)
    bad_shape = {v.split()[0] for v in violations}
    for key in SYMMETRIC_KEYS:
        if key in bad_shape:
            continue
        X = getattr(problem, key)
        if not np.all(np.isfinite(X)):
            violations.append(f"{key} has non-finite entries")
            continue
        if asymmetry(X) > SYMMETRY_RTOL:
            violations.append(f"{key} not symmetric (relative asymmetry {asymmetry(X):.2e})")
        if key in ("Qv1", "Qv2"):
            if not is_pd(X):
                violations.append(f"{key} not positive definite")
        elif not is_psd(X, PSD_RTOL):
            violations.append(f"{key} not PSD")
    for key in ("A", "B1", "B2", "H1", "H2", "mu"):
        if key not in bad_shape and not np.all(np.isfinite(getattr(problem, key))):
            violations.append(f"{key} has non-finite entries")
    return violations


def symmetrized(problem: ProblemDef) -> ProblemDef:
    """Copy with every weight/covariance replaced by (X + X')/2.

    Warns when the correction exceeds 1e-8 relative, since that is more than
    file rounding would explain.
    """
    changes = {}
    for key in SYMMETRIC_KEYS:
        X = getattr(problem, key)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            continue
        if asymmetry(X) > SYMMETRIZE_WARN_RTOL:
            warnings.warn(f"{key} asymmetric by {asymmetry(X):.2e} (relative); symmetrizing",
                          stacklevel=2)
        changes[key] = symmetrize(X)
    return replace(problem, **changes)


def augment(problem: ProblemDef) -> AugmentedDef:
    """Stack the two controllers' input and observation channels."""
    bad = shape_violations(problem)
    if bad:
        raise ValueError("malformed problem: " + "; ".join(bad))
    B = np.hstack([problem.B1, problem.B2])
    H = np.vstack([problem.H1, problem.H2])
    R = scipy.linalg.block_diag(problem.R1, problem.R2)
    Qv = scipy.linalg.block_diag(problem.Qv1, problem.Qv2)
    for arr in (B, H, R, Qv):
        arr.setflags(write=False)
    return AugmentedDef(B=B, H=H, R=R, Qv=Qv)


def benchmark_problem(sigma0: float = 1.0, theta: float = 1.0) -> ProblemDef:
    """Scalar open-loop-unstable benchmark (A = 2.7).

    B1 = 1.2, B2 = 1.1, H1 = 1.2, H2 = 1.1, unit weights and noise
    covariances, mu = 0, Sigma0 = ``sigma0``, Theta = ``theta``.
    """
    one = [[1.0]]
    return ProblemDef(
        dims=Dimensions(1, 1, 1, 1, 1),
        A=[[2.7]], B1=[[1.2]], B2=[[1.1]], H1=[[1.2]], H2=[[1.1]],
        Qw=one, Qv1=one, Qv2=one, Q=one, R1=one, R2=one,
        Theta=[[theta]], mu=[0.0], Sigma0=[[sigma0]],
    )


def scalar_problem(a, b1, b2, h1, h2, qw=1.0, qv1=1.0, qv2=1.0, q=1.0, r1=1.0, r2=1.0,
                   theta=1.0, mu=0.0, sigma0=1.0) -> ProblemDef:
    """Convenience constructor for m = l = r = p = q = 1."""
    return ProblemDef(
        dims=Dimensions(1, 1, 1, 1, 1),
        A=a, B1=b1, B2=b2, H1=h1, H2=h2, Qw=qw, Qv1=qv1, Qv2=qv2, Q=q,
        R1=r1, R2=r2, Theta=theta, mu=[mu], Sigma0=sigma0,
    )

