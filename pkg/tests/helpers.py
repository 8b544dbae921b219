"""Problem generators shared by the tests."""

import numpy as np

from dlqg.model import Dimensions, ProblemDef, scalar_problem


def random_problem(seed, m, l, r, p, q, a_scale=1.0):
    rng = np.random.default_rng(seed)

    def psd(n, shift=0.0):
        X = rng.normal(size=(n, n))
        return X @ X.T + shift * np.eye(n)

    return ProblemDef(
        dims=Dimensions(m, l, r, p, q),
        A=a_scale * rng.normal(size=(m, m)), B1=rng.normal(size=(m, l)), B2=rng.normal(size=(m, r)),
        H1=rng.normal(size=(p, m)), H2=rng.normal(size=(q, m)),
        Qw=psd(m, 0.1), Qv1=psd(p, 0.5), Qv2=psd(q, 0.5), Q=psd(m, 0.1), R1=psd(l, 0.5), R2=psd(r, 0.5),
        Theta=psd(m), mu=rng.normal(size=m), Sigma0=psd(m, 0.1),
    )


def zero_noise_problem(a=2.7):
    """Benchmark dynamics with every noise and the prior spread removed."""
    return scalar_problem(a, 1.2, 1.1, 1.2, 1.1, qw=0.0, qv1=0.0, qv2=0.0, sigma0=0.0)
