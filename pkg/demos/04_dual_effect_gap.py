"""
How close to optimal is the synthesized law?
============================================

Over one stage with everything else fixed, the synthesized gains solve the
normal equations of the expected cost exactly. Over two stages they do not
quite: the correction gain at k = 0 also decides how much controller 2 will
know at k = 1, and the costate construction does not price that in.

We compare against the best linear strategy of the two estimates, computed
from the exact Gaussian moments, and confirm the difference with a paired
Monte Carlo run (same noise for both strategies).
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import exact_moment_cost, gains_to_params, linear_strategy_optimum, params_to_gains  # noqa: E402

from dlqg import benchmark_problem, scalar_problem, solve_finite_horizon, synthesize  # noqa: E402
from dlqg.controller import FINITE, GainSchedule  # noqa: E402
from dlqg.simulator import draw_noise, simulate_batch  # noqa: E402


def gap(pr, N=1):
    fh = solve_finite_horizon(pr, N)
    g = synthesize(fh.riccati)
    J = exact_moment_cost(pr, g.K, g.Gamma)
    theta, Jmin = linear_strategy_optimum(pr, [gains_to_params(g.K[k], g.Gamma[k]) for k in range(N + 1)])
    return g, theta, J, Jmin


pr = benchmark_problem()
g, theta, J, Jmin = gap(pr)
print(f"benchmark N=1: synthesized {J:.8f}  best linear {Jmin:.8f}  relative gap {(J - Jmin) / Jmin:.3e}")

# Without a channel for controller 1 to act through, the gap disappears.
no_b1 = scalar_problem(2.7, 0.0, 1.1, 1.2, 1.1)
_, _, J0, Jmin0 = gap(no_b1)
print(f"B1 = 0: relative gap {(J0 - Jmin0) / Jmin0:.1e}")

# Paired Monte Carlo. 2e5 replicates keep this quick, but the standard error is
# then comparable to the gap itself. Use 1e6 or more to see it clearly.
Ks, Gs = zip(*(params_to_gains(pr, t) for t in theta))
best = GainSchedule(np.stack(Ks), np.stack(Gs), FINITE)
diffs = []
for chunk in range(4):
    noise = draw_noise(pr, 1, 5, range(chunk * 50_000, (chunk + 1) * 50_000))
    diffs.append(simulate_batch(pr, g, noise, 1).total_cost - simulate_batch(pr, best, noise, 1).total_cost)
d = np.concatenate(diffs)
print(f"paired MC cost difference {d.mean():.2e} +/- {d.std() / np.sqrt(d.size):.2e}  (predicted {J - Jmin:.2e})")
