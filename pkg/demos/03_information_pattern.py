"""
Who sees what
=============

Controller 2's inputs may depend only on the second sensor. Replaying a
recorded run with different sensor-1 readings should change controller 1's
inputs and leave controller 2's untouched, bit for bit.

In the actual closed loop this is different: controller 1's correction moves
the state, which controller 2 then measures.
"""
import numpy as np

from dlqg import benchmark_problem, solve_finite_horizon, synthesize
from dlqg.controller import FINITE
from dlqg.simulator import SimConfig, draw_noise, replay_controllers, rollout, simulate_batch

pr = benchmark_problem()
fh = solve_finite_horizon(pr, 20)
gains = synthesize(fh.riccati)

tr = rollout(pr, gains, SimConfig(seed=5, N=20, mode=FINITE))
y1, y2 = tr.y[:, :1], tr.y2

fresh = np.random.default_rng(0).normal(size=y1.shape)
u1a, u2a = replay_controllers(pr, gains, y1, y2)
u1b, u2b = replay_controllers(pr, gains, fresh, y2)
print("replay: u2 identical:", np.array_equal(u2a, u2b), "  max |du1| =", np.abs(u1a - u1b).max())

# Closed loop with only v1 resampled.
noise = draw_noise(pr, 20, 5, [0])
a = simulate_batch(pr, gains, noise, 20)
noise.v1 = draw_noise(pr, 20, 6, [0]).v1
b = simulate_batch(pr, gains, noise, 20)
print("closed loop: u2 at k=0 identical:", np.array_equal(a.u2[0, 0], b.u2[0, 0]))
print("closed loop: max |du2| afterwards =", np.abs(a.u2[0, 1:] - b.u2[0, 1:]).max())
