"""Run one time-invariant SSM as a recurrence and as a causal convolution.

With B, C and the step size held fixed along the sequence, the selective
scan collapses to a convolution with the kernel (C.B, C.A B, C.A^2 B, ...).
This script builds such a system, evaluates both forms and prints the gap,
then shows how the four scan orders unfold a small grid.

    python3 demos/scan_two_ways.py
"""
import numpy as np

from himamba.scan import (Direction, SelectiveParams, discretize_zoh, flatten_direction, lti_apply,
                          lti_kernel, selective_scan)

rng = np.random.default_rng(0)
L, N = 32, 6
a_log = rng.normal(size=(1, N))
step = 0.4
b, c = rng.normal(size=N), rng.normal(size=N)
u = rng.normal(size=(L, 1))

params = SelectiveParams(a_log, np.full((L, 1), step), np.tile(b, (L, 1)), np.tile(c, (L, 1)), np.zeros(1))
y_scan = selective_scan(u, params)[:, 0]

a_bar, b_bar = discretize_zoh(step, -np.exp(a_log[0]), b)
kernel = lti_kernel(a_bar, b_bar, c, L)
y_conv = lti_apply(u[:, 0], kernel)

print("first kernel taps:", np.round(kernel[:5], 4))
print(f"max |recurrence - convolution| = {np.abs(y_scan - y_conv).max():.2e}")

grid = np.arange(6, dtype=float).reshape(1, 2, 3)
print("\ngrid\n", grid[0].astype(int))
for d in Direction:
    print(f"{d.value:>2}: {flatten_direction(grid, d)[:, 0].astype(int).tolist()}")
