"""A static regression turns IRPE into incremental LMS.

Sensor ``i`` sees ``y_i(k) = a_i^T x + noise``. Cast as a predictor family,
its one-step prediction is ``a_i^T x`` and the prediction gradient is ``a_i``,
so the IRPE update is an LMS step. Each sensor predicts with the iterate it
produced on its previous visit, which is what the per-sensor predictor
state stores.

    python demos/lms_reduction.py
"""

import numpy as np

from irpe.estimators import StepSchedule, run_irpe
from irpe.models import regression_family, regression_initial_state, regression_measurements
from irpe.statespace import Trajectory

A = np.array([[1.0, 0.5], [-0.3, 1.2], [0.8, -0.7]])
x_true = np.array([0.4, -0.2])
K = 10_000
meas = regression_measurements(A, x_true, K, noise_std=0.1, seed=3)
family = regression_family(A, lower=[-2, -2], upper=[2, 2])
psi0, chi0 = regression_initial_state(A, [0.0, 0.0])
trace = run_irpe(family, Trajectory(meas), StepSchedule(1.0, 10), [0.0, 0.0], psi0=psi0, chi0=chi0)

Y = np.column_stack([m[:, 0] for m in meas]).reshape(-1)
x_ls = np.linalg.lstsq(np.tile(A, (K, 1)), Y, rcond=None)[0]
for k in (10, 100, 1_000, 10_000):
    print(f"cycle {k:>6d}: x = {np.round(trace.x[k - 1], 5)}  |x - x_LS| = {np.abs(trace.x[k - 1] - x_ls).max():.2e}")
print(f"least squares {np.round(x_ls, 5)}, truth {x_true}")
