"""Recursive prediction-error estimation of an AR(1) pole.

The data come from ``theta(k+1) = 0.6 theta(k) + w``, ``r = theta + v`` with
``Q = R = 0.01``. The estimator only knows the model structure
``D(x) = x`` on ``[0, 0.95]`` and tunes ``x`` so that the steady-state Kalman
predictor built at ``x`` predicts the measurements best.

    python demos/scalar_rpe_convergence.py
"""

import numpy as np

from irpe.estimators import StepSchedule, run_irpe
from irpe.models import scalar_ar_family
from irpe.statespace import simulate_trajectory

family = scalar_ar_family(q_var=0.01, r_var=0.01, lower=0.0, upper=0.95)
schedule = StepSchedule(mu=100.0, k0=10)  # alpha_k = 100 / (k + 10)
checkpoints = [10, 100, 1_000, 10_000, 20_000]

print("seed  " + "  ".join(f"k={k:>6d}" for k in checkpoints))
finals = []
for seed in range(5):
    traj = simulate_trajectory(family, [0.6], 20_000, seed)
    trace = run_irpe(family, traj, schedule, x_start=[0.3])
    print(f"{seed:4d}  " + "  ".join(f"{trace.x[k - 1, 0]:8.4f}" for k in checkpoints))
    finals.append(trace.x[-1, 0])

print(f"\ntrue pole 0.6, median final error {np.median(np.abs(np.array(finals) - 0.6)):.4f}")
