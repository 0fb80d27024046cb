"""Ring (incremental) versus fusion-center (centralized) communication.

One unit message per hop: the ring sends the iterate around a greedy
nearest-neighbour tour, the centralized scheme sends every measurement to the
middle of the field. The ratio falls roughly like ``1 / sqrt(m)``.

    python demos/communication_scaling.py
"""

import numpy as np

from irpe.harness import comm_cost, deploy_uniform

box = ((0.0, 100.0), (0.0, 100.0))
print("     m   incremental   centralized   ratio   ratio*sqrt(m)")
for m in (25, 100, 400, 1600):
    deps = [deploy_uniform(m, box, seed) for seed in range(20)]
    inc = np.mean([comm_cost(d, "incremental") for d in deps])
    cen = np.mean([comm_cost(d, "centralized") for d in deps])
    print(f"{m:6d}  {inc:12.1f}  {cen:12.1f}  {inc / cen:6.3f}  {inc / cen * np.sqrt(m):8.3f}")
