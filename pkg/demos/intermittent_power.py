"""
Accelerators on an intermittent renewable supply
================================================

Run the same workload through nonvolatile, partially nonvolatile and
checkpointing devices on a gusty supply, then sweep renewable scale and
battery size for a Pareto frontier.
"""

import numpy as np

from sustaindc import powersim, traces

shared = dict(
    peak_power=1e6,  # W, one trace MW
    threshold_power=3e5,
    peak_throughput=1e9,  # ops/s
    checkpoint_interval=300.0,
    checkpoint_cost=3e7,  # J, a 30 s stall at peak
    resume_penalty=60.0,
    tbe=1e9,
)

# A day of wind at 5-minute resolution, scaled so it hovers around peak
wind = traces.synthetic_wind(288, seed=4, mean_mw=0.9, amplitude_mw=0.6, noise_mw=0.3)
wind = traces.EnergyTrace(wind.timestamps, np.clip(wind.values, 0, None), wind.resolution)

rep = powersim.compare_classes(wind, shared, workload_ops=1e14)
for c in powersim.CLASSES:
    r = rep.results[c]
    print(f"{c:22s} progress {r.final_progress:6.1%}  rollbacks {r.rollback_count:3d}  E_ope {r.operational_energy:.3g} J")
print("dominance order holds:", rep.ordered())

# Cost / shortfall / completion-time frontier
grid = powersim.SweepGrid((0.5, 1.0, 1.5, 2.0), (0.0, 1e8, 1e9))
everything, front = powersim.pareto_sweep(wind, shared, grid, workload_ops=5e13)
print(f"{len(front)} of {len(everything)} design points are non-dominated")
print(powersim.frontier_csv(front))
