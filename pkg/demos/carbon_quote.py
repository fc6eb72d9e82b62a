"""
Quoting a task with embodied and operational energy
===================================================

Partition a workload over CPU, GPU and PIM, forecast net demand on the grid,
and price the job under three billing policies.
"""

import dataclasses

from sustaindc import carbon, estimator, forecast, pimfunc, traces

renewable = traces.synthetic_wind(800, seed=1)
demand = traces.synthetic_wind(800, seed=2, mean_mw=120, amplitude_mw=20, noise_mw=3)
demand = traces.EnergyTrace(demand.timestamps, demand.values, demand.resolution, "demand")

# A short training run is enough for a demo
model = forecast.train(forecast.ForecastDataset.from_traces(renewable, demand), config=forecast.TrainConfig(epochs=20))
print("final (train, val) loss:", model.train_log[-1][1:])

# The PIM board comes from a decommissioned system
devices = estimator.reference_devices()
pim = devices["PIM"]
devices["PIM"] = dataclasses.replace(pim, unit=dataclasses.replace(pim.unit, recycled=True))

start = int(renewable.timestamps[-1])
for name in pimfunc.WORKLOADS:
    graph = pimfunc.workload_descriptor(name).to_task_graph(expected_latency=1.0)
    cpu_only = estimator.estimate_latency(graph, {k.id: "CPU" for k in graph.kernels}, devices).total
    # ask for a 4x speedup over the CPU so kernels have to move
    graph = pimfunc.workload_descriptor(name).to_task_graph(expected_latency=cpu_only / 4)
    for policy in (carbon.FlatRate(1.0), carbon.CarbonAware(1.0), carbon.RecycledDiscount(carbon.FlatRate(1.0), 0.5)):
        q = estimator.ese_quote(graph, devices, start, (demand, renewable), model, policy)
        used = sorted(set(q.placement.values()))
        print(
            f"{name:10s} {q.policy['type']:17s} latency {q.estimated_latency:.3g} s on {used}, "
            f"E_ope {q.e_ope:.3g} J, E_emb {q.e_emb:.3g} J, charge {q.charge:.3g}, QoS met {q.met_qos}"
        )
