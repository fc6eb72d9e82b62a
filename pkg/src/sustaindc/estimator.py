"""Hardware estimator: roofline latency, kernel migration, and end-to-end quotes.

Kernels start on the CPU.  While the summed latency misses the task's expected
latency, the single kernel move (to a GPU or PIM) that cuts latency the most
is applied, until the bound is met or no move helps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Mapping, Sequence

import numpy as np

from . import carbon
from .carbon import BillingPolicy, HardwareUnit

DEVICE_ORDER = ("CPU", "GPU", "PIM")
ACCELERATORS = ("GPU", "PIM")


class EstimatorError(ValueError):
    pass


class GraphValidationError(EstimatorError):
    pass


class CoverageError(EstimatorError):
    pass


@dataclass(frozen=True)
class Kernel:
    id: str
    flops: float
    bytes_read: float = 0.0
    bytes_written: float = 0.0
    # producer kernel id -> bytes transferred along that edge
    deps: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if min(self.flops, self.bytes_read, self.bytes_written) < 0:
            raise GraphValidationError(f"kernel {self.id}: counts must be >= 0")
        if any(b < 0 for b in self.deps.values()):
            raise GraphValidationError(f"kernel {self.id}: transfer bytes must be >= 0")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "flops": self.flops,
            "bytes_r": self.bytes_read,
            "bytes_w": self.bytes_written,
            "deps": [{"id": k, "transfer_bytes": v} for k, v in self.deps.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel":
        deps = d.get("deps", [])
        if isinstance(deps, dict):
            dep_map = {str(k): float(v) for k, v in deps.items()}
        else:
            dep_map = {}
            for dep in deps:
                if isinstance(dep, dict):
                    dep_map[str(dep["id"])] = float(dep.get("transfer_bytes", 0.0))
                else:
                    dep_map[str(dep)] = 0.0
        return cls(str(d["id"]), float(d["flops"]), float(d.get("bytes_r", 0.0)), float(d.get("bytes_w", 0.0)), dep_map)


@dataclass(frozen=True)
class TaskGraph:
    kernels: tuple[Kernel, ...]
    expected_latency: float

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        ids = [k.id for k in self.kernels]
        if len(set(ids)) != len(ids):
            raise GraphValidationError("kernel ids must be unique")
        if not self.expected_latency > 0:
            raise GraphValidationError("expected latency must be > 0")
        known = set(ids)
        for k in self.kernels:
            missing = set(k.deps) - known
            if missing:
                raise GraphValidationError(f"kernel {k.id} depends on unknown kernels {sorted(missing)}")
        try:
            tuple(TopologicalSorter({k.id: k.deps.keys() for k in self.kernels}).static_order())
        except CycleError as exc:
            raise GraphValidationError(f"dependency cycle: {exc.args[1]}") from None

    def __getitem__(self, kid: str) -> Kernel:
        for k in self.kernels:
            if k.id == kid:
                return k
        raise KeyError(kid)

    def edges(self):
        for k in self.kernels:
            for src, nbytes in k.deps.items():
                yield src, k.id, nbytes

    def to_json(self) -> str:
        return json.dumps(
            {"expected_latency_s": self.expected_latency, "kernels": [k.to_dict() for k in self.kernels]},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TaskGraph":
        try:
            doc = json.loads(text)
            return cls(tuple(Kernel.from_dict(k) for k in doc["kernels"]), float(doc["expected_latency_s"]))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise GraphValidationError(f"malformed task graph: {exc!r}") from None


@dataclass(frozen=True)
class DeviceSpec:
    kind: str
    peak_flops: float
    mem_bandwidth: float
    host_link_bandwidth: float
    unit: HardwareUnit | None = None

    def __post_init__(self):
        if self.kind not in DEVICE_ORDER:
            raise EstimatorError(f"unknown device kind {self.kind!r}")
        if min(self.peak_flops, self.mem_bandwidth, self.host_link_bandwidth) <= 0:
            raise EstimatorError(f"{self.kind}: rates must be > 0")


def load_devices(text: str) -> dict[str, DeviceSpec]:
    """Device catalog JSON: an array of ``{kind, peak_flops, mem_bandwidth, host_link_bandwidth, unit}``."""
    try:
        items = json.loads(text)
        devices = {}
        for item in items:
            unit = item.get("unit")
            devices[item["kind"]] = DeviceSpec(
                item["kind"],
                float(item["peak_flops"]),
                float(item["mem_bandwidth"]),
                float(item["host_link_bandwidth"]),
                HardwareUnit(**unit) if unit else None,
            )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise EstimatorError(f"malformed device catalog: {exc!r}") from None
    if "CPU" not in devices:
        raise EstimatorError("device catalog needs a CPU entry")
    return devices


Placement = dict  # kernel id -> device kind


def kernel_latency(kernel: Kernel, device: DeviceSpec) -> float:
    """Roofline time: the slower of compute and memory traffic."""
    return max(kernel.flops / device.peak_flops, (kernel.bytes_read + kernel.bytes_written) / device.mem_bandwidth)


def transfer_latency(nbytes: float, a: DeviceSpec, b: DeviceSpec) -> float:
    return nbytes / min(a.host_link_bandwidth, b.host_link_bandwidth)


@dataclass(frozen=True)
class LatencyEstimate:
    total: float
    per_device: dict
    transfer: float

    def to_dict(self) -> dict:
        return {"total_s": self.total, "per_device_s": dict(self.per_device), "transfer_s": self.transfer}


def estimate_latency(graph: TaskGraph, placement: Mapping[str, str], devices: Mapping[str, DeviceSpec]) -> LatencyEstimate:
    """Summed kernel latencies plus transfers over edges that cross devices."""
    missing = [k.id for k in graph.kernels if k.id not in placement]
    if missing:
        raise EstimatorError(f"placement misses kernels {missing}")
    per_device = {}
    for k in graph.kernels:
        kind = placement[k.id]
        per_device[kind] = per_device.get(kind, 0.0) + kernel_latency(k, devices[kind])
    transfer = 0.0
    for src, dst, nbytes in graph.edges():
        a, b = placement[src], placement[dst]
        if a != b:
            transfer += transfer_latency(nbytes, devices[a], devices[b])
    return LatencyEstimate(sum(per_device.values()) + transfer, per_device, transfer)


@dataclass
class PartitionResult:
    placement: dict
    latency: float
    met_qos: bool
    # latency after each applied move, starting with the all-CPU latency
    trace: list = field(default_factory=list)
    moves: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.moves)


def partition(graph: TaskGraph, devices: Mapping[str, DeviceSpec]) -> PartitionResult:
    """Greedy single-kernel migration until the expected latency is met.

    A kernel never returns to a device it has left, which bounds the loop at
    ``len(kernels) * len(accelerators)`` iterations.
    """
    targets = [d for d in ACCELERATORS if d in devices]
    placement = {k.id: "CPU" for k in graph.kernels}
    visited = {k.id: {"CPU"} for k in graph.kernels}
    latency = estimate_latency(graph, placement, devices).total
    result = PartitionResult(dict(placement), latency, latency <= graph.expected_latency, [latency])
    order = sorted(graph.kernels, key=lambda k: k.id)
    while latency > graph.expected_latency:
        best = None
        for k in order:
            for dev in targets:
                if dev in visited[k.id]:
                    continue
                trial = dict(placement)
                trial[k.id] = dev
                t = estimate_latency(graph, trial, devices).total
                # strict comparison keeps the first (lowest id, GPU before PIM) on ties
                if t < latency and (best is None or t < best[0]):
                    best = (t, k.id, dev)
        if best is None:
            break
        latency, kid, dev = best
        placement[kid] = dev
        visited[kid].add(dev)
        result.trace.append(latency)
        result.moves.append((kid, dev))
    result.placement = placement
    result.latency = latency
    result.met_qos = latency <= graph.expected_latency
    return result


# -- quotes -------------------------------------------------------------------


@dataclass
class Quote:
    placement: dict
    estimated_latency: float
    e_ope: float
    e_emb: float
    charge: float
    met_qos: bool
    latency: LatencyEstimate | None = None
    energy: carbon.EnergyBreakdown | None = None
    net_forecast: list = field(default_factory=list)
    partition_trace: list = field(default_factory=list)
    policy: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "placement": dict(sorted(self.placement.items())),
            "estimated_latency_s": self.estimated_latency,
            "E_ope_J": self.e_ope,
            "E_emb_J": self.e_emb,
            "charge_credits": self.charge,
            "met_qos": self.met_qos,
            "latency_breakdown": self.latency.to_dict() if self.latency else None,
            "energy_breakdown": self.energy.to_dict() if self.energy else None,
            "net_demand_forecast_mw": self.net_forecast,
            "partition_trace_s": self.partition_trace,
            "policy": self.policy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def device_usage(
    graph: TaskGraph, placement: Mapping[str, str], devices: Mapping[str, DeviceSpec], estimate: LatencyEstimate
) -> list[tuple[HardwareUnit, float, float]]:
    """``(unit, window, busy)`` per used device with an attached hardware unit.

    A device is held for the whole task and busy for its own kernels' time.
    """
    usage = []
    for kind in DEVICE_ORDER:
        busy = estimate.per_device.get(kind, 0.0)
        dev = devices.get(kind)
        if dev is None or dev.unit is None or busy <= 0:
            continue
        usage.append((dev.unit, estimate.total, busy))
    return usage


def forecast_net_window(model, demand, renewable, start_time: int, duration: float) -> list[float]:
    """P50 net-demand forecasts issued at ``start_time`` covering the task window."""
    from . import forecast

    window = model.spec.history_window
    res = demand.resolution
    hist_start = start_time - (window - 1) * res
    d = demand.window(hist_start, start_time + 1)
    r = renewable.window(hist_start, start_time + 1)
    if len(d) != window or len(r) != window or int(d.timestamps[-1]) != start_time:
        raise CoverageError(
            f"traces must cover [{hist_start}, {start_time}] at {res}s resolution to forecast from {start_time}"
        )
    history = forecast.ForecastDataset.from_traces(r, d)
    fc = forecast.predict(model, history, issued_at=start_time)
    p50 = fc.quantiles.index(0.5) if 0.5 in fc.quantiles else len(fc.quantiles) // 2
    net = []
    for hi, h in enumerate(fc.horizons):
        net.append(float(fc.values[fc.targets.index("net_demand"), hi, p50]))
        if h * 60 >= duration:
            break
    return net


def ese_quote(
    graph: TaskGraph,
    devices: Mapping[str, DeviceSpec],
    start_time: int | None = None,
    traces=None,
    model=None,
    policy: BillingPolicy = carbon.FlatRate(1.0),
    pue: float = carbon.DEFAULT_PUE,
    delivery_loss_fraction: float = carbon.DEFAULT_DELIVERY_LOSS,
) -> Quote:
    """Partition, estimate latency and energy, forecast net demand, and bill.

    ``traces`` is a ``(demand, renewable)`` pair; the forecast step is skipped
    when ``model`` is None (net demand then counts as zero).
    """
    part = partition(graph, devices)
    est = estimate_latency(graph, part.placement, devices)
    energy = carbon.energy_breakdown(device_usage(graph, part.placement, devices, est), pue, delivery_loss_fraction)
    net = []
    if model is not None:
        if traces is None or start_time is None:
            raise CoverageError("a forecast model needs demand/renewable traces and a start time")
        net = forecast_net_window(model, traces[0], traces[1], int(start_time), est.total)
    credits = carbon.charge(energy.e_ope, energy.e_emb, net, policy, energy.recycled_embodied)
    return Quote(
        placement=part.placement,
        estimated_latency=est.total,
        e_ope=energy.e_ope,
        e_emb=energy.e_emb,
        charge=credits,
        met_qos=est.total <= graph.expected_latency,
        latency=est,
        energy=energy,
        net_forecast=net,
        partition_trace=part.trace,
        policy=carbon.policy_to_dict(policy),
    )


def brute_force_placements(graph: TaskGraph, devices: Mapping[str, DeviceSpec]):
    """Every placement of the graph's kernels over the given devices, with its latency."""
    kinds = [d for d in DEVICE_ORDER if d in devices]
    ids = [k.id for k in graph.kernels]
    for combo in np.ndindex(*([len(kinds)] * len(ids))):
        placement = {kid: kinds[i] for kid, i in zip(ids, combo)}
        yield placement, estimate_latency(graph, placement, devices).total


def random_graph(rng: np.random.Generator, n_kernels: int, expected_latency: float = 1.0, edge_p: float = 0.5) -> TaskGraph:
    kernels = []
    for i in range(n_kernels):
        deps = {f"k{j}": float(rng.uniform(0, 2e9)) for j in range(i) if rng.random() < edge_p}
        kernels.append(
            Kernel(f"k{i}", float(rng.uniform(0, 1e10)), float(rng.uniform(0, 4e9)), float(rng.uniform(0, 4e9)), deps)
        )
    return TaskGraph(tuple(kernels), expected_latency)


def reference_devices(units: Sequence[HardwareUnit] | None = None) -> dict[str, DeviceSpec]:
    """The documented reference platform used by the demos and tests."""
    units = units or [
        HardwareUnit("cpu0", "CPU", 1.5e9, 4 * carbon.SECONDS_PER_YEAR, 150.0, 40.0),
        HardwareUnit("gpu0", "GPU", 2.5e9, 4 * carbon.SECONDS_PER_YEAR, 300.0, 30.0),
        HardwareUnit("pim0", "PIM", 0.4e9, 5 * carbon.SECONDS_PER_YEAR, 20.0, 1.0),
    ]
    by_kind = {u.kind: u for u in units}
    return {
        "CPU": DeviceSpec("CPU", 1e12, 1e11, 1.6e10, by_kind.get("CPU")),
        "GPU": DeviceSpec("GPU", 2e13, 9e11, 1.6e10, by_kind.get("GPU")),
        "PIM": DeviceSpec("PIM", 4e12, 4e12, 8e9, by_kind.get("PIM")),
    }
