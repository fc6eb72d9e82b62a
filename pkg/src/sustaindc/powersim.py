"""Forward progress of accelerators running on intermittent renewable power.

Three volatility classes are modelled:

* ``FullyNonvolatile`` keeps all state and runs at a rate proportional to the
  available power, however low.
* ``PartiallyNonvolatile`` needs ``threshold_power`` to run.  Progress is
  committed to nonvolatile state for free every ``checkpoint_interval`` of
  compute; a dip below threshold loses ``state_loss_fraction`` of the
  uncommitted work and costs ``resume_penalty`` seconds when power returns.
* ``VolatileCheckpointed`` only runs at full peak power, stalls to write a
  checkpoint every ``checkpoint_interval`` of compute, and loses everything
  since the last checkpoint on any dip.

Within a step the available power is constant and events (resume, compute,
checkpoint, completion) are resolved exactly, so results do not depend on
where step boundaries fall inside a run segment.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import carbon
from .traces import EnergyTrace, TraceGapError

CLASSES = ("FullyNonvolatile", "PartiallyNonvolatile", "VolatileCheckpointed")
EVENT_PRIORITY = ("rollback", "resume", "checkpoint", "run", "stall")
_EPS = 1e-9


class PowerSimError(ValueError):
    pass


class ConfigError(PowerSimError):
    pass


@dataclass(frozen=True)
class DeviceModel:
    volatility: str
    peak_power: float  # W
    threshold_power: float  # W
    peak_throughput: float  # ops/s
    checkpoint_interval: float = 600.0  # s of compute
    checkpoint_cost: float = 0.0  # J
    resume_penalty: float = 60.0  # s
    state_loss_fraction: float = 0.5
    tbe: float = 0.0  # J
    lifetime: float = 5 * carbon.SECONDS_PER_YEAR  # s

    def __post_init__(self):
        if self.volatility not in CLASSES:
            raise ConfigError(f"unknown volatility class {self.volatility!r}")
        if not self.peak_power > 0 or not 0 <= self.threshold_power <= self.peak_power:
            raise ConfigError("need 0 <= threshold_power <= peak_power and peak_power > 0")
        if not self.peak_throughput > 0:
            raise ConfigError("peak_throughput must be > 0")
        if min(self.checkpoint_interval, self.checkpoint_cost, self.resume_penalty, self.tbe) < 0:
            raise ConfigError("checkpoint and penalty parameters must be >= 0")
        if not 0 <= self.state_loss_fraction <= 1:
            raise ConfigError("state_loss_fraction must lie in [0, 1]")
        if self.volatility == "FullyNonvolatile" and self.state_loss_fraction != 0:
            raise ConfigError("a fully nonvolatile device cannot lose state")
        if not self.lifetime > 0:
            raise ConfigError("lifetime must be > 0")

    @property
    def run_threshold(self) -> float:
        if self.volatility == "FullyNonvolatile":
            return 0.0
        if self.volatility == "PartiallyNonvolatile":
            return self.threshold_power
        return self.peak_power

    @classmethod
    def family(cls, **shared) -> dict[str, "DeviceModel"]:
        """One device per class built from shared parameters."""
        out = {}
        for vol in CLASSES:
            params = dict(shared)
            if vol == "FullyNonvolatile":
                params["state_loss_fraction"] = 0.0
            out[vol] = cls(vol, **params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceModel":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad device description: {exc}") from None


@dataclass(frozen=True)
class Battery:
    capacity: float = 0.0  # J
    level: float = 0.0  # J
    charge_efficiency: float = 1.0
    discharge_efficiency: float = 1.0

    def __post_init__(self):
        if self.capacity < 0 or not 0 <= self.level <= self.capacity:
            raise ConfigError("battery level must lie in [0, capacity]")
        if not (0 < self.charge_efficiency <= 1 and 0 < self.discharge_efficiency <= 1):
            raise ConfigError("battery efficiencies must lie in (0, 1]")


@dataclass(frozen=True)
class Scenario:
    supply: EnergyTrace
    device: DeviceModel
    battery: Battery = Battery()
    workload_ops: float = 1e12
    dt: float | None = None  # defaults to the supply resolution
    seed: int = 42
    supply_scale: float = 1e6  # W per trace unit (trace values are MW)
    stop_on_completion: bool = True

    def __post_init__(self):
        if not self.workload_ops > 0:
            raise ConfigError("workload_ops must be > 0")
        dt = self.supply.resolution if self.dt is None else self.dt
        if not dt > 0:
            raise ConfigError("dt must be > 0")
        ratio = self.supply.resolution / dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"dt={dt} does not divide the supply resolution {self.supply.resolution}")
        if self.supply_scale <= 0:
            raise ConfigError("supply_scale must be > 0")
        object.__setattr__(self, "dt", float(dt))


@dataclass
class DeviceState:
    ops: float = 0.0
    committed: float = 0.0
    since_commit: float = 0.0  # compute seconds since last commit
    resume_left: float = 0.0
    checkpoint_left: float = 0.0
    powered: bool = False
    done: bool = False
    completion_time: float | None = None
    rollbacks: int = 0
    rolled_back_ops: float = 0.0


def step(state: DeviceState, device: DeviceModel, power: float, dt: float, workload_ops: float, t0: float = 0.0):
    """Advance ``state`` by ``dt`` seconds at constant available ``power``.

    Returns ``(energy_used_j, events)``; ``state`` is updated in place.
    """
    if power < 0:
        raise PowerSimError("available power must be >= 0")
    events = set()
    if state.done:
        return 0.0, {"stall"}
    vol = device.volatility
    up = power > 0 and power >= device.run_threshold
    if not up:
        if state.powered and vol != "FullyNonvolatile":
            if vol == "PartiallyNonvolatile":
                lost = device.state_loss_fraction * (state.ops - state.committed)
            else:
                lost = state.ops - state.committed
            state.ops -= lost
            state.committed = state.ops
            state.since_commit = 0.0
            state.checkpoint_left = 0.0
            state.resume_left = device.resume_penalty
            if lost > 0:
                state.rollbacks += 1
                state.rolled_back_ops += lost
                events.add("rollback")
        state.powered = False
        events.add("stall")
        return 0.0, events

    state.powered = True
    run_power = device.peak_power if vol == "VolatileCheckpointed" else min(power, device.peak_power)
    rate = device.peak_throughput * run_power / device.peak_power
    commits = vol != "FullyNonvolatile" and device.checkpoint_interval > 0
    remaining = dt
    energy = 0.0
    while remaining > _EPS * dt and not state.done:
        if state.resume_left > 0:
            d = min(remaining, state.resume_left)
            state.resume_left -= d
            if state.resume_left <= _EPS:
                state.resume_left = 0.0
            remaining -= d
            energy += run_power * d
            events.add("resume")
            continue
        if state.checkpoint_left > 0:
            d = min(remaining, state.checkpoint_left)
            state.checkpoint_left -= d
            remaining -= d
            energy += run_power * d
            if state.checkpoint_left <= _EPS:
                state.checkpoint_left = 0.0
                state.committed = state.ops
                state.since_commit = 0.0
                events.add("checkpoint")
            continue
        if commits and state.since_commit >= device.checkpoint_interval - _EPS:
            if vol == "PartiallyNonvolatile" or device.checkpoint_cost == 0:
                state.committed = state.ops
                state.since_commit = 0.0
                events.add("checkpoint")
            else:
                state.checkpoint_left = device.checkpoint_cost / device.peak_power
            continue
        if rate <= 0:
            break
        to_done = (workload_ops - state.ops) / rate
        to_commit = device.checkpoint_interval - state.since_commit if commits else math.inf
        d = min(remaining, to_done, to_commit)
        state.ops += rate * d
        state.since_commit += d
        remaining -= d
        energy += run_power * d
        events.add("run")
        if d == to_done:
            state.ops = workload_ops
            state.done = True
            state.completion_time = t0 + (dt - remaining)
    if not events:
        events.add("stall")
    return energy, events


@dataclass
class SimResult:
    device: DeviceModel
    workload_ops: float
    completion_time: float | None
    times: np.ndarray  # end of each step, s (first entry 0)
    ops: np.ndarray  # ops completed at each time
    energy_consumed: float
    energy_supplied: float
    initial_battery: float
    rollback_count: int
    rolled_back_ops: float
    operational_energy: float
    embodied_energy: float
    shortfall: float  # carbon-weighted energy shortfall
    battery_min: float
    battery_max: float
    timeline: list = field(default_factory=list)  # rows at trace resolution

    def progress_at(self, t: float) -> float:
        """Fraction of the workload done at time ``t``."""
        i = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        return float(self.ops[max(i, 0)] / self.workload_ops)

    @property
    def final_progress(self) -> float:
        return float(self.ops[-1] / self.workload_ops)

    def summary(self) -> dict:
        return {
            "volatility": self.device.volatility,
            "completion_time_s": self.completion_time if self.completion_time is not None else "unfinished",
            "final_progress": self.final_progress,
            "rollback_count": self.rollback_count,
            "rolled_back_ops": self.rolled_back_ops,
            "energy_consumed_j": self.energy_consumed,
            "energy_supplied_j": self.energy_supplied,
            "E_ope_J": self.operational_energy,
            "E_emb_J": self.embodied_energy,
            "carbon_weighted_shortfall": self.shortfall,
        }

    def timeline_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "ops_completed", "power_used_w", "battery_j", "event"])
        for t, ops, pw, b, ev in self.timeline:
            w.writerow([repr(float(t)), repr(float(ops)), repr(float(pw)), repr(float(b)), ev])
        return out.getvalue()


def _check_regular(trace: EnergyTrace):
    gaps = np.flatnonzero(np.diff(trace.timestamps) != trace.resolution)
    if gaps.size:
        i = int(gaps[0])
        start, end = int(trace.timestamps[i]) + trace.resolution, int(trace.timestamps[i + 1])
        raise TraceGapError(start, end, (end - start) // trace.resolution)


def run(scenario: Scenario) -> SimResult:
    sup = scenario.supply
    _check_regular(sup)
    dev = scenario.device
    bat = scenario.battery
    dt = scenario.dt
    sub = int(round(sup.resolution / dt))
    intensity = sup.intensity if sup.intensity is not None else np.ones(len(sup))
    state = DeviceState()
    level = bat.level
    b_min = b_max = level
    t = 0.0
    times, ops = [0.0], [0.0]
    consumed = supplied = shortfall = 0.0
    timeline = []
    for i, mw in enumerate(sup.values):
        s = float(mw) * scenario.supply_scale
        bin_energy = 0.0
        bin_events = set()
        for _ in range(sub):
            if state.done and scenario.stop_on_completion:
                break
            # greedy dispatch: top up to peak from the battery if that lets the device run
            deliverable = level * bat.discharge_efficiency / dt
            p = s
            if s < dev.peak_power and deliverable > 0:
                boosted = s + min(dev.peak_power - s, deliverable)
                if boosted > 0 and boosted >= dev.run_threshold:
                    p = boosted
            used, events = step(state, dev, p, dt, scenario.workload_ops, t)
            from_battery = max(0.0, used - s * dt)
            level = max(0.0, level - from_battery / bat.discharge_efficiency)
            surplus = max(0.0, s * dt - used)
            level = min(bat.capacity, level + surplus * bat.charge_efficiency)
            b_min, b_max = min(b_min, level), max(b_max, level)
            if not state.done or "run" in events:
                shortfall += max(0.0, dev.peak_power - p) * dt * float(intensity[i])
            consumed += used
            supplied += s * dt
            bin_energy += used
            bin_events |= events
            t += dt
            times.append(t)
            ops.append(state.ops)
        if state.done and scenario.stop_on_completion and not bin_events:
            break
        ev = next((e for e in EVENT_PRIORITY if e in bin_events), "stall")
        timeline.append((int(sup.timestamps[i]) + sup.resolution, state.ops, bin_energy / sup.resolution, level, ev))
    elapsed = state.completion_time if state.completion_time is not None else t
    unit = carbon.HardwareUnit("device", "PIM", dev.tbe, dev.lifetime, dev.peak_power, 0.0)
    return SimResult(
        device=dev,
        workload_ops=scenario.workload_ops,
        completion_time=state.completion_time,
        times=np.array(times),
        ops=np.array(ops),
        energy_consumed=consumed,
        energy_supplied=supplied,
        initial_battery=bat.level,
        rollback_count=state.rollbacks,
        rolled_back_ops=state.rolled_back_ops,
        operational_energy=consumed,
        embodied_energy=carbon.embodied_energy([(unit, elapsed)]),
        shortfall=shortfall,
        battery_min=b_min,
        battery_max=b_max,
        timeline=timeline,
    )


@dataclass(frozen=True)
class ClassReport:
    probe_times: tuple[float, ...]
    progress: dict  # class -> list of progress fractions at the probe times
    results: dict  # class -> SimResult

    def ordered(self) -> bool:
        f, p, v = (self.progress[c] for c in CLASSES)
        return all(a >= b - 1e-12 >= c - 2e-12 for a, b, c in zip(f, p, v))


def compare_classes(
    supply: EnergyTrace,
    shared: dict,
    workload_ops: float,
    probe_times: Sequence[float] | None = None,
    battery: Battery = Battery(),
    dt: float | None = None,
    supply_scale: float = 1e6,
) -> ClassReport:
    """Run the same supply through all three classes and sample progress at probe times."""
    family = DeviceModel.family(**shared)
    horizon = len(supply) * supply.resolution
    probes = tuple(probe_times) if probe_times is not None else tuple(np.linspace(0, horizon, 9)[1:])
    results, progress = {}, {}
    for vol in CLASSES:
        sc = Scenario(supply, family[vol], battery, workload_ops, dt, supply_scale=supply_scale)
        res = run(sc)
        results[vol] = res
        progress[vol] = [res.progress_at(t) for t in probes]
    return ClassReport(probes, progress, results)


# -- Pareto sweeps -------------------------------------------------------------


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_front(points: Sequence[Sequence[float]]) -> list[int]:
    """Indices of non-dominated points (all objectives minimized), in input order.

    Points are visited in lexicographic order, so any dominator of a point is
    visited before it; each point is checked only against the kept front.
    """
    order = sorted(range(len(points)), key=lambda i: tuple(points[i]))
    front: list[int] = []
    for i in order:
        if not any(dominates(points[j], points[i]) for j in front):
            front.append(i)
    return sorted(front)


@dataclass(frozen=True)
class ParetoPoint:
    renewable_scale: float
    battery_capacity: float
    volatility: str
    cost: float  # embodied proxy, J
    shortfall: float
    completion_time: float  # inf when unfinished

    @property
    def objectives(self) -> tuple[float, float, float]:
        return (self.cost, self.shortfall, self.completion_time)


@dataclass(frozen=True)
class SweepGrid:
    renewable_scales: tuple[float, ...]
    battery_capacities: tuple[float, ...]
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        if not (self.renewable_scales and self.battery_capacities and self.classes):
            raise ConfigError("grid must be non-empty on every axis")
        bad = set(self.classes) - set(CLASSES)
        if bad:
            raise ConfigError(f"unknown classes {sorted(bad)}")


def pareto_sweep(
    supply: EnergyTrace,
    shared: dict,
    grid: SweepGrid,
    workload_ops: float,
    embodied_per_joule: float = 0.05,
    supply_scale: float = 1e6,
) -> tuple[list[ParetoPoint], list[ParetoPoint]]:
    """Evaluate every grid point and return ``(all_points, frontier)`` in grid order."""
    family = DeviceModel.family(**shared)
    points = []
    for vol in grid.classes:
        for scale in grid.renewable_scales:
            for cap in grid.battery_capacities:
                dev = family[vol]
                sc = Scenario(supply.scaled(scale), dev, Battery(cap, 0.0), workload_ops, supply_scale=supply_scale)
                res = run(sc)
                done = res.completion_time if res.completion_time is not None else math.inf
                cost = dev.tbe + cap * embodied_per_joule
                points.append(ParetoPoint(scale, cap, vol, cost, res.shortfall, done))
    keep = pareto_front([p.objectives for p in points])
    return points, [points[i] for i in keep]


def frontier_csv(points: Iterable[ParetoPoint]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["renewable_scale", "battery_capacity_j", "volatility", "cost_j", "shortfall", "completion_time_s"])
    for p in points:
        w.writerow([repr(p.renewable_scale), repr(p.battery_capacity), p.volatility, repr(p.cost), repr(p.shortfall), repr(p.completion_time)])
    return out.getvalue()


def scenario_from_json(text: str, supply: EnergyTrace) -> Scenario:
    """``{device, battery, workload_ops, dt, seed, supply_scale}`` plus an already loaded trace."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid scenario JSON: {exc}") from None
    try:
        return Scenario(
            supply,
            DeviceModel.from_dict(doc["device"]),
            Battery(**doc.get("battery", {})),
            float(doc["workload_ops"]),
            doc.get("dt"),
            int(doc.get("seed", 42)),
            float(doc.get("supply_scale", 1e6)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad scenario: {exc!r}") from None


def device_to_dict(device: DeviceModel) -> dict:
    return asdict(device)
