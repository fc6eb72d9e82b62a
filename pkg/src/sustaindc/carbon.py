"""Operational and embodied energy accounting, net demand, and billing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .traces import EnergyTrace

KINDS = ("CPU", "GPU", "PIM", "SSD", "NET")
SECONDS_PER_YEAR = 365 * 86400

DEFAULT_PUE = 1.2
DEFAULT_DELIVERY_LOSS = 0.05


class CarbonError(ValueError):
    pass


class CarbonDomainError(CarbonError):
    pass


class AlignmentError(CarbonError):
    pass


@dataclass(frozen=True)
class HardwareUnit:
    id: str
    kind: str
    tbe: float  # total embodied energy, J
    lifetime: float  # s
    power_active: float  # W
    power_idle: float  # W
    recycled: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CarbonDomainError(f"unit {self.id}: unknown kind {self.kind!r}")
        if self.tbe < 0:
            raise CarbonDomainError(f"unit {self.id}: TBE must be >= 0")
        if not self.lifetime > 0:
            raise CarbonDomainError(f"unit {self.id}: lifetime must be > 0")
        if not self.power_active >= self.power_idle >= 0:
            raise CarbonDomainError(f"unit {self.id}: need power_active >= power_idle >= 0")


def load_catalog(text: str) -> list[HardwareUnit]:
    """Hardware units from a JSON array of objects with the dataclass fields."""
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CarbonError(f"invalid catalog JSON: {exc}") from None
    if not isinstance(items, list):
        raise CarbonError("catalog must be a JSON array")
    try:
        return [HardwareUnit(**item) for item in items]
    except TypeError as exc:
        raise CarbonError(f"bad hardware unit entry: {exc}") from None


def dump_catalog(units: Iterable[HardwareUnit]) -> str:
    return json.dumps([asdict(u) for u in units], indent=2, sort_keys=True)


@dataclass
class EnergyBreakdown:
    e_ope: float = 0.0
    e_emb: float = 0.0
    # unit id -> active (dynamic) energy
    per_unit: dict = field(default_factory=dict)
    # unit id -> embodied share
    per_unit_embodied: dict = field(default_factory=dict)
    overheads: dict = field(default_factory=lambda: {"cooling": 0.0, "delivery_loss": 0.0, "idle": 0.0})
    recycled_units: set = field(default_factory=set)

    @property
    def recycled_embodied(self) -> float:
        return float(sum(v for uid, v in self.per_unit_embodied.items() if uid in self.recycled_units))

    def to_dict(self) -> dict:
        return {
            "E_ope": self.e_ope,
            "E_emb": self.e_emb,
            "per_unit": dict(self.per_unit),
            "per_unit_embodied": dict(self.per_unit_embodied),
            "overheads": dict(self.overheads),
        }


def embodied_energy(used_units: Iterable[tuple[HardwareUnit, float]]) -> float:
    """Sum of ``TBE * latency / lifetime`` over the units a task used."""
    total = 0.0
    for unit, latency in used_units:
        if latency < 0:
            raise CarbonDomainError(f"unit {unit.id}: negative latency {latency}")
        if not unit.lifetime > 0:
            raise CarbonDomainError(f"unit {unit.id}: lifetime must be > 0")
        total += unit.tbe * latency / unit.lifetime
    return total


def operational_energy(
    usage: Sequence[tuple[HardwareUnit, float]],
    duty: float | Sequence[float] = 1.0,
    pue: float = DEFAULT_PUE,
    delivery_loss_fraction: float = DEFAULT_DELIVERY_LOSS,
) -> EnergyBreakdown:
    """Facility-level operational energy of running ``usage`` (unit, seconds) pairs.

    Active energy is ``latency * duty * power_active`` per unit and idle energy
    ``latency * (1 - duty) * power_idle``.  Cooling adds ``(pue - 1)`` of the IT
    energy and delivery loss inflates the total by ``1 / (1 - loss)``.
    """
    usage = list(usage)
    duties = [float(duty)] * len(usage) if np.isscalar(duty) else [float(d) for d in duty]
    if len(duties) != len(usage):
        raise CarbonDomainError("one duty value per unit is required")
    if pue < 1:
        raise CarbonDomainError(f"PUE must be >= 1, got {pue}")
    if not 0 <= delivery_loss_fraction < 1:
        raise CarbonDomainError(f"delivery loss fraction must be in [0, 1), got {delivery_loss_fraction}")
    out = EnergyBreakdown()
    active = idle = 0.0
    for (unit, latency), d in zip(usage, duties):
        if not 0 <= d <= 1:
            raise CarbonDomainError(f"unit {unit.id}: duty {d} outside [0, 1]")
        if latency < 0:
            raise CarbonDomainError(f"unit {unit.id}: negative latency {latency}")
        a = latency * d * unit.power_active
        out.per_unit[unit.id] = out.per_unit.get(unit.id, 0.0) + a
        active += a
        idle += latency * (1 - d) * unit.power_idle
    it_energy = active + idle
    cooling = it_energy * (pue - 1)
    delivered = (it_energy + cooling) / (1 - delivery_loss_fraction)
    out.overheads = {"cooling": cooling, "delivery_loss": delivered - it_energy - cooling, "idle": idle}
    out.e_ope = delivered
    return out


def energy_breakdown(
    usage: Sequence[tuple[HardwareUnit, float, float]],
    pue: float = DEFAULT_PUE,
    delivery_loss_fraction: float = DEFAULT_DELIVERY_LOSS,
) -> EnergyBreakdown:
    """Operational plus embodied energy for ``(unit, window_s, busy_s)`` triples.

    Each unit is held for ``window_s`` and busy for ``busy_s`` of it; embodied
    energy is amortized over the busy time.
    """
    pairs, duties = [], []
    for unit, window, busy in usage:
        if busy > window:
            raise CarbonDomainError(f"unit {unit.id}: busy time exceeds window")
        pairs.append((unit, window))
        duties.append(busy / window if window > 0 else 0.0)
    out = operational_energy(pairs, duties, pue, delivery_loss_fraction)
    for unit, _, busy in usage:
        share = embodied_energy([(unit, busy)])
        out.per_unit_embodied[unit.id] = out.per_unit_embodied.get(unit.id, 0.0) + share
        if unit.recycled:
            out.recycled_units.add(unit.id)
    out.e_emb = float(sum(out.per_unit_embodied.values()))
    return out


@dataclass(frozen=True)
class NetDemandPoint:
    timestamp: int
    demand: float
    renewable: float
    net: float


def net_demand(demand: EnergyTrace, renewable: EnergyTrace) -> list[NetDemandPoint]:
    """Pointwise demand minus renewable generation; surplus stays negative."""
    if demand.resolution != renewable.resolution or not np.array_equal(demand.timestamps, renewable.timestamps):
        raise AlignmentError("demand and renewable traces must share resolution and timestamps")
    net = demand.values - renewable.values
    return [
        NetDemandPoint(int(t), float(d), float(r), float(n))
        for t, d, r, n in zip(demand.timestamps, demand.values, renewable.values, net)
    ]


# -- billing ----------------------------------------------------------------


@dataclass(frozen=True)
class FlatRate:
    price: float

    def __post_init__(self):
        if self.price < 0:
            raise CarbonDomainError("price must be >= 0")


@dataclass(frozen=True)
class CarbonAware:
    """Operational energy priced up by a multiplier of mean positive net demand.

    ``curve`` is a list of ``(net_mw, multiplier)`` breakpoints, linearly
    interpolated and held flat past the ends; it must pass through ``(0, 1)``.
    """

    price: float
    curve: tuple[tuple[float, float], ...] = ((0.0, 1.0), (100.0, 2.0))

    def __post_init__(self):
        if self.price < 0:
            raise CarbonDomainError("price must be >= 0")
        pts = tuple((float(x), float(y)) for x, y in self.curve)
        xs = [x for x, _ in pts]
        ys = [y for _, y in pts]
        if not pts or any(b <= a for a, b in zip(xs, xs[1:])):
            raise CarbonDomainError("curve breakpoints must be strictly increasing in net demand")
        if any(b < a for a, b in zip(ys, ys[1:])) or min(ys) < 0:
            raise CarbonDomainError("curve multipliers must be non-negative and non-decreasing")
        if xs[0] > 0 or not np.isclose(np.interp(0.0, xs, ys), 1.0, rtol=0, atol=1e-12):
            raise CarbonDomainError("curve must satisfy mult(0) = 1")
        object.__setattr__(self, "curve", pts)

    def multiplier(self, net_mw: float) -> float:
        xs, ys = zip(*self.curve)
        return float(np.interp(max(net_mw, 0.0), xs, ys))


@dataclass(frozen=True)
class RecycledDiscount:
    base: "FlatRate | CarbonAware | RecycledDiscount"
    discount: float

    def __post_init__(self):
        if not 0 <= self.discount <= 1:
            raise CarbonDomainError("discount must be in [0, 1]")


BillingPolicy = FlatRate | CarbonAware | RecycledDiscount


def mean_positive_net(net: Iterable[float | NetDemandPoint]) -> float:
    values = [p.net if isinstance(p, NetDemandPoint) else float(p) for p in net]
    if not values:
        return 0.0
    return float(np.mean(np.maximum(values, 0.0)))


def charge(
    e_ope: float,
    e_emb: float,
    net: Iterable[float | NetDemandPoint],
    policy: BillingPolicy,
    recycled_emb: float = 0.0,
) -> float:
    """Credits owed for a task.

    ``recycled_emb`` is the part of ``e_emb`` attributable to recycled units;
    only :class:`RecycledDiscount` looks at it.
    """
    if e_ope < 0 or e_emb < 0:
        raise CarbonDomainError("energies must be >= 0")
    if not 0 <= recycled_emb <= e_emb * (1 + 1e-12):
        raise CarbonDomainError("recycled embodied share must lie within [0, E_emb]")
    net = list(net)
    if isinstance(policy, FlatRate):
        return policy.price * (e_ope + e_emb)
    if isinstance(policy, CarbonAware):
        return policy.price * e_emb + policy.price * e_ope * policy.multiplier(mean_positive_net(net))
    if isinstance(policy, RecycledDiscount):
        kept = recycled_emb * (1 - policy.discount)
        discounted = max(e_emb - recycled_emb, 0.0) + kept
        return charge(e_ope, discounted, net, policy.base, kept)
    raise CarbonError(f"unknown billing policy {policy!r}")


def policy_to_dict(policy: BillingPolicy) -> dict:
    if isinstance(policy, FlatRate):
        return {"type": "flat", "price": policy.price}
    if isinstance(policy, CarbonAware):
        return {"type": "carbon-aware", "price": policy.price, "curve": [list(p) for p in policy.curve]}
    return {"type": "recycled-discount", "discount": policy.discount, "base": policy_to_dict(policy.base)}


def policy_from_dict(d: dict) -> BillingPolicy:
    """Inverse of :func:`policy_to_dict`."""
    try:
        kind = d["type"]
        if kind == "flat":
            return FlatRate(float(d["price"]))
        if kind == "carbon-aware":
            return CarbonAware(float(d["price"]), tuple(tuple(p) for p in d.get("curve", CarbonAware.curve)))
        if kind == "recycled-discount":
            return RecycledDiscount(policy_from_dict(d["base"]), float(d["discount"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CarbonError):
            raise
        raise CarbonError(f"malformed billing policy: {exc!r}") from None
    raise CarbonError(f"unknown billing policy type {kind!r}")
