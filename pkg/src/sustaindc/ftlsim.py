"""A page-mapped flash translation layer over a recycled chip.

Host data is mapped in 256-byte units.  A flash page written at ``m`` states
per cell holds ``page_capacity(m) // 256`` units, so a block's usable slots
shrink as it degrades.  Garbage collection is greedy (most invalid units,
ties to the least-worn block), free blocks are handed out least-worn first,
and every erase re-evaluates the block's raw bit error rate.

Wear is time-compressed: one simulated erase stands for
``pe_cycles_per_erase`` program/erase cycles, which keeps a full chip
lifetime (hundreds of thousands of cycles) within seconds of CPU time.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import frac

UNIT_BYTES = 256
M_SEQUENCE = (8, 7, 6, 5, 4, 3, 2)
POLICIES = ("frac", "fixed-tlc", "mlc-to-slc")


class FtlError(ValueError):
    pass


class FtlConfigError(FtlError):
    pass


class GcError(FtlError):
    pass


class ChipDead(FtlError):
    def __init__(self, cause: str):
        super().__init__(cause)
        self.cause = cause


@dataclass(frozen=True)
class Geometry:
    blocks_per_chip: int = 256
    pages_per_block: int = 64
    cells_per_page: int = 10923

    def __post_init__(self):
        if min(self.blocks_per_chip, self.pages_per_block, self.cells_per_page) < 1:
            raise FtlConfigError("geometry must be positive")


@dataclass(frozen=True)
class DegradePolicy:
    kind: str = "frac"
    rber_threshold: float = 0.012
    m_sequence: tuple[int, ...] = M_SEQUENCE
    capacity_floor: float = 0.25
    alpha_max: int = 8

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise FtlConfigError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if not 0 < self.rber_threshold < 1:
            raise FtlConfigError("rber_threshold must lie in (0, 1)")
        seq = tuple(self.m_sequence)
        if not seq or any(b >= a for a, b in zip(seq, seq[1:])) or seq[-1] < 2 or seq[0] > 8:
            raise FtlConfigError("m_sequence must be strictly decreasing within [2, 8]")
        if not 0 <= self.capacity_floor < 1:
            raise FtlConfigError("capacity_floor must lie in [0, 1)")
        object.__setattr__(self, "m_sequence", seq)

    @property
    def initial_m(self) -> int:
        return {"frac": self.m_sequence[0], "fixed-tlc": 8, "mlc-to-slc": 4}[self.kind]

    def next_m(self, m: int) -> int | None:
        """Level after ``m`` under this policy, or None when the block must retire."""
        if self.kind == "fixed-tlc":
            return None
        if self.kind == "mlc-to-slc":
            return 2 if m == 4 else None
        i = self.m_sequence.index(m)
        return self.m_sequence[i + 1] if i + 1 < len(self.m_sequence) else None


@dataclass(frozen=True)
class Workload:
    pattern: str = "uniform"  # or "zipf"
    write_size: int = UNIT_BYTES
    zipf_theta: float = 0.99
    max_host_bytes: float = float("inf")

    def __post_init__(self):
        if self.pattern not in ("uniform", "zipf"):
            raise FtlConfigError(f"unknown pattern {self.pattern!r}")
        if self.write_size < 1 or self.write_size % UNIT_BYTES:
            raise FtlConfigError(f"write_size must be a positive multiple of {UNIT_BYTES}")


def page_bytes(m: int, geometry: Geometry = Geometry(), alpha_max: int = 8) -> int:
    return frac.page_capacity(m, frac.best_alpha(m, alpha_max), frac.PageGeometry(geometry.cells_per_page))


def units_per_page(m: int, geometry: Geometry = Geometry(), alpha_max: int = 8) -> int:
    return page_bytes(m, geometry, alpha_max) // UNIT_BYTES


@dataclass
class Stats:
    host_units: int = 0
    relocations: int = 0
    erases: int = 0
    gc_runs: int = 0
    degrade_events: int = 0
    retired: int = 0
    trimmed: int = 0


class FlashChip:
    """Mutable chip state; one instance is driven by one simulation loop."""

    def __init__(
        self,
        geometry: Geometry = Geometry(),
        wear: tuple[int, int] = (0, 0),
        seed: int = 42,
        policy: DegradePolicy = DegradePolicy(),
        pe_cycles_per_erase: int = 250,
        reserve_blocks: int = 2,
        overprovision: float = 0.10,
    ):
        lo, hi = wear
        if lo > hi or lo < 0:
            raise FtlConfigError(f"wear bounds must satisfy 0 <= lo <= hi, got {wear}")
        if not 0 < overprovision < 1:
            raise FtlConfigError("overprovision must lie in (0, 1)")
        if pe_cycles_per_erase < 1 or reserve_blocks < 1:
            raise FtlConfigError("pe_cycles_per_erase and reserve_blocks must be >= 1")
        self.geometry = geometry
        self.policy = policy
        self.k = int(pe_cycles_per_erase)
        self.reserve = int(reserve_blocks)
        self.overprovision = overprovision
        self.rng = np.random.default_rng(seed)
        nb, pages = geometry.blocks_per_chip, geometry.pages_per_block
        self.stride = pages * units_per_page(8, geometry, policy.alpha_max)
        self.upp = {m: units_per_page(m, geometry, policy.alpha_max) for m in range(2, 9)}
        self.page_bytes = {m: page_bytes(m, geometry, policy.alpha_max) for m in range(2, 9)}
        self.erase_count = self.rng.integers(lo, hi + 1, nb).astype(np.int64)
        self.m = np.full(nb, policy.initial_m, dtype=np.int64)
        self.retired = np.zeros(nb, dtype=bool)
        # usable slots of each block as currently programmed
        self.slots = np.full(nb, pages * self.upp[policy.initial_m], dtype=np.int64)
        self.write_ptr = np.zeros(nb, dtype=np.int64)
        self.valid = np.zeros(nb, dtype=np.int64)
        self.p2l = np.full(nb * self.stride, -1, dtype=np.int64)
        self.slot_token = np.zeros(nb * self.stride, dtype=np.int64)
        self.free = set(range(nb))
        self.active: int | None = None
        self.initial_capacity = self.capacity_bytes()
        self.span = self._span_units()
        self.l2p = np.full(self.span, -1, dtype=np.int64)
        self.host_token = np.zeros(self.span, dtype=np.int64)
        self.seq = 0
        self.stats = Stats()
        self.converted = False  # mlc-to-slc switch happened

    # -- capacity ------------------------------------------------------------

    def block_capacity_bytes(self) -> np.ndarray:
        per_page = np.array([self.page_bytes[m] for m in self.m])
        return np.where(self.retired, 0, per_page * self.geometry.pages_per_block)

    def capacity_bytes(self) -> int:
        return int(self.block_capacity_bytes().sum())

    def mean_m(self) -> float:
        live = ~self.retired
        return float(self.m[live].mean()) if live.any() else 0.0

    def _block_units(self) -> np.ndarray:
        per_page = np.array([self.upp[m] for m in self.m])
        return np.where(self.retired, 0, per_page * self.geometry.pages_per_block)

    def _span_units(self) -> int:
        units = self._block_units()
        # keep the reserve's worth of the largest blocks out of the logical space
        usable = units.sum() - np.sort(units)[::-1][: self.reserve + 1].sum()
        return max(0, int(usable * (1 - self.overprovision)))

    def _shrink_span(self):
        new = min(self.span, self._span_units())
        if new < self.span:
            gone = self.l2p[new : self.span]
            mapped = gone[gone >= 0]
            self._invalidate(mapped)
            self.stats.trimmed += int(mapped.size)
            self.l2p[new:] = -1
            self.span = new

    # -- low-level ops -----------------------------------------------------------

    def _invalidate(self, slots: np.ndarray):
        if slots.size == 0:
            return
        self.p2l[slots] = -1
        np.subtract.at(self.valid, slots // self.stride, 1)

    def _open_block(self) -> int:
        if not self.free:
            raise ChipDead("mapping_full")
        b = min(self.free, key=lambda i: (self.erase_count[i], i))
        self.free.discard(b)
        self.active = b
        return b

    def _room(self, relocating: bool = False) -> int:
        if self.active is None or self.write_ptr[self.active] >= self.slots[self.active]:
            if not relocating:
                self._ensure_space()
            self._open_block()
        b = self.active
        return int(self.slots[b] - self.write_ptr[b])

    def _ensure_space(self):
        # the reserve lets relocation open fresh blocks without recursing into GC
        budget = 2 * len(self.m)
        while len(self.free) < self.reserve:
            if budget == 0:
                raise ChipDead("mapping_full")
            self.gc_once()
            budget -= 1

    def _program(self, units: np.ndarray, tokens: np.ndarray, relocating: bool = False) -> None:
        """Append units to the active block(s); ``units`` hold no duplicates."""
        done = 0
        while done < units.size:
            room = self._room(relocating)
            b = self.active
            n = min(room, units.size - done)
            chunk = units[done : done + n]
            start = b * self.stride + self.write_ptr[b]
            new = np.arange(start, start + n)
            self.p2l[new] = chunk
            self.slot_token[new] = tokens[done : done + n]
            self.l2p[chunk] = new
            self.write_ptr[b] += n
            self.valid[b] += n
            done += n

    def write_units(self, units) -> None:
        """Host-write logical units in order (later duplicates win)."""
        units = np.asarray(units, dtype=np.int64)
        if units.size == 0:
            return
        if units.min() < 0 or units.max() >= self.span:
            raise FtlError(f"logical unit outside the exported span [0, {self.span})")
        tokens = self.seq + 1 + np.arange(units.size)
        self.seq += units.size
        self.stats.host_units += int(units.size)
        # keep only the last occurrence of each unit; earlier copies are dead on arrival
        rev_unique, rev_idx = np.unique(units[::-1], return_index=True)
        last = np.sort(units.size - 1 - rev_idx)
        keep_units, keep_tokens = units[last], tokens[last]
        old = self.l2p[keep_units]
        self._invalidate(old[old >= 0])
        self.l2p[keep_units] = -1
        self.host_token[keep_units] = keep_tokens
        span = self.span
        self._program(keep_units, keep_tokens)
        if self.span < span:
            # the span shrank under an in-flight write; drop what fell off the end
            beyond = keep_units[keep_units >= self.span]
            beyond = beyond[self.l2p[beyond] >= 0]
            self._invalidate(self.l2p[beyond])
            self.stats.trimmed += int(beyond.size)
            self.l2p[beyond] = -1

    def host_write(self, logical_unit: int, payload_size: int = UNIT_BYTES) -> None:
        if not 0 < payload_size <= UNIT_BYTES:
            raise FtlError(f"payload must be 1..{UNIT_BYTES} bytes")
        self.write_units([logical_unit])

    # -- garbage collection --------------------------------------------------------

    def headroom(self) -> int:
        """Units that can be programmed without erasing anything."""
        room = sum(int(self.slots[b]) for b in self.free)
        if self.active is not None:
            room += int(self.slots[self.active] - self.write_ptr[self.active])
        return room

    def pick_victim(self) -> int:
        invalid = self.write_ptr - self.valid
        ok = ~self.retired & (invalid > 0)
        if self.active is not None:
            ok[self.active] = False
        for b in self.free:
            ok[b] = False
        # degraded free blocks may be too small to absorb a large victim's live data
        ok &= self.valid <= self.headroom()
        if not ok.any():
            raise GcError("no block with invalid pages")
        # most invalid first, then least worn, then lowest id
        cand = np.flatnonzero(ok)
        order = np.lexsort((cand, self.erase_count[cand], -invalid[cand]))
        return int(cand[order[0]])

    def gc_once(self) -> int:
        try:
            victim = self.pick_victim()
        except GcError:
            raise ChipDead("mapping_full") from None
        self.stats.gc_runs += 1
        base = victim * self.stride
        region = np.arange(base, base + self.write_ptr[victim])
        live = region[self.p2l[region] >= 0]
        units = self.p2l[live].copy()
        tokens = self.slot_token[live].copy()
        self._invalidate(live)
        self.l2p[units] = -1
        self.stats.relocations += int(units.size)
        # copy out first, then erase; the reserve guarantees somewhere to copy to
        if units.size:
            self._program(units, tokens, relocating=True)
        self._erase(victim)
        return victim

    def _erase(self, b: int):
        self.p2l[b * self.stride : b * self.stride + self.write_ptr[b]] = -1
        self.write_ptr[b] = 0
        self.valid[b] = 0
        self.erase_count[b] += self.k
        self.stats.erases += 1
        self.maybe_degrade(b)
        if not self.retired[b]:
            self.slots[b] = self.geometry.pages_per_block * self.upp[int(self.m[b])]
            self.free.add(b)

    def effective_cycles(self, b: int) -> float:
        return float(self.erase_count[b]) / frac.endurance_multiplier(int(self.m[b]))

    def maybe_degrade(self, b: int):
        m = int(self.m[b])
        if frac.rber(m, self.effective_cycles(b)) <= self.policy.rber_threshold:
            return
        nxt = self.policy.next_m(m)
        if self.policy.kind == "mlc-to-slc" and nxt is not None and not self.converted:
            # one chip-wide switch from 2-bit to 1-bit cells
            self.converted = True
            self.m[~self.retired] = 2
            self.stats.degrade_events += 1
        elif nxt is None:
            self.retired[b] = True
            self.slots[b] = 0
            self.stats.retired += 1
        else:
            self.m[b] = nxt
            self.stats.degrade_events += 1
        self._shrink_span()

    # -- checks ---------------------------------------------------------------------

    def check_invariants(self) -> None:
        live = np.flatnonzero(self.l2p[: self.span] >= 0)
        slots = self.l2p[live]
        if np.unique(slots).size != slots.size:
            raise AssertionError("two logical units share a physical slot")
        if not np.array_equal(self.p2l[slots], live):
            raise AssertionError("reverse map disagrees")
        if not np.array_equal(self.slot_token[slots], self.host_token[live]):
            raise AssertionError("a logical unit lost its last write")
        counts = np.bincount(np.flatnonzero(self.p2l >= 0) // self.stride, minlength=len(self.m))
        if not np.array_equal(counts, self.valid):
            raise AssertionError("valid counters drifted")
        if np.any(self.write_ptr > self.stride):
            raise AssertionError("write pointer past block end")


def init_chip(geometry: Geometry = Geometry(), recycled_wear=(2000, 4000), seed: int = 42, **kw) -> FlashChip:
    return FlashChip(geometry, tuple(recycled_wear), seed, **kw)


@dataclass
class LifetimeReport:
    policy: str
    total_host_bytes_written: int
    timeline: list  # (host_bytes, capacity_bytes, mean_m)
    death_cause: str | None
    initial_capacity_bytes: int
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "total_host_bytes_written": self.total_host_bytes_written,
            "death_cause": self.death_cause,
            "initial_capacity_bytes": self.initial_capacity_bytes,
            "capacity_steps": len(self.timeline) - 1,
            "stats": self.stats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def timeline_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["host_bytes_written", "exported_capacity_bytes", "mean_m"])
        for hb, cap, mm in self.timeline:
            w.writerow([hb, cap, repr(mm)])
        return out.getvalue()

    def capacity_drops(self) -> list[tuple[int, int]]:
        """``(before, after)`` for every capacity change."""
        caps = [c for _, c, _ in self.timeline]
        return [(a, b) for a, b in zip(caps, caps[1:]) if b != a]

    def plateaus(self, min_share: float = 0.02, tolerance: float = 0.02) -> list[int]:
        """Capacity levels held (within ``tolerance``) over at least ``min_share`` of all host bytes."""
        total = max(self.total_host_bytes_written, 1)
        out = []
        i = 0
        pts = self.timeline
        while i < len(pts):
            level = pts[i][1]
            j = i
            while j + 1 < len(pts) and abs(pts[j + 1][1] - level) <= tolerance * level:
                j += 1
            end = pts[j + 1][0] if j + 1 < len(pts) else self.total_host_bytes_written
            if (end - pts[i][0]) >= min_share * total:
                out.append(level)
            i = j + 1
        return out


def run_lifetime(chip: FlashChip, workload: Workload = Workload(), check_every: int = 0) -> LifetimeReport:
    """Replay host writes until the chip dies (or ``max_host_bytes`` is reached)."""
    rng = chip.rng
    per_req = workload.write_size // UNIT_BYTES
    floor = chip.policy.capacity_floor * chip.initial_capacity
    timeline = [(0, chip.capacity_bytes(), chip.mean_m())]
    cause = None
    zipf_cdf, zipf_span = None, -1
    batches = 0
    try:
        while chip.stats.host_units * UNIT_BYTES < workload.max_host_bytes:
            # one batch roughly fills the active block; making room may run GC and shrink the span
            room = chip._room()
            if chip.span < per_req:
                raise ChipDead("capacity_floor")
            n_req = max(1, room // per_req)
            if workload.pattern == "uniform":
                starts = rng.integers(0, chip.span - per_req + 1, n_req)
            else:
                if zipf_span != chip.span:
                    w = 1.0 / np.arange(1, chip.span - per_req + 2) ** workload.zipf_theta
                    zipf_cdf, zipf_span = np.cumsum(w) / w.sum(), chip.span
                starts = np.minimum(np.searchsorted(zipf_cdf, rng.random(n_req), side="right"), zipf_cdf.size - 1)
            units = (starts[:, None] + np.arange(per_req)[None, :]).reshape(-1)
            chip.write_units(units)
            cap = chip.capacity_bytes()
            if cap != timeline[-1][1]:
                timeline.append((chip.stats.host_units * UNIT_BYTES, cap, chip.mean_m()))
            if cap < floor:
                raise ChipDead("capacity_floor")
            batches += 1
            if check_every and batches % check_every == 0:
                chip.check_invariants()
    except ChipDead as dead:
        cause = dead.cause
    host_bytes = chip.stats.host_units * UNIT_BYTES
    final = (host_bytes, chip.capacity_bytes(), chip.mean_m())
    if final != timeline[-1]:
        timeline.append(final)
    return LifetimeReport(chip.policy.kind, host_bytes, timeline, cause, chip.initial_capacity, asdict(chip.stats))


def config_from_json(text: str) -> dict:
    """Parse ``{geometry, wear, policy, workload, seed, pe_cycles_per_erase}``; missing keys take defaults."""
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise FtlConfigError(f"invalid config JSON: {exc}") from None
    try:
        return {
            "geometry": Geometry(**doc.get("geometry", {})),
            "wear": tuple(doc.get("wear", (2000, 4000))),
            "policy": DegradePolicy(**doc.get("policy", {})),
            "workload": Workload(**doc.get("workload", {})),
            "seed": int(doc.get("seed", 42)),
            "pe_cycles_per_erase": int(doc.get("pe_cycles_per_erase", 250)),
        }
    except TypeError as exc:
        raise FtlConfigError(f"bad config: {exc}") from None
