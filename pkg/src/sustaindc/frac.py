"""Fractional NAND flash cells.

A fractional cell keeps ``m`` threshold-voltage states per cell (``2 <= m <= 8``)
instead of a power of two.  Groups of ``alpha`` cells jointly store
``k = floor(log2(m**alpha))`` bits; the unused state combinations are the price
paid for finer-grained capacity steps.  This module holds the codec plus the
capacity, read/program, endurance and raw-bit-error models built on it.

All capacity arithmetic is exact (integers and :class:`fractions.Fraction`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

M_MIN = 2
M_MAX = 8
# widest group value we support, in bits
MAX_GROUP_BITS = 64


class FracError(ValueError):
    pass


class FracRangeError(FracError):
    pass


class FracDecodeError(FracError):
    pass


class FracDomainError(FracError):
    pass


def _check_m(m: int) -> None:
    if not isinstance(m, (int, np.integer)) or not M_MIN <= m <= M_MAX:
        raise FracDomainError(f"states per cell must be an integer in [{M_MIN}, {M_MAX}], got {m!r}")


def bits_per_group(m: int, alpha: int) -> int:
    """Largest ``k`` with ``2**k <= m**alpha``, computed without floating point."""
    _check_m(m)
    if alpha < 1:
        raise FracDomainError(f"alpha must be >= 1, got {alpha}")
    states = m**alpha
    if states >= 1 << MAX_GROUP_BITS:
        raise FracRangeError(f"{m}**{alpha} exceeds the supported {MAX_GROUP_BITS}-bit group width")
    return states.bit_length() - 1


def utilization(m: int, alpha: int) -> Fraction:
    """Fraction of the group's state combinations that carry data."""
    k = bits_per_group(m, alpha)
    return Fraction(1 << k, m**alpha)


def best_alpha(m: int, alpha_max: int) -> int:
    """Group size in ``[1, alpha_max]`` with the highest utilization (smallest on ties)."""
    if alpha_max < 1:
        raise FracDomainError(f"alpha_max must be >= 1, got {alpha_max}")
    best, best_u = 1, utilization(m, 1)
    for alpha in range(2, alpha_max + 1):
        u = utilization(m, alpha)
        if u > best_u:
            best, best_u = alpha, u
    return best


@dataclass(frozen=True)
class FracSpec:
    """An ``(m, alpha)`` grouping and the bits it stores."""

    m: int
    alpha: int
    k: int = field(init=False)
    utilization: Fraction = field(init=False)

    def __post_init__(self):
        k = bits_per_group(self.m, self.alpha)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "utilization", Fraction(1 << k, self.m**self.alpha))

    @classmethod
    def best(cls, m: int, alpha_max: int = 8) -> "FracSpec":
        return cls(m, best_alpha(m, alpha_max))


@dataclass(frozen=True)
class CellGroup:
    digits: tuple[int, ...]


def encode(value: int, spec: FracSpec) -> CellGroup:
    """Base-``m`` digits of ``value``, most significant cell first."""
    if not 0 <= value < (1 << spec.k):
        raise FracRangeError(f"value {value} outside [0, 2**{spec.k})")
    digits = [0] * spec.alpha
    for i in range(spec.alpha - 1, -1, -1):
        value, digits[i] = divmod(value, spec.m)
    return CellGroup(tuple(digits))


def decode(group: CellGroup | Sequence[int], spec: FracSpec) -> int:
    digits = tuple(int(d) for d in (group.digits if isinstance(group, CellGroup) else group))
    if len(digits) != spec.alpha:
        raise FracDecodeError(f"expected {spec.alpha} cells, got {len(digits)}")
    value = 0
    for d in digits:
        if not 0 <= d < spec.m:
            raise FracDecodeError(f"cell state {d} outside [0, {spec.m})")
        value = value * spec.m + d
    if value >= 1 << spec.k:
        raise FracDecodeError(f"cell pattern {list(digits)} encodes {value} >= 2**{spec.k} (unused code)")
    return value


def encode_bytes(data: bytes, spec: FracSpec) -> np.ndarray:
    """Pack a byte string into cell states, ``spec.alpha`` cells per ``spec.k`` bits.

    The bit stream is read MSB-first and zero-padded to a whole number of groups.
    """
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    n_groups = -(-bits.size // spec.k)
    bits = np.concatenate([bits, np.zeros(n_groups * spec.k - bits.size, dtype=np.uint8)])
    cells = []
    for chunk in bits.reshape(n_groups, spec.k):
        value = int("".join(map(str, chunk)), 2) if spec.k else 0
        cells.extend(encode(value, spec).digits)
    return np.asarray(cells, dtype=np.uint8)


def decode_bytes(cells: Sequence[int], spec: FracSpec, n_bytes: int) -> bytes:
    cells = list(cells)
    if len(cells) % spec.alpha:
        raise FracDecodeError(f"{len(cells)} cells is not a multiple of alpha={spec.alpha}")
    out = []
    for i in range(0, len(cells), spec.alpha):
        value = decode(cells[i : i + spec.alpha], spec)
        out.append(format(value, f"0{spec.k}b"))
    bits = "".join(out)
    if len(bits) < 8 * n_bytes:
        raise FracDecodeError(f"{len(cells)} cells hold fewer than {n_bytes} bytes")
    return int(bits[: 8 * n_bytes], 2).to_bytes(n_bytes, "big") if n_bytes else b""


# -- reading ---------------------------------------------------------------


def read_iterations(m: int) -> int:
    """Sensing iterations for an m-state cell, ``ceil(log2 m)``."""
    _check_m(m)
    return (m - 1).bit_length()


@dataclass(frozen=True)
class ReadLadder:
    """Read references r1..r(m-1) in ascending threshold-voltage order."""

    references: tuple[float, ...]

    def __post_init__(self):
        refs = tuple(float(r) for r in self.references)
        if len(refs) < 1 or any(b <= a for a, b in zip(refs, refs[1:])):
            raise FracDomainError(f"read references must be strictly ascending and non-empty: {refs}")
        object.__setattr__(self, "references", refs)

    @property
    def m(self) -> int:
        return len(self.references) + 1

    @classmethod
    def uniform(cls, m: int, v_max: float = 4.0) -> "ReadLadder":
        _check_m(m)
        step = v_max / (m - 1)
        # references sit halfway between neighbouring state targets
        return cls(tuple(step * (i + 0.5) for i in range(m - 1)))

    def state_voltage(self, state: int) -> float:
        """A representative threshold voltage for a cell programmed to ``state``."""
        refs = self.references
        if state == 0:
            return refs[0] - 1.0
        if state == len(refs):
            return refs[-1] + 1.0
        return 0.5 * (refs[state - 1] + refs[state])


def read_cell(state: int, ladder: ReadLadder) -> tuple[int, list[int]]:
    """Sense a cell by binary search over the ladder.

    Returns the sensed state and the 1-based indices of the references compared,
    in order.  The first comparison is against the upper-middle reference
    (r4 of 7 for a TLC cell).
    """
    m = ladder.m
    if not 0 <= state < m:
        raise FracDomainError(f"state {state} outside [0, {m})")
    v = ladder.state_voltage(state)
    lo, hi = 0, m - 1
    trace = []
    while lo < hi:
        mid = (lo + hi + 1) // 2
        trace.append(mid)
        if v > ladder.references[mid - 1]:
            lo = mid
        else:
            hi = mid - 1
    return lo, trace


# -- programming -----------------------------------------------------------


@dataclass(frozen=True)
class IsppConfig:
    """Incremental step pulse programming over a fixed voltage window.

    State targets are spread evenly over ``[0, v_top]``; the first pulse starts
    one step below the lowest programmed target, so cells with fewer states start
    with a larger pulse.
    """

    delta_v: float = 0.25
    v_top: float = 4.0

    def v_target(self, m: int, state: int) -> float:
        return self.v_top * state / (m - 1)

    def v_start(self, m: int) -> float:
        return max(0.0, self.v_target(m, 1) - self.delta_v)


def program_pulses(m: int, target_state: int, ispp: IsppConfig | None = None) -> int:
    _check_m(m)
    if not 0 <= target_state < m:
        raise FracDomainError(f"target state {target_state} outside [0, {m})")
    if target_state == 0:
        return 0
    ispp = ispp or IsppConfig()
    gap = ispp.v_target(m, target_state) - ispp.v_start(m)
    if math.isinf(ispp.delta_v):
        return 1
    return max(1, math.ceil(gap / ispp.delta_v))


# -- endurance and capacity --------------------------------------------------


def endurance_multiplier(m: int) -> float:
    """Endurance relative to an 8-state cell: 1 at m=8, 10 at m=2, log-linear in ln m."""
    _check_m(m)
    return 10.0 ** ((math.log(8) - math.log(m)) / (math.log(8) - math.log(2)))


@dataclass(frozen=True)
class EnduranceModel:
    beta: float = 0.3
    base_endurance_tlc: float = 3000.0

    def __post_init__(self):
        if self.beta < 0.3:
            raise FracDomainError(f"beta must be >= 0.3, got {self.beta}")
        if self.base_endurance_tlc <= 0:
            raise FracDomainError("base endurance must be positive")

    def multiplier(self, m: int) -> float:
        return endurance_multiplier(m)

    def rated_cycles(self, m: int) -> float:
        return self.base_endurance_tlc * endurance_multiplier(m)

    def wear_law(self, n_pe: float) -> float:
        """Power-law wear term ``n_pe ** beta``."""
        return float(n_pe) ** self.beta


@dataclass(frozen=True)
class PageGeometry:
    # 10923 TLC cells hold 32769 bits, i.e. a 4096-byte page
    cells_per_page: int = 10923

    def __post_init__(self):
        if self.cells_per_page <= 0:
            raise FracDomainError("cells_per_page must be positive")


def page_capacity(m: int, alpha: int, geometry: PageGeometry | None = None) -> int:
    """Whole bytes a page stores with ``(m, alpha)`` grouping."""
    geometry = geometry or PageGeometry()
    k = bits_per_group(m, alpha)
    return (geometry.cells_per_page // alpha) * k // 8


# -- raw bit error rate ------------------------------------------------------

RBER_ANCHOR_CYCLES = 6000
RBER_ANCHORS = {2: 0.006, 3: 0.009, 4: 0.014}


@dataclass(frozen=True)
class RberModel:
    """``rber(m, n) = a(m) * n**b`` fitted exactly through the 6k-cycle anchors.

    States beyond the largest anchor are extrapolated by continuing the last
    anchor segment's slope in ``ln a``.
    """

    anchors: Mapping[int, float] = field(default_factory=lambda: dict(RBER_ANCHORS))
    anchor_cycles: float = RBER_ANCHOR_CYCLES
    b: float = 1.0

    def __post_init__(self):
        ms = sorted(self.anchors)
        if len(ms) < 2:
            raise FracDomainError("need at least two RBER anchors")
        rates = [self.anchors[m] for m in ms]
        if any(r <= 0 for r in rates) or any(y <= x for x, y in zip(rates, rates[1:])):
            raise FracDomainError("RBER anchors must be positive and increasing in m")
        if self.b <= 0:
            raise FracDomainError("exponent b must be positive")

    def coefficient(self, m: int) -> float:
        _check_m(m)
        ms = sorted(self.anchors)
        scale = self.anchor_cycles**self.b
        if m in self.anchors:
            return self.anchors[m] / scale
        if m > ms[-1]:
            lo, hi = ms[-2], ms[-1]
        elif m < ms[0]:
            lo, hi = ms[0], ms[1]
        else:
            lo = max(x for x in ms if x < m)
            hi = min(x for x in ms if x > m)
        ln_lo, ln_hi = math.log(self.anchors[lo]), math.log(self.anchors[hi])
        slope = (ln_hi - ln_lo) / (hi - lo)
        return math.exp(ln_lo + slope * (m - lo)) / scale

    def __call__(self, m: int, n_pe: float) -> float:
        if n_pe < 0:
            raise FracDomainError(f"P/E cycles must be >= 0, got {n_pe}")
        return self.coefficient(m) * float(n_pe) ** self.b


DEFAULT_RBER = RberModel()


def rber(m: int, n_pe: float, model: RberModel | None = None) -> float:
    return (model or DEFAULT_RBER)(m, n_pe)


# -- tables ------------------------------------------------------------------

TABLE_COLUMNS = ("m", "alpha", "bits", "utilization", "capacity_bytes", "endurance_multiplier")


def frac_table(m: int, alpha_max: int, geometry: PageGeometry | None = None) -> list[dict]:
    """Per-alpha rows of bits, utilization, page capacity and endurance."""
    _check_m(m)
    if alpha_max < 1:
        raise FracDomainError(f"alpha_max must be >= 1, got {alpha_max}")
    rows = []
    for alpha in range(1, alpha_max + 1):
        spec = FracSpec(m, alpha)
        rows.append(
            {
                "m": m,
                "alpha": alpha,
                "bits": spec.k,
                "utilization": float(spec.utilization),
                "capacity_bytes": page_capacity(m, alpha, geometry),
                "endurance_multiplier": endurance_multiplier(m),
            }
        )
    return rows
