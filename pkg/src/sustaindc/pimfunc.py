"""Bit-accurate functional models of crossbar compute primitives.

These are device-free: they reproduce what each processing-engine mode
computes (cyclic shifts as permutation-matrix products, search-based addition,
shift-and-add multiplication, conductance-sum logic, thermometer ADC readout,
a debiased random bit source) without modelling analog behaviour.
"""

from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .estimator import Kernel, TaskGraph


class PimError(ValueError):
    pass


class PimDomainError(PimError):
    pass


class PimSizeError(PimError):
    pass


@dataclass(frozen=True)
class Word:
    value: int
    width: int

    def __post_init__(self):
        if not 1 <= self.width <= 64:
            raise PimDomainError(f"width must be in [1, 64], got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise PimDomainError(f"value {self.value} does not fit in {self.width} bits")

    def bits(self, n: int | None = None) -> list[int]:
        """Little-endian bit list, zero-extended to ``n`` bits."""
        n = self.width if n is None else n
        return [(self.value >> i) & 1 for i in range(n)]

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "Word":
        return cls(sum(int(b) << i for i, b in enumerate(bits)), len(bits))


# -- SHIFT as MVM ---------------------------------------------------------------


@dataclass(frozen=True)
class PermutationMatrix:
    """A 0/1 matrix with one 1 per row; ``rows[i]`` is that 1's column."""

    n: int
    rows: tuple[int, ...]

    def __post_init__(self):
        if len(self.rows) != self.n or sorted(self.rows) != list(range(self.n)):
            raise PimDomainError("rows must be a permutation of 0..n-1")

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=np.int64)
        m[np.arange(self.n), self.rows] = 1
        return m

    def __matmul__(self, other: "PermutationMatrix") -> "PermutationMatrix":
        if other.n != self.n:
            raise PimSizeError("dimension mismatch")
        return PermutationMatrix(self.n, tuple(other.rows[c] for c in self.rows))


@lru_cache(maxsize=4096)
def shift_matrix(n: int, s: int) -> PermutationMatrix:
    """Rotate-right by ``s``: ``y[i] = x[(i - s) mod n]``."""
    if n < 1:
        raise PimDomainError("n must be positive")
    if not 0 <= s < n:
        raise PimDomainError(f"shift {s} outside [0, {n})")
    return PermutationMatrix(n, tuple((i - s) % n for i in range(n)))


def apply_perm(matrix: PermutationMatrix, vector: Sequence[int], q: int | None = None) -> list[int]:
    if len(vector) != matrix.n:
        raise PimSizeError(f"vector length {len(vector)} != matrix size {matrix.n}")
    out = [vector[c] for c in matrix.rows]
    return [v % q for v in out] if q else out


# -- associative addition and multiplication --------------------------------------

# (a, b, carry_in) -> (sum, carry_out): the rows a search-based full adder matches on
_FULL_ADDER = {(a, b, c): ((a + b + c) & 1, (a + b + c) >> 1) for a in (0, 1) for b in (0, 1) for c in (0, 1)}


def _add_bits(a: list[int], b: list[int]) -> list[int]:
    """Ripple the full-adder lookup across equal-length little-endian bit lists."""
    out = []
    carry = 0
    for x, y in zip(a, b):
        s, carry = _FULL_ADDER[(x, y, carry)]
        out.append(s)
    out.append(carry)
    return out


def associative_add(a: Word, b: Word) -> Word:
    """Sum of two words, one width wider, computed bit-serially with explicit carry."""
    if a.width > 63 or b.width > 63:
        raise PimDomainError("operand widths must be <= 63")
    w = max(a.width, b.width)
    result = Word.from_bits(_add_bits(a.bits(w), b.bits(w)))
    if result.value != a.value + b.value:
        raise AssertionError("carry chain disagrees with integer addition")
    return result


def mul(a: Word, b: Word) -> Word:
    """Shift-and-add product; each partial-product shift is a permutation-matrix apply."""
    if a.width > 32 or b.width > 32:
        raise PimDomainError("operand widths must be <= 32")
    n = a.width + b.width
    a_bits = a.bits(n)
    acc = [0] * n
    for j, bj in enumerate(b.bits()):
        if not bj:
            continue
        partial = apply_perm(shift_matrix(n, j), a_bits)
        # the product fits in n bits, so the final carry out is always 0
        acc = _add_bits(acc, partial)[:n]
    result = Word.from_bits(acc)
    if result.value != a.value * b.value:
        raise AssertionError("shift-add disagrees with integer multiplication")
    return result


# -- crossbar logic -------------------------------------------------------------


def logic_op(kind: str, x: Word, y: Word) -> Word:
    """Bitwise AND/XOR from the per-column conductance sum of two stacked cells."""
    if x.width != y.width:
        raise PimSizeError(f"width mismatch: {x.width} vs {y.width}")
    level = {"AND": 2, "XOR": 1}.get(kind.upper())
    if level is None:
        raise PimDomainError(f"unknown logic op {kind!r}")
    sums = [a + b for a, b in zip(x.bits(), y.bits())]
    return Word.from_bits([int(s == level) for s in sums])


# -- ADC -----------------------------------------------------------------------


@dataclass(frozen=True)
class AdcConfig:
    thresholds: tuple[float, ...] = (0.4, 0.8, 1.2, 1.6)
    enabled: tuple[bool, ...] | None = None

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(b <= a for a, b in zip(th, th[1:])):
            raise PimDomainError("thresholds must be strictly increasing")
        en = tuple(bool(e) for e in self.enabled) if self.enabled is not None else (True,) * len(th)
        if len(en) != len(th):
            raise PimDomainError("enabled mask must match thresholds")
        if not any(en):
            raise PimDomainError("at least one comparator must be enabled")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "enabled", en)

    def disable(self, *devices: int) -> "AdcConfig":
        """Turn off comparators by 1-based device number."""
        en = list(self.enabled)
        for d in devices:
            en[d - 1] = False
        return replace(self, enabled=tuple(en))


def adc_quantize(v: float, config: AdcConfig = AdcConfig()) -> str:
    """Thermometer code over the enabled comparators, lowest threshold first."""
    if v < 0:
        raise PimDomainError("input voltage must be >= 0")
    return "".join("1" if v > t else "0" for t, on in zip(config.thresholds, config.enabled) if on)


# -- true random generator debiasing ----------------------------------------------

BIAS_MIN, BIAS_MAX = 0.01, 0.99


@dataclass(frozen=True)
class TrgState:
    """Bit source with a proportional bias controller fed by a segment counter."""

    bias: float = 0.3
    gain: float = 0.5
    counter_width: int = 8
    segment_length: int = 256
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bias", float(np.clip(self.bias, BIAS_MIN, BIAS_MAX)))
        if self.segment_length != 256 or self.counter_width != 8:
            raise PimDomainError("the tracking counter is 8 bits over 256-bit segments")


def trg_next_segment(state: TrgState, rng: np.random.Generator) -> tuple[np.ndarray, TrgState]:
    bits = (rng.random(state.segment_length) < state.bias).astype(np.uint8)
    ones = int(bits.sum())
    readout = min(ones, (1 << state.counter_width) - 1)
    bias = float(np.clip(state.bias - state.gain * (ones / state.segment_length - 0.5), BIAS_MIN, BIAS_MAX))
    return bits, replace(state, bias=bias, counter=readout)


def trg_run(state: TrgState, n_segments: int, rng: np.random.Generator) -> tuple[np.ndarray, TrgState]:
    chunks = []
    for _ in range(n_segments):
        bits, state = trg_next_segment(state, rng)
        chunks.append(bits)
    return np.concatenate(chunks) if chunks else np.zeros(0, np.uint8), state


# -- negacyclic NTT -----------------------------------------------------------------

MONT_BITS = 18
MONT_R = 1 << MONT_BITS


def _is_prime(q: int) -> bool:
    if q < 2:
        return False
    i = 2
    while i * i <= q:
        if q % i == 0:
            return False
        i += 1
    return True


def _prime_factors(n: int) -> set[int]:
    out, p = set(), 2
    while p * p <= n:
        while n % p == 0:
            out.add(p)
            n //= p
        p += 1
    if n > 1:
        out.add(n)
    return out


def find_psi(n: int, q: int) -> int:
    """Smallest primitive ``2n``-th root of unity mod ``q``."""
    if (q - 1) % (2 * n):
        raise PimDomainError(f"2n={2 * n} does not divide q-1={q - 1}; no negacyclic NTT of this size mod {q}")
    factors = _prime_factors(q - 1)
    for g in range(2, q):
        if all(pow(g, (q - 1) // f, q) != 1 for f in factors):
            return pow(g, (q - 1) // (2 * n), q)
    raise PimDomainError(f"no generator found mod {q}")


@dataclass(frozen=True)
class NttParams:
    n: int
    q: int = 12289
    psi: int | None = None
    montgomery: bool = False
    _tables: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.n & (self.n - 1):
            raise PimDomainError(f"n must be a power of two, got {self.n}")
        if not _is_prime(self.q):
            raise PimDomainError(f"q={self.q} is not prime")
        if self.montgomery and self.q >= MONT_R:
            raise PimDomainError("Montgomery form needs q < 2**18")
        psi = find_psi(self.n, self.q) if self.psi is None else self.psi
        if pow(psi, 2 * self.n, self.q) != 1 or pow(psi, self.n, self.q) != self.q - 1:
            raise PimDomainError(f"psi={psi} is not a primitive 2n-th root of unity mod {self.q}")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "_tables", _build_tables(self.n, self.q, psi))


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _build_tables(n: int, q: int, psi: int) -> dict:
    psi_inv = pow(psi, -1, q)
    omega = psi * psi % q
    omega_inv = pow(omega, -1, q)
    pw = lambda base: np.array([pow(base, j, q) for j in range(n)], dtype=np.int64)
    return {
        "psi_pows": pw(psi),
        "psi_inv_pows": pw(psi_inv),
        "omega_pows": pw(omega),
        "omega_inv_pows": pw(omega_inv),
        "n_inv": pow(n, -1, q),
        "rev": _bit_reverse(n),
    }


def _mont_reduce(t: np.ndarray, q: int) -> np.ndarray:
    """``t * R^-1 mod q`` for ``0 <= t < q*R``."""
    q_neg_inv = (-pow(q, -1, MONT_R)) % MONT_R
    m = ((t & (MONT_R - 1)) * q_neg_inv) & (MONT_R - 1)
    u = (t + m * q) >> MONT_BITS
    return np.where(u >= q, u - q, u)


def _modmul(a: np.ndarray, b: np.ndarray, params: NttParams) -> np.ndarray:
    q = params.q
    if not params.montgomery:
        return a * b % q
    # b into Montgomery form, then one reduction strips the extra R
    b_m = (b * MONT_R) % q
    return _mont_reduce(a * b_m, q)


def _cyclic(x: np.ndarray, roots: np.ndarray, params: NttParams) -> np.ndarray:
    """Iterative radix-2 cyclic transform with ``roots[j] = w**j``."""
    n, q = params.n, params.q
    a = x[params._tables["rev"]].copy()
    length = 2
    while length <= n:
        half = length // 2
        tw = roots[:: n // length][:half]
        a = a.reshape(-1, length)
        u = a[:, :half].copy()
        v = _modmul(a[:, half:], tw[None, :], params)
        a[:, :half] = (u + v) % q
        a[:, half:] = (u - v) % q
        a = a.reshape(-1)
        length *= 2
    return a


def _check_input(vector, params: NttParams) -> np.ndarray:
    x = np.asarray(vector, dtype=np.int64)
    if x.shape != (params.n,):
        raise PimDomainError(f"expected length {params.n}, got shape {x.shape}")
    if np.any(x < 0) or np.any(x >= params.q):
        raise PimDomainError(f"entries must lie in [0, {params.q})")
    return x


def ntt(vector: Sequence[int], params: NttParams) -> list[int]:
    """Negacyclic transform ``X[k] = sum_j x[j] * psi**((2k+1)*j) mod q``."""
    x = _check_input(vector, params)
    t = params._tables
    return _cyclic(_modmul(x, t["psi_pows"], params), t["omega_pows"], params).tolist()


def intt(vector: Sequence[int], params: NttParams) -> list[int]:
    x = _check_input(vector, params)
    t = params._tables
    y = _cyclic(x, t["omega_inv_pows"], params)
    y = _modmul(y, np.full(params.n, t["n_inv"], dtype=np.int64), params)
    return _modmul(y, t["psi_inv_pows"], params).tolist()


def ntt_direct(vector: Sequence[int], params: NttParams) -> list[int]:
    """Quadratic-time reference transform."""
    x = [int(v) for v in vector]
    q, psi, n = params.q, params.psi, params.n
    return [sum(x[j] * pow(psi, (2 * k + 1) * j, q) for j in range(n)) % q for k in range(n)]


# -- workload descriptors --------------------------------------------------------------

WORKLOADS = ("ntt32k", "sha3_1088", "alexnet")


@dataclass(frozen=True)
class WorkloadDescriptor:
    name: str
    kernels: tuple[Kernel, ...]
    estimate: bool
    op_mix: dict
    source: str = ""

    @property
    def total_flops(self) -> float:
        return float(sum(k.flops for k in self.kernels))

    @property
    def total_bytes(self) -> float:
        return float(sum(k.bytes_read + k.bytes_written for k in self.kernels))

    def to_task_graph(self, expected_latency: float) -> TaskGraph:
        return TaskGraph(self.kernels, expected_latency)


def workload_descriptor(name: str) -> WorkloadDescriptor:
    if name not in WORKLOADS:
        raise LookupError(f"unknown workload {name!r}; known: {', '.join(WORKLOADS)}")
    text = resources.files("sustaindc").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    return WorkloadDescriptor(
        doc["name"],
        tuple(Kernel.from_dict(k) for k in doc["kernels"]),
        bool(doc.get("estimate", False)),
        doc.get("op_mix", {}),
        doc.get("source", ""),
    )
