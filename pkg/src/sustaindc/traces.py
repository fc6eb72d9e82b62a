"""Power and weather time series.

Traces are stored as CSV with a fixed ``timestamp,value`` header (UTC integer
seconds, megawatts).  An optional third ``intensity`` column carries a per-bin
carbon intensity used by the power simulator.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator, NamedTuple

import numpy as np

KINDS = ("renewable_generation", "demand")
# longest run of empty bins that resample() will fill by interpolation
MAX_INTERPOLATED_BINS = 3


class TraceError(ValueError):
    pass


class TraceParseError(TraceError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceOrderError(TraceError):
    pass


class TraceDomainError(TraceError):
    pass


class TraceGapError(TraceError):
    def __init__(self, start: int, end: int, n_bins: int):
        super().__init__(f"gap of {n_bins} missing bins in [{start}, {end})")
        self.start, self.end, self.n_bins = start, end, n_bins


class TraceSample(NamedTuple):
    timestamp: int
    value: float


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    """A timestamped power series.

    ``timestamps`` and ``values`` are parallel numpy arrays; ``resolution`` is
    the bin width in seconds.
    """

    timestamps: np.ndarray
    values: np.ndarray
    resolution: int
    kind: str = "renewable_generation"
    intensity: np.ndarray | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vs = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or ts.shape != vs.shape:
            raise TraceError("timestamps and values must be 1-D arrays of equal length")
        if self.kind not in KINDS:
            raise TraceError(f"unknown trace kind {self.kind!r}; expected one of {KINDS}")
        if int(self.resolution) <= 0:
            raise TraceError(f"resolution must be positive, got {self.resolution}")
        if ts.size and ts[0] < 0:
            raise TraceDomainError("timestamps must be non-negative")
        if np.any(np.diff(ts) <= 0):
            raise TraceOrderError("timestamps must be strictly increasing")
        if np.any(vs < 0) or not np.all(np.isfinite(vs)):
            raise TraceDomainError("values must be finite and non-negative")
        ts.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)
        object.__setattr__(self, "resolution", int(self.resolution))
        if self.intensity is not None:
            it = np.asarray(self.intensity, dtype=float)
            if it.shape != vs.shape or np.any(it < 0):
                raise TraceDomainError("intensity must be non-negative and match values")
            it.setflags(write=False)
            object.__setattr__(self, "intensity", it)

    def __len__(self) -> int:
        return self.timestamps.size

    def __iter__(self) -> Iterator[TraceSample]:
        return iter(self.samples)

    def __eq__(self, other):
        if not isinstance(other, EnergyTrace):
            return NotImplemented
        same_intensity = (self.intensity is None and other.intensity is None) or (
            self.intensity is not None
            and other.intensity is not None
            and np.array_equal(self.intensity, other.intensity)
        )
        return (
            self.resolution == other.resolution
            and self.kind == other.kind
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
            and same_intensity
        )

    @property
    def samples(self) -> list[TraceSample]:
        return [TraceSample(int(t), float(v)) for t, v in zip(self.timestamps, self.values)]

    @property
    def is_regular(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) == self.resolution))

    def energy(self) -> float:
        """Sum of value times bin width (MW*s)."""
        return float(np.sum(self.values) * self.resolution)

    def window(self, start: int, end: int) -> "EnergyTrace":
        """Samples with ``start <= timestamp < end``."""
        mask = (self.timestamps >= start) & (self.timestamps < end)
        return EnergyTrace(
            self.timestamps[mask],
            self.values[mask],
            self.resolution,
            self.kind,
            None if self.intensity is None else self.intensity[mask],
        )

    def scaled(self, factor: float) -> "EnergyTrace":
        return EnergyTrace(self.timestamps, self.values * factor, self.resolution, self.kind, self.intensity)


def load_trace(text: str, kind: str = "renewable_generation") -> EnergyTrace:
    """Parse ``timestamp,value[,intensity]`` CSV text.

    The resolution is the smallest gap between consecutive timestamps.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError(1, "empty input") from None
    header = [h.strip() for h in header]
    if header not in (["timestamp", "value"], ["timestamp", "value", "intensity"]):
        raise TraceParseError(1, f"expected header 'timestamp,value', got {','.join(header)!r}")
    width = len(header)
    ts, vs, its = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise TraceParseError(line, f"expected {width} fields, got {len(row)}")
        try:
            t = int(row[0])
            v = float(row[1])
            it = float(row[2]) if width == 3 else None
        except ValueError as exc:
            raise TraceParseError(line, str(exc)) from None
        if not math.isfinite(v):
            raise TraceParseError(line, f"non-finite value {row[1]!r}")
        if ts and t <= ts[-1]:
            raise TraceOrderError(f"line {line}: timestamp {t} does not increase (previous {ts[-1]})")
        if v < 0:
            raise TraceDomainError(f"line {line}: negative value {v}")
        if t < 0:
            raise TraceDomainError(f"line {line}: negative timestamp {t}")
        ts.append(t)
        vs.append(v)
        its.append(it)
    if len(ts) < 2:
        raise TraceParseError(reader.line_num, "need at least two samples to infer resolution")
    resolution = int(np.min(np.diff(ts)))
    return EnergyTrace(
        np.array(ts), np.array(vs), resolution, kind, np.array(its, dtype=float) if width == 3 else None
    )


def read_trace(path, kind: str = "renewable_generation") -> EnergyTrace:
    with open(path, encoding="utf-8") as fh:
        return load_trace(fh.read(), kind)


def serialize(trace: EnergyTrace) -> str:
    """CSV text that :func:`load_trace` maps back to an equal trace."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if trace.intensity is None:
        writer.writerow(["timestamp", "value"])
        for t, v in zip(trace.timestamps, trace.values):
            writer.writerow([int(t), repr(float(v))])
    else:
        writer.writerow(["timestamp", "value", "intensity"])
        for t, v, it in zip(trace.timestamps, trace.values, trace.intensity):
            writer.writerow([int(t), repr(float(v)), repr(float(it))])
    return out.getvalue()


def write_trace(trace: EnergyTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize(trace))


def _fill_bins(sums: np.ndarray, counts: np.ndarray, start: int, width: int) -> np.ndarray:
    filled = np.full(sums.shape, np.nan)
    present = counts > 0
    filled[present] = sums[present] / counts[present]
    missing = np.flatnonzero(~present)
    if missing.size == 0:
        return filled
    # group consecutive empty bins into runs
    breaks = np.flatnonzero(np.diff(missing) > 1)
    for run in np.split(missing, breaks + 1):
        if run.size > MAX_INTERPOLATED_BINS:
            raise TraceGapError(start + int(run[0]) * width, start + (int(run[-1]) + 1) * width, run.size)
    idx = np.arange(sums.size)
    filled[missing] = np.interp(missing, idx[present], filled[present])
    return filled


def resample(trace: EnergyTrace, target_resolution: int) -> EnergyTrace:
    """Bin means over ``[t0 + j*r, t0 + (j+1)*r)`` anchored at the first sample.

    Runs of up to three empty bins are linearly interpolated; longer runs raise
    :class:`TraceGapError`.
    """
    r = int(target_resolution)
    if r <= 0 or r != target_resolution:
        raise TraceError(f"target resolution must be a positive whole number of seconds, got {target_resolution}")
    if len(trace) == 0:
        return EnergyTrace(trace.timestamps, trace.values, r, trace.kind, trace.intensity)
    t0 = int(trace.timestamps[0])
    bins = (trace.timestamps - t0) // r
    n = int(bins[-1]) + 1
    counts = np.bincount(bins, minlength=n)
    values = _fill_bins(np.bincount(bins, weights=trace.values, minlength=n), counts, t0, r)
    intensity = None
    if trace.intensity is not None:
        intensity = _fill_bins(np.bincount(bins, weights=trace.intensity, minlength=n), counts, t0, r)
    return EnergyTrace(t0 + r * np.arange(n), values, r, trace.kind, intensity)


@dataclass(frozen=True)
class CalendarFeatures:
    hour_sin: float
    hour_cos: float
    day_of_week: int
    month: int
    is_weekend: bool


def calendar_features(timestamp: int) -> CalendarFeatures:
    """UTC calendar features; Monday is day 0."""
    if timestamp < 0:
        raise TraceDomainError(f"timestamp must be >= 0, got {timestamp}")
    dt = datetime.fromtimestamp(int(timestamp), tz=timezone.utc)
    hour = dt.hour + dt.minute / 60 + dt.second / 3600
    angle = 2 * math.pi * hour / 24
    return CalendarFeatures(math.sin(angle), math.cos(angle), dt.weekday(), dt.month, dt.weekday() >= 5)


def calendar_matrix(timestamps: np.ndarray) -> np.ndarray:
    """Vectorised features ``[hour_sin, hour_cos, is_weekend]`` per timestamp."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if np.any(ts < 0):
        raise TraceDomainError("timestamps must be >= 0")
    seconds = ts % 86400
    angle = 2 * np.pi * seconds / 86400
    # 1970-01-01 was a Thursday (weekday 3)
    weekday = (ts // 86400 + 3) % 7
    return np.column_stack([np.sin(angle), np.cos(angle), (weekday >= 5).astype(float)])


def synthetic_wind(
    n_bins: int,
    resolution: int = 300,
    start: int = 0,
    seed: int = 0,
    mean_mw: float = 50.0,
    amplitude_mw: float = 30.0,
    noise_mw: float = 5.0,
    period_s: float = 86400.0,
) -> EnergyTrace:
    """A daily sinusoid plus Gaussian noise, clipped at zero."""
    rng = np.random.default_rng(seed)
    ts = start + resolution * np.arange(n_bins)
    phase = 2 * np.pi * ts / period_s
    values = mean_mw + amplitude_mw * np.sin(phase) + rng.normal(0.0, noise_mw, n_bins)
    return EnergyTrace(ts, np.clip(values, 0.0, None), resolution, "renewable_generation")


def on_off_trace(
    n_bins: int,
    resolution: int,
    on_mw: float,
    seed: int,
    p_switch: float = 0.2,
    off_mw: float = 0.0,
) -> EnergyTrace:
    """Random two-level supply: each bin flips state with probability ``p_switch``."""
    rng = np.random.default_rng(seed)
    flips = rng.random(n_bins) < p_switch
    flips[0] = False
    state = (np.cumsum(flips) % 2) == 0
    return EnergyTrace(resolution * np.arange(n_bins), np.where(state, on_mw, off_mw), resolution)
