"""Quantile forecasts of renewable generation and net demand.

The model is a single LSTM layer read out by a linear head, plus a linear skip
from the most recent input bin.  It emits one value per (target, horizon,
quantile) and is trained on the summed pinball loss with plain mini-batch
gradient descent.  Back-propagation through time is written out by hand.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .traces import EnergyTrace, calendar_matrix

TARGETS = ("renewable", "net_demand")
MODEL_VERSION = 1
PARAM_NAMES = ("W", "U", "b", "V", "c", "D")


class ForecastError(ValueError):
    pass


class ForecastDomainError(ForecastError):
    pass


class ForecastSizeError(ForecastError):
    pass


class TrainingError(ForecastError):
    pass


@dataclass(frozen=True)
class ForecastSpec:
    quantiles: tuple[float, ...] = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)
    horizons: tuple[int, ...] = (5, 10, 15)  # minutes
    history_window: int = 24

    def __post_init__(self):
        q = tuple(float(x) for x in self.quantiles)
        h = tuple(int(x) for x in self.horizons)
        if not q or any(not 0 < x < 1 for x in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise ForecastDomainError("quantiles must be strictly increasing inside (0, 1)")
        if not h or h[0] <= 0 or any(b <= a for a, b in zip(h, h[1:])):
            raise ForecastDomainError("horizons must be positive and increasing")
        if self.history_window < 1:
            raise ForecastDomainError("history window must be >= 1")
        object.__setattr__(self, "quantiles", q)
        object.__setattr__(self, "horizons", h)

    @property
    def n_outputs(self) -> int:
        return len(TARGETS) * len(self.horizons) * len(self.quantiles)

    def steps(self, resolution: int) -> list[int]:
        """Horizons as whole numbers of bins."""
        out = []
        for h in self.horizons:
            if (h * 60) % resolution:
                raise ForecastDomainError(f"horizon {h} min is not a multiple of the {resolution}s resolution")
            out.append(h * 60 // resolution)
        return out


@dataclass(frozen=True)
class TrainConfig:
    split: tuple[float, float, float] = (0.70, 0.10, 0.20)
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 32
    seed: int = 42
    hidden_size: int = 16

    def __post_init__(self):
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ForecastDomainError("split fractions must be three non-negative numbers summing to 1")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1 or self.hidden_size < 1:
            raise ForecastDomainError("invalid training hyperparameters")


def pinball_loss(error, tau: float):
    """``max(tau * e, (tau - 1) * e)`` where ``e = actual - predicted``."""
    if not 0 < tau < 1:
        raise ForecastDomainError(f"tau must lie in (0, 1), got {tau}")
    e = np.asarray(error, dtype=float)
    out = np.maximum(tau * e, (tau - 1) * e)
    return float(out) if out.ndim == 0 else out


def rearrange_quantiles(values) -> np.ndarray:
    """Sort along the last axis so quantile predictions never cross."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ForecastDomainError("values must be finite")
    return np.sort(v, axis=-1)


# -- data ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForecastDataset:
    """Aligned per-bin series; ``net = demand - renewable``."""

    timestamps: np.ndarray
    renewable: np.ndarray
    net: np.ndarray
    resolution: int
    exog: np.ndarray | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        for name in ("renewable", "net") + (("exog",) if self.exog is not None else ()):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != ts.shape:
                raise ForecastSizeError(f"{name} length differs from timestamps")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return self.timestamps.size

    @classmethod
    def from_traces(cls, renewable: EnergyTrace, demand: EnergyTrace, exog: Sequence[float] | None = None):
        if renewable.resolution != demand.resolution or not np.array_equal(renewable.timestamps, demand.timestamps):
            raise ForecastDomainError("renewable and demand traces must share timestamps and resolution")
        return cls(renewable.timestamps, renewable.values, demand.values - renewable.values, renewable.resolution, exog)

    def slice(self, start: int, stop: int) -> "ForecastDataset":
        ex = None if self.exog is None else self.exog[start:stop]
        return ForecastDataset(self.timestamps[start:stop], self.renewable[start:stop], self.net[start:stop], self.resolution, ex)

    def gap_free(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) == self.resolution))

    def targets(self) -> np.ndarray:
        return np.column_stack([self.renewable, self.net])


@dataclass(frozen=True)
class Standardizer:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def fit(cls, columns: np.ndarray) -> "Standardizer":
        mean = columns.mean(axis=0)
        std = columns.std(axis=0)
        # constant series: keep raw scale
        std = np.where(std > 1e-12, std, 1.0)
        return cls(tuple(map(float, mean)), tuple(map(float, std)))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls((0.0,) * width, (1.0,) * width)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - np.array(self.mean)) / np.array(self.std)

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * np.array(self.std) + np.array(self.mean)


def _raw_columns(ds: ForecastDataset) -> np.ndarray:
    cols = [ds.renewable, ds.net] + ([ds.exog] if ds.exog is not None else [])
    return np.column_stack(cols)


def _features(ds: ForecastDataset, scaler: Standardizer) -> np.ndarray:
    """Per-bin inputs: standardized renewable, net, [exog], then hour_sin, hour_cos, is_weekend."""
    return np.column_stack([scaler.apply(_raw_columns(ds)), calendar_matrix(ds.timestamps)])


def _windows(ds: ForecastDataset, spec: ForecastSpec, scaler: Standardizer):
    """Every (history, future targets) window lying wholly inside ``ds``.

    Returns ``X`` (N, window, F), standardized targets ``Y`` (N, 2, H), raw
    targets (N, 2, H), and the last raw observation per target (N, 2).
    """
    steps = spec.steps(ds.resolution)
    w = spec.history_window
    n = len(ds) - w - steps[-1] + 1
    if n < 1:
        raise ForecastSizeError(f"need at least {w + steps[-1]} bins, got {len(ds)}")
    feats = _features(ds, scaler)
    raw = ds.targets()
    z = scaler.apply(_raw_columns(ds))[:, :2]
    ends = np.arange(w - 1, w - 1 + n)
    X = np.stack([feats[e - w + 1 : e + 1] for e in ends])
    idx = ends[:, None] + np.array(steps)[None, :]
    Y = np.transpose(z[idx], (0, 2, 1))
    Y_raw = np.transpose(raw[idx], (0, 2, 1))
    return X, Y, Y_raw, raw[ends]


# -- model -----------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class RecurrentQuantileModel:
    spec: ForecastSpec
    n_features: int
    hidden_size: int = 16
    seed: int = 0
    params: dict = field(default_factory=dict)
    scaler: Standardizer | None = None
    has_exog: bool = False
    train_log: list = field(default_factory=list)
    error_table: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = Standardizer.identity(2 + int(self.has_exog))
        if not self.params:
            self.params = init_params(self.n_features, self.hidden_size, self.spec.n_outputs, self.seed)
        shapes = param_shapes(self.n_features, self.hidden_size, self.spec.n_outputs)
        for name in PARAM_NAMES:
            p = np.asarray(self.params[name], dtype=float)
            if p.shape != shapes[name]:
                raise ForecastDomainError(f"parameter {name} has shape {p.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(p)):
                raise ForecastDomainError(f"parameter {name} is not finite")
            self.params[name] = p

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @classmethod
    def zeros(cls, spec: ForecastSpec = ForecastSpec(), hidden_size: int = 16, has_exog: bool = False):
        nf = 5 + int(has_exog)
        shapes = param_shapes(nf, hidden_size, spec.n_outputs)
        return cls(spec, nf, hidden_size, 0, {k: np.zeros(s) for k, s in shapes.items()}, has_exog=has_exog)

    def freeze(self):
        for p in self.params.values():
            p.setflags(write=False)


def param_shapes(n_features: int, hidden: int, n_out: int) -> dict:
    return {
        "W": (4 * hidden, n_features),
        "U": (4 * hidden, hidden),
        "b": (4 * hidden,),
        "V": (n_out, hidden),
        "c": (n_out,),
        "D": (n_out, n_features),
    }


def init_params(n_features: int, hidden: int, n_out: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(hidden)
    shapes = param_shapes(n_features, hidden, n_out)
    p = {
        "W": rng.uniform(-scale, scale, shapes["W"]),
        "U": rng.uniform(-scale, scale, shapes["U"]),
        "b": np.zeros(shapes["b"]),
        "V": rng.uniform(-0.1 * scale, 0.1 * scale, shapes["V"]),
        "c": np.zeros(shapes["c"]),
        "D": np.zeros(shapes["D"]),
    }
    p["b"][hidden : 2 * hidden] = 1.0  # forget gate starts open
    return p


def _forward(params: dict, X: np.ndarray, dtype=float):
    """Run the LSTM over ``X`` (B, T, F); returns outputs (B, O) and the cache for backprop."""
    W, U, b, V, c, D = (np.asarray(params[k], dtype=dtype) for k in PARAM_NAMES)
    X = np.asarray(X, dtype=dtype)
    B, T, _ = X.shape
    H = U.shape[1]
    h = np.zeros((B, H), dtype=dtype)
    cell = np.zeros((B, H), dtype=dtype)
    cache = []
    for t in range(T):
        z = X[:, t] @ W.T + h @ U.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev, h_prev = cell, h
        cell = f * cell + i * g
        tc = np.tanh(cell)
        h = o * tc
        cache.append((h_prev, c_prev, i, f, g, o, tc))
    out = h @ V.T + c + X[:, -1] @ D.T
    return out, (X, h, cache)


def _loss_and_dout(out: np.ndarray, Y: np.ndarray, taus: np.ndarray):
    """Summed pinball loss averaged over the batch, and its gradient wrt the outputs."""
    e = Y - out
    loss = np.maximum(taus * e, (taus - 1) * e).sum() / out.shape[0]
    # d/d(pred) of the pinball loss: -tau for e > 0, 1 - tau for e < 0
    dout = np.where(e > 0, -taus, 1 - taus) / out.shape[0]
    return float(loss), dout


def _backward(params: dict, dout: np.ndarray, fwd_cache) -> dict:
    W, U, V, D = (params[k] for k in ("W", "U", "V", "D"))
    X, h_last, cache = fwd_cache
    grads = {k: np.zeros_like(params[k]) for k in PARAM_NAMES}
    grads["V"] = dout.T @ h_last
    grads["c"] = dout.sum(axis=0)
    grads["D"] = dout.T @ X[:, -1]
    dh = dout @ V
    dc = np.zeros_like(dh)
    for t in range(len(cache) - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = cache[t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=1)
        grads["W"] += dz.T @ X[:, t]
        grads["U"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ U
        dc = dc * f
    return grads


def _target_matrix(spec: ForecastSpec, Y: np.ndarray) -> np.ndarray:
    """Broadcast (N, 2, H) targets to the flat (N, 2*H*Q) output layout."""
    return np.repeat(Y.reshape(Y.shape[0], -1), len(spec.quantiles), axis=1)


def _taus(spec: ForecastSpec) -> np.ndarray:
    return np.tile(np.array(spec.quantiles), len(TARGETS) * len(spec.horizons))


def loss_and_grads(model: RecurrentQuantileModel, X: np.ndarray, Y: np.ndarray):
    """Summed pinball loss (batch mean) on standardized targets ``Y`` (N, 2, H) and its gradient."""
    out, cache = _forward(model.params, X)
    loss, dout = _loss_and_dout(out, _target_matrix(model.spec, Y), _taus(model.spec))
    return loss, _backward(model.params, dout, cache)


def _loss_only(params: dict, spec: ForecastSpec, X, Y, dtype=float) -> float:
    out, _ = _forward(params, X, dtype)
    target = _target_matrix(spec, np.asarray(Y, dtype=dtype))
    taus = _taus(spec).astype(dtype)
    e = target - out
    return np.maximum(taus * e, (taus - 1) * e).sum() / out.shape[0]


def gradient_check(
    model: RecurrentQuantileModel,
    x: np.ndarray,
    y: np.ndarray,
    grad_fn: Callable | None = None,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``x`` is one input window (T, F) and ``y`` its standardized targets (2, H).
    Finite differences are evaluated in extended precision so rounding noise
    stays well below the step's truncation error.  The denominator is
    ``max(|g|, 1e-8)`` with ``|g|`` the larger of the two gradient magnitudes.
    """
    X = np.asarray(x, dtype=float)[None]
    Y = np.asarray(y, dtype=float)[None]
    grads = (grad_fn or (lambda m, a, b: loss_and_grads(m, a, b)[1]))(model, X, Y)
    ext = {k: np.asarray(v, dtype=np.longdouble) for k, v in model.params.items()}
    worst = 0.0
    for name in PARAM_NAMES:
        p = ext[name]
        flat = p.reshape(-1)
        g_flat = np.asarray(grads[name]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = _loss_only(ext, model.spec, X, Y, np.longdouble)
            flat[j] = orig - step
            down = _loss_only(ext, model.spec, X, Y, np.longdouble)
            flat[j] = orig
            num = float((up - down) / (2 * step))
            ana = float(g_flat[j])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# -- training ----------------------------------------------------------------------


@dataclass(frozen=True)
class Splits:
    train: ForecastDataset
    val: ForecastDataset
    test: ForecastDataset


def chronological_split(ds: ForecastDataset, fractions=(0.7, 0.1, 0.2)) -> Splits:
    n = len(ds)
    a = int(round(n * fractions[0]))
    b = a + int(round(n * fractions[1]))
    return Splits(ds.slice(0, a), ds.slice(a, b), ds.slice(b, n))


def train(dataset: ForecastDataset, spec: ForecastSpec = ForecastSpec(), config: TrainConfig = TrainConfig()):
    """Fit a model on the training split; the log holds per-epoch train/val loss."""
    if not dataset.gap_free():
        raise ForecastDomainError("dataset has gaps; resample first")
    splits = chronological_split(dataset, config.split)
    scaler = Standardizer.fit(_raw_columns(splits.train)) if len(splits.train) else None
    if scaler is None:
        raise ForecastSizeError("training split is empty")
    Xtr, Ytr, _, _ = _windows(splits.train, spec, scaler)
    val = _windows(splits.val, spec, scaler) if len(splits.val) >= spec.history_window + spec.steps(dataset.resolution)[-1] else None
    has_exog = dataset.exog is not None
    model = RecurrentQuantileModel(spec, Xtr.shape[2], config.hidden_size, config.seed, scaler=scaler, has_exog=has_exog)
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(Xtr))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, grads = loss_and_grads(model, Xtr[idx], Ytr[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            total += loss * len(idx)
            for k in PARAM_NAMES:
                model.params[k] -= lr * grads[k]
        train_loss = total / len(Xtr)
        val_loss = _loss_only(model.params, spec, val[0], val[1]) if val is not None else float("nan")
        if not np.isfinite(train_loss) or not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise TrainingError(f"parameters diverged in epoch {epoch}")
        model.train_log.append((epoch, float(train_loss), float(val_loss)))
    if val is not None:
        model.error_table = error_quantiles(model, splits.val)
    model.freeze()
    return model


# -- prediction ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantileForecast:
    issued_at: int
    quantiles: tuple[float, ...]
    horizons: tuple[int, ...]
    values: np.ndarray  # (target, horizon, quantile), MW
    targets: tuple[str, ...] = TARGETS

    def value(self, target: str, horizon: int, quantile: float) -> float:
        return float(self.values[self.targets.index(target), self.horizons.index(horizon), self.quantiles.index(quantile)])

    def rows(self):
        for ti, t in enumerate(self.targets):
            for hi, h in enumerate(self.horizons):
                for qi, q in enumerate(self.quantiles):
                    yield self.issued_at, t, h, q, float(self.values[ti, hi, qi])


def forecasts_to_csv(forecasts: Sequence[QuantileForecast]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["issued_at", "target", "horizon_min", "quantile", "value_mw"])
    for fc in forecasts:
        for issued, t, h, q, v in fc.rows():
            w.writerow([issued, t, h, repr(q), repr(v)])
    return out.getvalue()


def _predict_windows(model: RecurrentQuantileModel, X: np.ndarray) -> np.ndarray:
    """Raw-unit predictions shaped (N, 2, H, Q), rearranged along quantiles."""
    out, _ = _forward(model.params, X)
    Q, H = len(model.spec.quantiles), len(model.spec.horizons)
    z = out.reshape(len(X), len(TARGETS), H, Q)
    mean = np.array(model.scaler.mean[:2])[None, :, None, None]
    std = np.array(model.scaler.std[:2])[None, :, None, None]
    return rearrange_quantiles(z * std + mean)


def predict(model: RecurrentQuantileModel, history: ForecastDataset, issued_at: int | None = None) -> QuantileForecast:
    w = model.spec.history_window
    if len(history) != w:
        raise ForecastSizeError(f"history must hold exactly {w} bins, got {len(history)}")
    if not history.gap_free():
        raise ForecastDomainError("history has gaps")
    if (history.exog is not None) != model.has_exog:
        raise ForecastDomainError("exogenous covariate presence differs from training")
    model.spec.steps(history.resolution)
    X = _features(history, model.scaler)[None]
    vals = _predict_windows(model, X)[0]
    t = int(history.timestamps[-1]) if issued_at is None else int(issued_at)
    return QuantileForecast(t, model.spec.quantiles, model.spec.horizons, vals)


def persistence_forecast(history: ForecastDataset, spec: ForecastSpec = ForecastSpec()) -> QuantileForecast:
    if len(history) == 0:
        raise ForecastSizeError("history is empty")
    last = np.array([history.renewable[-1], history.net[-1]])
    vals = np.broadcast_to(last[:, None, None], (2, len(spec.horizons), len(spec.quantiles))).copy()
    return QuantileForecast(int(history.timestamps[-1]), spec.quantiles, spec.horizons, vals)


@dataclass(frozen=True)
class Evaluation:
    model_p50: float
    persistence_p50: float
    n_windows: int
    # mean share of actuals inside the predicted [lo, hi] quantile band
    band_coverage: float


def evaluate(model: RecurrentQuantileModel, ds: ForecastDataset, band=(0.25, 0.75)) -> Evaluation:
    """Mean P50 pinball loss (MW) of the model and of persistence over every window in ``ds``."""
    X, _, Y_raw, last = _windows(ds, model.spec, model.scaler)
    pred = _predict_windows(model, X)
    qs = model.spec.quantiles
    mid = qs.index(0.5) if 0.5 in qs else len(qs) // 2
    model_loss = pinball_loss(Y_raw - pred[..., mid], 0.5).mean()
    persist_loss = pinball_loss(Y_raw - last[:, :, None], 0.5).mean()
    lo, hi = qs.index(band[0]), qs.index(band[1])
    inside = (Y_raw >= pred[..., lo]) & (Y_raw <= pred[..., hi])
    return Evaluation(float(model_loss), float(persist_loss), len(X), float(inside.mean()))


def error_quantiles(model: RecurrentQuantileModel, ds: ForecastDataset) -> dict:
    """Quantiles of ``actual - P50`` per target and horizon over the windows of ``ds``."""
    X, _, Y_raw, _ = _windows(ds, model.spec, model.scaler)
    pred = _predict_windows(model, X)
    qs = model.spec.quantiles
    mid = qs.index(0.5) if 0.5 in qs else len(qs) // 2
    err = Y_raw - pred[..., mid]
    table = {}
    for ti, t in enumerate(TARGETS):
        for hi, h in enumerate(model.spec.horizons):
            table[f"{t}@{h}"] = [float(v) for v in np.quantile(err[:, ti, hi], qs)]
    return table


# -- persistence of models -------------------------------------------------------------


def model_to_json(model: RecurrentQuantileModel) -> str:
    doc = {
        "version": MODEL_VERSION,
        "spec": {
            "quantiles": list(model.spec.quantiles),
            "horizons": list(model.spec.horizons),
            "history_window": model.spec.history_window,
        },
        "hidden_size": model.hidden_size,
        "n_features": model.n_features,
        "has_exog": model.has_exog,
        "seed": model.seed,
        "standardization": {"mean": list(model.scaler.mean), "std": list(model.scaler.std)},
        "params": {k: np.asarray(model.params[k]).tolist() for k in PARAM_NAMES},
        "train_log": [list(r) for r in model.train_log],
        "error_quantiles": model.error_table,
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> RecurrentQuantileModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ForecastError(f"invalid model file: {exc}") from None
    if doc.get("version") != MODEL_VERSION:
        raise ForecastError(f"unsupported model version {doc.get('version')!r}")
    spec = ForecastSpec(tuple(doc["spec"]["quantiles"]), tuple(doc["spec"]["horizons"]), int(doc["spec"]["history_window"]))
    model = RecurrentQuantileModel(
        spec,
        int(doc["n_features"]),
        int(doc["hidden_size"]),
        int(doc["seed"]),
        {k: np.array(v, dtype=float) for k, v in doc["params"].items()},
        Standardizer(tuple(doc["standardization"]["mean"]), tuple(doc["standardization"]["std"])),
        bool(doc["has_exog"]),
        [tuple(r) for r in doc.get("train_log", [])],
        doc.get("error_quantiles", {}),
    )
    model.freeze()
    return model
