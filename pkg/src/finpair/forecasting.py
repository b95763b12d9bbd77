"""Windowed OHLC forecasting with a text-fusion head.

The reference backbone is a per-channel linear map over the lookback window,
applied after an optional moving-average trend/remainder decomposition: the
last trend value is carried forward as the base forecast and the linear map
corrects it from the remainder. The pooled text vector goes through a linear
projection head and is fused with the backbone output as a convex
combination with ratio r, so r=0 reproduces the backbone exactly.

Heavier published architectures plug in behind the Backbone protocol; they
are deliberately out of scope here.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .optim import Adam

log = logging.getLogger(__name__)

TEXT_LEVELS = ("macro", "sector", "related", "target")
# Record slots behind each mask level.
_LEVEL_SLOTS = {"macro": "macro", "sector": "sector", "related": "related_company", "target": "target_company"}

STD_FLOOR = 1e-8


class SplitError(Exception):
    pass


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 60
    patience: int = 5
    batch_size: int = 32
    seed: int = 0
    lookback: int = 64
    horizon: int = 3
    fusion_ratio: float = 0.3
    decompose: bool = True
    ma_kernel: int = 25
    # Grid hooks for pluggable backbones and fusion tuning.
    hidden_sizes: tuple[int, ...] = (32, 64, 128)
    layer_counts: tuple[int, ...] = (1, 2, 3)
    fusion_ratios: tuple[float, ...] = (0.2, 0.3, 0.4)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate and max_epochs must be positive")
        if not 0.0 <= self.fusion_ratio <= 1.0:
            raise ValueError("fusion_ratio must lie in [0, 1]")


def enumerate_grid(config: TrainConfig) -> list[dict]:
    """Enumerate the (hidden, layers, fusion ratio) hyperparameter grid."""
    return [
        {"hidden_size": h, "layer_count": l, "fusion_ratio": r}
        for h in config.hidden_sizes
        for l in config.layer_counts
        for r in config.fusion_ratios
    ]


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray  # (L, C)
    target: np.ndarray  # (H, C)
    text_vector: np.ndarray  # (d_text,)
    anchor_day: date


@dataclass(frozen=True)
class NormalizationStats:
    """Population per-channel mean/std for one ticker, std floored at 1e-8."""

    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,)


def split_by_years(calendar) -> tuple[tuple[date, ...], tuple[date, ...], tuple[date, ...]]:
    """Chronological calendar-year split: last year test, the one before val,
    everything earlier train (3/1/1 on a five-year study window)."""
    days = calendar.days
    years = sorted({d.year for d in days})
    if len(years) < 5:
        raise SplitError(f"calendar spans {len(years)} calendar years; need at least 5")
    val_year, test_year = years[-2], years[-1]
    train = tuple(d for d in days if d.year < val_year)
    val = tuple(d for d in days if d.year == val_year)
    test = tuple(d for d in days if d.year == test_year)
    return train, val, test


def zscore_fit(train_values: np.ndarray) -> NormalizationStats:
    values = np.asarray(train_values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot fit normalization on an empty train portion")
    mean = values.mean(axis=0)
    std = np.maximum(values.std(axis=0), STD_FLOOR)  # population std
    return NormalizationStats(mean=mean, std=std)


def zscore_apply(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def zscore_invert(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def make_windows(
    dates: Sequence[date],
    values: np.ndarray,
    text_lookup: Callable[[date], np.ndarray],
    lookback: int = 64,
    horizon: int = 3,
    stride: int = 1,
) -> list[WindowSample]:
    """Slice one contiguous segment into (input, target, text) windows.

    The segment yields (len - lookback - horizon) / stride + 1 windows; a
    too-short segment yields none (with a warning). The text vector is the
    anchor day's, i.e. the last input row's.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(dates)
    if values.shape[0] != n:
        raise ValueError("dates and values must align")
    span = lookback + horizon
    if n < span:
        log.warning("segment of %d days is shorter than lookback+horizon=%d; no windows", n, span)
        return []
    samples = []
    for start in range(0, n - span + 1, stride):
        anchor = dates[start + lookback - 1]
        samples.append(
            WindowSample(
                input=values[start : start + lookback],
                target=values[start + lookback : start + span],
                text_vector=np.asarray(text_lookup(anchor), dtype=np.float64),
                anchor_day=anchor,
            )
        )
    return samples


def segment_runs(dates: Sequence[date], group_of: Mapping[date, str]) -> list[tuple[str, int, int]]:
    """Maximal runs of consecutive dates sharing a group: (group, start, stop).

    Dates absent from group_of break runs, so windows built per run can never
    straddle a split boundary.
    """
    runs: list[tuple[str, int, int]] = []
    start = None
    current = None
    for i, d in enumerate(dates):
        group = group_of.get(d)
        if group != current or group is None:
            if start is not None and current is not None:
                runs.append((current, start, i))
            start = i if group is not None else None
            current = group
    if start is not None and current is not None:
        runs.append((current, start, len(dates)))
    return runs


def encode_text(
    record,
    level_mask: Iterable[str],
    embed_texts: Callable[[list[str]], np.ndarray],
    text_dim: int,
) -> np.ndarray:
    """Mean-pool the embeddings of every category summary under the mask.

    Unmasked slots never influence the vector; a record with no summaries
    under the mask encodes to the zero vector so sample counts stay identical
    across ablation arms.
    """
    mask = list(level_mask)
    for level in mask:
        if level not in TEXT_LEVELS:
            raise ValueError(f"unknown text level {level!r}")
    texts: list[str] = []
    for level in TEXT_LEVELS:  # fixed order; mask is a set
        if level not in mask:
            continue
        for summary in getattr(record, _LEVEL_SLOTS[level]):
            texts.append(summary.summary)
    if not texts:
        return np.zeros(text_dim)
    vectors = embed_texts(texts)
    return np.asarray(vectors, dtype=np.float64).mean(axis=0)


class Backbone(Protocol):
    """Contract for pluggable time-series backbones."""

    def forward(self, inputs: np.ndarray) -> np.ndarray: ...

    def backward(self, inputs: np.ndarray, grad_outputs: np.ndarray) -> dict[str, np.ndarray]: ...

    def params(self) -> dict[str, np.ndarray]: ...


def _moving_average(x: np.ndarray, kernel: int) -> np.ndarray:
    # Edge padding keeps the trend the same length as the input.
    front = (kernel - 1) // 2
    back = kernel - 1 - front
    padded = np.concatenate(
        [np.repeat(x[:, :1, :], front, axis=1), x, np.repeat(x[:, -1:, :], back, axis=1)], axis=1
    )
    cumsum = np.cumsum(padded, axis=1)
    cumsum = np.concatenate([np.zeros_like(cumsum[:, :1, :]), cumsum], axis=1)
    return (cumsum[:, kernel:, :] - cumsum[:, :-kernel, :]) / kernel


@dataclass
class LinearBackbone:
    """Per-channel linear map (one H x L matrix plus H bias per channel).

    With decompose=True the input is split into a moving-average trend and a
    remainder; the last trend value is carried forward to every forecast step
    and the linear map acts on the remainder. Zero-initialized weights then
    start from a pure trend-carry forecast.
    """

    lookback: int
    horizon: int
    channels: int
    decompose: bool = True
    ma_kernel: int = 25
    w: np.ndarray = field(default=None)  # (C, H, L)
    b: np.ndarray = field(default=None)  # (C, H)

    def __post_init__(self) -> None:
        if self.w is None:
            self.w = np.zeros((self.channels, self.horizon, self.lookback))
        if self.b is None:
            self.b = np.zeros((self.channels, self.horizon))

    def _parts(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.decompose:
            trend = _moving_average(inputs, self.ma_kernel)
            return trend, inputs - trend
        return np.zeros_like(inputs), inputs

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        trend, remainder = self._parts(inputs)
        out = np.einsum("chl,blc->bhc", self.w, remainder) + self.b.T[None, :, :]
        if self.decompose:
            out = out + trend[:, -1:, :]
        return out

    def backward(self, inputs: np.ndarray, grad_outputs: np.ndarray) -> dict[str, np.ndarray]:
        _, remainder = self._parts(inputs)
        return {
            "w": np.einsum("bhc,blc->chl", grad_outputs, remainder),
            "b": np.einsum("bhc->ch", grad_outputs),
        }

    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


@dataclass
class ForecastModel:
    """Backbone plus text projection head, fused with ratio r in [0, 1]."""

    backbone: LinearBackbone
    text_dim: int
    fusion_ratio: float
    w_text: np.ndarray = field(default=None)  # (H*C, d_text)
    b_text: np.ndarray = field(default=None)  # (H*C,)

    def __post_init__(self) -> None:
        if not 0.0 <= self.fusion_ratio <= 1.0:
            raise ValueError("fusion_ratio must lie in [0, 1]")
        hc = self.backbone.horizon * self.backbone.channels
        if self.w_text is None:
            self.w_text = np.zeros((hc, self.text_dim))
        if self.b_text is None:
            self.b_text = np.zeros(hc)

    @property
    def horizon(self) -> int:
        return self.backbone.horizon

    @property
    def channels(self) -> int:
        return self.backbone.channels

    def params(self) -> dict[str, np.ndarray]:
        out = {f"backbone.{k}": v for k, v in self.backbone.params().items()}
        out["text.w"] = self.w_text
        out["text.b"] = self.b_text
        return out

    def forward(self, inputs: np.ndarray, text_vectors: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        text_vectors = np.asarray(text_vectors, dtype=np.float64)
        squeeze = inputs.ndim == 2
        if squeeze:
            inputs = inputs[None]
            text_vectors = text_vectors[None]
        B = inputs.shape[0]
        if inputs.shape[1:] != (self.backbone.lookback, self.backbone.channels):
            raise ValueError(f"input shape {inputs.shape[1:]} does not match model "
                             f"({self.backbone.lookback}, {self.backbone.channels})")
        if text_vectors.shape != (B, self.text_dim):
            raise ValueError(f"text shape {text_vectors.shape} does not match (batch, {self.text_dim})")
        r = self.fusion_ratio
        base = self.backbone.forward(inputs)
        text = (text_vectors @ self.w_text.T + self.b_text).reshape(B, self.horizon, self.channels)
        out = (1.0 - r) * base + r * text
        return out[0] if squeeze else out


def forward(sample: WindowSample, model: ForecastModel) -> np.ndarray:
    """Forecast one sample: (1 - r) * backbone(input) + r * projected text."""
    return model.forward(sample.input, sample.text_vector)


def mse_loss_and_grads(
    model: ForecastModel,
    inputs: np.ndarray,
    text_vectors: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """MSE over all target elements plus analytic gradients per parameter group."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    text_vectors = np.asarray(text_vectors, dtype=np.float64).reshape(-1, model.text_dim)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, model.horizon, model.channels)
    predictions = model.forward(inputs, text_vectors)
    diff = predictions - targets
    loss = float(np.mean(diff**2))
    grad_pred = 2.0 * diff / diff.size
    r = model.fusion_ratio
    grads = {f"backbone.{k}": v for k, v in model.backbone.backward(inputs, (1.0 - r) * grad_pred).items()}
    flat = (r * grad_pred).reshape(inputs.shape[0], -1)
    grads["text.w"] = flat.T @ text_vectors
    grads["text.b"] = flat.sum(axis=0)
    return loss, grads


def _stack(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.stack([s.input for s in samples])
    T = np.stack([s.text_vector for s in samples])
    Y = np.stack([s.target for s in samples])
    return X, T, Y


def evaluate_mse(model: ForecastModel, samples: Sequence[WindowSample]) -> float:
    X, T, Y = _stack(samples)
    diff = model.forward(X, T) - Y
    return float(np.mean(diff**2))


def new_model(config: TrainConfig, channels: int, text_dim: int) -> ForecastModel:
    backbone = LinearBackbone(
        lookback=config.lookback,
        horizon=config.horizon,
        channels=channels,
        decompose=config.decompose,
        ma_kernel=config.ma_kernel,
    )
    return ForecastModel(backbone=backbone, text_dim=text_dim, fusion_ratio=config.fusion_ratio)


def train(
    train_samples: Sequence[WindowSample],
    val_samples: Sequence[WindowSample],
    config: TrainConfig,
    seed: int | None = None,
) -> tuple[ForecastModel, list[tuple[int, float, float]]]:
    """Mini-batch Adam on MSE with early stopping on validation MSE.

    Deterministic per seed; the model with the best validation MSE is
    returned. The log holds (epoch, train_mse, val_mse) rows.
    """
    if not train_samples or not val_samples:
        raise ValueError("train and validation sample sets must be non-empty")
    seed = config.seed if seed is None else seed
    channels = train_samples[0].input.shape[1]
    text_dim = train_samples[0].text_vector.shape[0]
    model = new_model(config, channels, text_dim)
    params = model.params()
    optimizer = Adam(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(seed)
    X, T, Y = _stack(train_samples)
    n = X.shape[0]
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    since_best = 0
    history: list[tuple[int, float, float]] = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = mse_loss_and_grads(model, X[idx], T[idx], Y[idx])
            optimizer.step(grads)
        train_mse = evaluate_mse(model, train_samples)
        val_mse = evaluate_mse(model, val_samples)
        if not np.isfinite(train_mse) or not np.isfinite(val_mse):
            raise TrainingError(f"training diverged (non-finite loss) at epoch {epoch}")
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    for key, value in model.params().items():
        value[...] = best_params[key]
    return model, history


def grad_check(model: ForecastModel, sample: WindowSample, eps: float = 1e-5) -> float:
    """Max relative error of analytic MSE gradients vs central finite differences."""
    x = sample.input[None]
    t = sample.text_vector[None]
    y = sample.target[None]
    _, analytic = mse_loss_and_grads(model, x, t, y)
    params = model.params()
    worst = 0.0
    for name, array in params.items():
        flat = array.ravel()
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up, _ = mse_loss_and_grads(model, x, t, y)
            flat[i] = original - eps
            down, _ = mse_loss_and_grads(model, x, t, y)
            flat[i] = original
            numeric[i] = (up - down) / (2 * eps)
        a = analytic[name].ravel()
        denom = np.maximum(np.abs(a) + np.abs(numeric), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


def save_training_log(path: str | Path, history: Sequence[tuple[int, float, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,train_mse,val_mse"]
    lines += [f"{epoch},{train_mse!r},{val_mse!r}" for epoch, train_mse, val_mse in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_model(path: str | Path, model: ForecastModel) -> None:
    """Checkpoint: shape header plus row-major little-endian float64 groups."""
    meta = np.array(
        [
            model.backbone.lookback,
            model.backbone.horizon,
            model.backbone.channels,
            model.text_dim,
            model.fusion_ratio,
            1.0 if model.backbone.decompose else 0.0,
            model.backbone.ma_kernel,
        ],
        dtype=np.float64,
    )
    groups = [("meta", meta)] + sorted(model.params().items())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(struct.pack("<i", len(groups)))
        for name, array in groups:
            raw = name.encode("utf-8")
            array = np.asarray(array, dtype=np.float64)
            fh.write(struct.pack("<i", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<i", array.ndim))
            for dim in array.shape:
                fh.write(struct.pack("<i", dim))
            fh.write(array.astype("<f8").tobytes(order="C"))


def load_model(path: str | Path) -> ForecastModel:
    groups: dict[str, np.ndarray] = {}
    with Path(path).open("rb") as fh:
        (count,) = struct.unpack("<i", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<i", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<i", fh.read(4))
            shape = tuple(struct.unpack("<i", fh.read(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(size * 8), dtype="<f8").reshape(shape)
            groups[name] = data.astype(np.float64)
    meta = groups["meta"]
    backbone = LinearBackbone(
        lookback=int(meta[0]),
        horizon=int(meta[1]),
        channels=int(meta[2]),
        decompose=bool(meta[5]),
        ma_kernel=int(meta[6]),
        w=groups["backbone.w"].copy(),
        b=groups["backbone.b"].copy(),
    )
    return ForecastModel(
        backbone=backbone,
        text_dim=int(meta[3]),
        fusion_ratio=float(meta[4]),
        w_text=groups["text.w"].copy(),
        b_text=groups["text.b"].copy(),
    )
