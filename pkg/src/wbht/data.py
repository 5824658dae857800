"""Telemetry ingestion, windowing, normalization, and the synthetic
backbone-traffic generator with black-hole injection.

The synthetic series mimics interface counters: each ingress channel is a
diurnal sinusoid plus AR(1) noise, and its egress twin tracks it at roughly
90%.  A black-hole event multiplies the egress channels by a small
suppression factor while ingress continues unchanged (traffic keeps arriving
and silently disappears), and labels mark the affected steps.

CSV files are UTF-8 with LF line endings: ``timestamp`` first, then named
feature columns, then an optional trailing ``label`` column.  Floats are
written with full round-trip precision, so generate -> write -> ingest is
bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, DataError
from .rng import Rng


@dataclass
class SeriesTable:
    timestamps: np.ndarray          # (T,) int64, strictly increasing
    features: np.ndarray            # (T, F) float64
    columns: list[str]
    labels: np.ndarray | None = None  # (T,) 0/1 per step

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.timestamps):
            raise DataError(f"feature matrix {self.features.shape} does not match "
                            f"{len(self.timestamps)} timestamps")
        if len(self.columns) != self.features.shape[1]:
            raise DataError("column names do not match feature width")
        diffs = np.diff(self.timestamps)
        if len(diffs) and diffs.min() <= 0:
            pos = int(np.argmin(diffs > 0)) + 1
            raise DataError(f"timestamps not strictly increasing at index {pos}")
        if not np.isfinite(self.features).all():
            raise DataError("non-finite feature values after ingestion")

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, start: int, stop: int) -> "SeriesTable":
        return SeriesTable(self.timestamps[start:stop], self.features[start:stop],
                           list(self.columns),
                           None if self.labels is None else self.labels[start:stop])


@dataclass
class NormStats:
    """Per-feature min and max, taken from the training split only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if (self.maximum < self.minimum).any():
            raise ContractError("normalization stats need max >= min")

    @classmethod
    def from_series(cls, table: SeriesTable) -> "NormStats":
        return cls(table.features.min(axis=0), table.features.max(axis=0))

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["minimum"]), np.array(d["maximum"]))


@dataclass
class WindowBatch:
    """Fixed-length windows (B, W, F) with per-window 0/1 labels.

    A window is labeled anomalous iff any step inside it is labeled."""

    windows: np.ndarray
    labels: np.ndarray | None = None
    stats: NormStats | None = None   # set once normalized

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim != 3:
            raise ContractError(f"windows must be (B, W, F), got {self.windows.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.windows.shape[0],):
                raise ContractError("window labels must be one per window")

    def __len__(self) -> int:
        return self.windows.shape[0]


def make_windows(table: SeriesTable, window_len: int, stride: int) -> WindowBatch:
    """Windows starting at 0, stride, 2*stride, ...; count (T - W)//stride + 1."""
    if stride < 1:
        raise ContractError("stride must be >= 1")
    if window_len > len(table):
        raise ContractError(f"window_len {window_len} exceeds series length {len(table)}")
    starts = np.arange(0, len(table) - window_len + 1, stride)
    idx = starts[:, None] + np.arange(window_len)[None, :]
    windows = table.features[idx]
    labels = None
    if table.labels is not None:
        labels = (table.labels[idx].max(axis=1) > 0).astype(np.int64)
    return WindowBatch(windows, labels)


def minmax_normalize(batch: WindowBatch, stats: NormStats) -> WindowBatch:
    """x' = (x - min) / (max - min); constant features map to 0.

    Values outside the training range are NOT clipped.
    """
    span = stats.maximum - stats.minimum
    safe = np.where(span == 0.0, 1.0, span)
    normalized = (batch.windows - stats.minimum) / safe
    normalized[..., span == 0.0] = 0.0
    return WindowBatch(normalized, batch.labels, stats)


# -- CSV I/O ----------------------------------------------------------------------


def write_csv(table: SeriesTable, path: str | Path) -> None:
    header = ["timestamp"] + list(table.columns)
    if table.labels is not None:
        header.append("label")
    lines = [",".join(header)]
    for i in range(len(table)):
        cells = [str(int(table.timestamps[i]))]
        cells += [repr(float(v)) for v in table.features[i]]
        if table.labels is not None:
            cells.append(str(int(table.labels[i])))
        lines.append(",".join(cells))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def ingest_csv(path: str | Path) -> SeriesTable:
    """Parse a telemetry CSV; failures name the offending 1-based row."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "timestamp":
        raise DataError(f"{path}: first column must be 'timestamp', got {header[0]!r}")
    has_label = header[-1] == "label"
    columns = header[1:-1] if has_label else header[1:]
    if not columns:
        raise DataError(f"{path}: no feature columns")

    n_cols = len(header)
    timestamps, rows, labels = [], [], []
    prev_ts = None
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise DataError(f"{path}: row {lineno} has {len(cells)} cells, expected {n_cols}")
        try:
            ts = int(cells[0])
            values = [float(c) for c in cells[1:n_cols - 1 if has_label else n_cols]]
            if has_label:
                labels.append(int(cells[-1]))
        except ValueError as exc:
            raise DataError(f"{path}: row {lineno}: unparseable cell ({exc})") from None
        if prev_ts is not None and ts <= prev_ts:
            raise DataError(f"{path}: row {lineno}: timestamp {ts} not after {prev_ts}")
        prev_ts = ts
        timestamps.append(ts)
        rows.append(values)

    return SeriesTable(np.array(timestamps, dtype=np.int64),
                       np.array(rows, dtype=np.float64).reshape(len(rows), len(columns)),
                       columns,
                       np.array(labels, dtype=np.int64) if has_label else None)


# -- synthetic generator -------------------------------------------------------------


@dataclass
class SynthConfig:
    seed: int = 7
    total_steps: int = 20000
    n_features: int = 4
    diurnal_period: float = 1440.0
    diurnal_amplitude: float = 0.4
    ar_coeff: float = 0.8
    noise_scale: float = 0.02       # AR innovation sigma, relative to channel level
    ratio_noise: float = 0.02       # egress/ingress ratio noise, stationary sd
    ratio_ar: float = 0.0           # AR coefficient of the ratio noise
    bh_event_count: int = 25
    bh_duration: tuple[int, int] = (20, 60)
    bh_suppression: float = 0.1
    bh_region_frac: float = 0.6     # events only after this fraction (training stays clean)

    def __post_init__(self):
        if isinstance(self.bh_duration, list):
            self.bh_duration = tuple(self.bh_duration)
        if self.n_features != 1 and self.n_features % 2 != 0:
            raise ConfigurationError("n_features must be 1 or even (ingress/egress pairs)")
        if not 0.0 <= self.bh_suppression <= 0.2:
            raise ConfigurationError("bh_suppression must lie in [0, 0.2]")
        if not 0.0 <= self.bh_region_frac < 1.0:
            raise ConfigurationError("bh_region_frac must lie in [0, 1)")
        lo, hi = self.bh_duration
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"bad bh_duration range {self.bh_duration}")
        if self.total_steps < 10:
            raise ConfigurationError("total_steps too small")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["bh_duration"] = list(self.bh_duration)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["bh_duration"] = tuple(d.get("bh_duration", (20, 60)))
        return cls(**d)


def _ar1(innovations: np.ndarray, coeff: float) -> np.ndarray:
    out = np.empty_like(innovations)
    acc = 0.0
    for i in range(len(innovations)):
        acc = coeff * acc + innovations[i]
        out[i] = acc
    return out


def _column_names(n_features: int) -> list[str]:
    if n_features == 1:
        return ["egress_rate"]
    if n_features == 4:
        return ["ingress_packets", "egress_packets", "ingress_bytes", "egress_bytes"]
    names = []
    for pair in range(n_features // 2):
        names += [f"ingress_{pair}", f"egress_{pair}"]
    return names


def _plan_events(cfg: SynthConfig, rng: Rng) -> list[tuple[int, int]]:
    """Non-overlapping (start, duration) events inside the black-hole region.

    One event per equal slot keeps placement deterministic and overlap-free.
    """
    if cfg.bh_event_count == 0:
        return []
    region_start = int(round(cfg.total_steps * cfg.bh_region_frac))
    region_len = cfg.total_steps - region_start
    slot = region_len // cfg.bh_event_count
    lo, hi = cfg.bh_duration
    if slot < hi:
        raise ConfigurationError(
            f"{cfg.bh_event_count} events of up to {hi} steps cannot fit without "
            f"overlap in {region_len} steps")
    events = []
    for i in range(cfg.bh_event_count):
        duration = int(rng.integers(lo, hi + 1))
        offset = int(rng.integers(0, slot - duration + 1))
        events.append((region_start + i * slot + offset, duration))
    return events


def generate_synthetic(cfg: SynthConfig) -> SeriesTable:
    """Deterministic labeled series; same config twice gives identical tables."""
    rng = Rng(cfg.seed)
    steps = cfg.total_steps
    t = np.arange(steps, dtype=np.float64)
    columns = _column_names(cfg.n_features)
    features = np.empty((steps, cfg.n_features))

    n_pairs = max(1, cfg.n_features // 2)
    for pair in range(n_pairs):
        level = 1000.0 * (1.0 + 2.0 * pair)   # distinct scales per pair
        phase = rng.uniform(()) * 2.0 * np.pi
        base = level * (1.0 + cfg.diurnal_amplitude * np.sin(
            2.0 * np.pi * t / cfg.diurnal_period + phase))
        eps = rng.normal((steps,)) * cfg.noise_scale * level
        noise = _ar1(eps, cfg.ar_coeff)
        ingress = base + noise
        # innovations scaled so ratio_noise is the stationary sd of the wander
        ratio_innov = cfg.ratio_noise * np.sqrt(1.0 - cfg.ratio_ar ** 2)
        ratio = 0.9 + _ar1(rng.normal((steps,)) * ratio_innov, cfg.ratio_ar)
        egress = ingress * ratio
        if cfg.n_features == 1:
            features[:, 0] = egress
        else:
            features[:, 2 * pair] = ingress
            features[:, 2 * pair + 1] = egress

    labels = np.zeros(steps, dtype=np.int64)
    egress_cols = [0] if cfg.n_features == 1 else list(range(1, cfg.n_features, 2))
    for start, duration in _plan_events(cfg, rng):
        stop = start + duration
        features[start:stop, egress_cols] *= cfg.bh_suppression
        labels[start:stop] = 1

    return SeriesTable(np.arange(steps, dtype=np.int64), features, columns, labels)


def split_series(table: SeriesTable, train_frac: float = 0.6,
                 val_frac: float = 0.2) -> tuple[SeriesTable, SeriesTable, SeriesTable]:
    """Chronological train/val/test split."""
    if not 0 < train_frac < 1 or not 0 <= val_frac < 1 or train_frac + val_frac >= 1:
        raise ConfigurationError("split fractions must partition (0, 1)")
    n = len(table)
    a = int(round(n * train_frac))
    b = int(round(n * (train_frac + val_frac)))
    return table.slice(0, a), table.slice(a, b), table.slice(b, n)
