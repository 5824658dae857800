"""Post-modeling anomaly scoring, threshold selection, classification, and
the DR/FAR/F1/Acc evaluation with table rendering.

Scores are per window and stateless: a window's score is identical whether
it is scored alone or inside a batch.  The default threshold is a percentile
of scores on held-out normal data (keeping labels out of calibration); the
f1_max mode consumes labels and is reported as such.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import WindowBatch
from .errors import ContractError
from .models import AutoencoderBaseline, Discriminator, Encoder, Generator
from .tensor import Tensor
from .training import window_scores

THRESHOLD_METHODS = ("percentile_on_normal", "f1_max_on_validation")


@dataclass
class AnomalyScore:
    window_index: int
    score: float
    label_true: int | None = None
    label_pred: int | None = None


@dataclass
class Threshold:
    value: float
    method: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in THRESHOLD_METHODS:
            raise ContractError(f"unknown threshold method {self.method!r}")
        if not np.isfinite(self.value):
            raise ContractError("threshold must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Threshold":
        return cls(**d)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ContractError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class Metrics:
    dr: float
    far: float
    f1: float
    acc: float
    flags: list[str] = field(default_factory=list)


# -- scoring -----------------------------------------------------------------------


def scores_array(enc: Encoder, gen: Generator, disc: Discriminator,
                 windows: np.ndarray, feature_weight: float,
                 batch_size: int = 256) -> np.ndarray:
    """Per-window scores through the trained triple, forward-only."""
    out = np.empty(len(windows))
    with T.no_grad():
        for i in range(0, len(windows), batch_size):
            x = Tensor(windows[i:i + batch_size])
            x_hat = gen.forward(enc.forward(x))
            _, f_x = disc.forward(x)
            _, f_hat = disc.forward(x_hat)
            out[i:i + batch_size] = window_scores(x, x_hat, f_x, f_hat,
                                                  feature_weight).data
    return out


def reconstruction_scores(model: AutoencoderBaseline, windows: np.ndarray,
                          batch_size: int = 256) -> np.ndarray:
    """Data-term-only scores for the reconstruction baselines."""
    out = np.empty(len(windows))
    with T.no_grad():
        for i in range(0, len(windows), batch_size):
            x = Tensor(windows[i:i + batch_size])
            x_hat = model.forward(x)
            out[i:i + batch_size] = window_scores(x, x_hat, x_hat, x_hat, 0.0).data
    return out


def score_windows(enc: Encoder, gen: Generator, disc: Discriminator,
                  batch: WindowBatch, feature_weight: float) -> list[AnomalyScore]:
    values = scores_array(enc, gen, disc, batch.windows, feature_weight)
    labels = batch.labels
    return [AnomalyScore(window_index=i, score=float(v),
                         label_true=None if labels is None else int(labels[i]))
            for i, v in enumerate(values)]


# -- thresholding ------------------------------------------------------------------


def select_threshold(scores, method: str = "percentile_on_normal",
                     param: float = 95.0, labels=None,
                     provenance: dict | None = None) -> Threshold:
    """Pick a score threshold.

    percentile_on_normal: linear-interpolated percentile of (normal) scores.
    f1_max_on_validation: scan midpoints between sorted unique scores and
    keep the lowest midpoint maximizing F1 (needs labels; diagnostic only).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("threshold selection needs at least one score")
    info = dict(provenance or {})
    if method == "percentile_on_normal":
        info["percentile"] = param
        value = float(np.percentile(scores, param, method="linear"))
    elif method == "f1_max_on_validation":
        if labels is None:
            raise ContractError("f1_max threshold needs labels")
        labels = np.asarray(labels)
        uniq = np.unique(scores)
        if uniq.size < 2:
            value = float(uniq[0])
        else:
            midpoints = (uniq[:-1] + uniq[1:]) / 2.0
            best_f1, value = -1.0, float(midpoints[0])
            for mid in midpoints:
                f1 = compute_metrics(confusion_counts(labels, scores > mid)).f1
                if f1 > best_f1:
                    best_f1, value = f1, float(mid)
            info["best_f1"] = best_f1
        info["uses_labels"] = True
    else:
        raise ContractError(f"unknown threshold method {method!r}")
    return Threshold(value=value, method=method, provenance=info)


def classify(scores, threshold: Threshold) -> np.ndarray:
    """label_pred = 1 iff score > threshold (ties predict normal)."""
    return (np.asarray(scores) > threshold.value).astype(np.int64)


def apply_threshold(scored: list[AnomalyScore], threshold: Threshold) -> list[AnomalyScore]:
    for item in scored:
        item.label_pred = int(item.score > threshold.value)
    return scored


# -- metrics -----------------------------------------------------------------------


def confusion_counts(labels_true, labels_pred) -> ConfusionCounts:
    yt = np.asarray(labels_true).astype(bool)
    yp = np.asarray(labels_pred).astype(bool)
    if yt.shape != yp.shape:
        raise ContractError("label arrays must align")
    return ConfusionCounts(
        tp=int(np.sum(yt & yp)),
        fp=int(np.sum(~yt & yp)),
        tn=int(np.sum(~yt & ~yp)),
        fn=int(np.sum(yt & ~yp)),
    )


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """DR = TP/(TP+FN), FAR = FP/(FP+TN), F1 from precision and DR,
    Acc = (TP+TN)/total; zero denominators yield 0 and are flagged."""
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_zero_denominator")
            return 0.0
        return num / den

    dr = ratio(counts.tp, counts.tp + counts.fn, "dr")
    far = ratio(counts.fp, counts.fp + counts.tn, "far")
    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    f1 = ratio(2.0 * precision * dr, precision + dr, "f1")
    acc = ratio(counts.tp + counts.tn, counts.total, "acc")
    return Metrics(dr=dr, far=far, f1=f1, acc=acc, flags=flags)


# -- report rows and rendering --------------------------------------------------------


@dataclass
class EvalRow:
    """One evaluated configuration; grid rows carry (mode, E, G), baseline
    rows carry a model label."""

    dr: float
    far: float
    f1: float
    acc: float
    seed: int
    runtime: float
    gan_mode: str = ""
    encoder: str = ""
    generator: str = ""
    model_label: str = ""
    flags: list[str] = field(default_factory=list)
    error: str = ""

    def metrics_cells(self) -> str:
        mark = "*" if self.flags else ""
        return f"{self.dr:.4f} {self.far:.4f} {self.f1:.4f} {self.acc:.4f}{mark}"

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock time: the reproducible row payload."""
        d = asdict(self)
        d.pop("runtime")
        return d

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvalRow":
        return cls(**json.loads(line))


def save_rows(rows: list[EvalRow], path: str | Path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in rows), encoding="utf-8")


def load_rows(path: str | Path) -> list[EvalRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EvalRow.from_json(line) for line in lines if line.strip()]


GRID_MODES = ("wgan", "gan")
_MODE_TITLES = {"wgan": "WGAN", "gan": "GAN"}


def render_grid_table(rows: list[EvalRow], families: list[str]) -> str:
    """Aligned text mirroring the mode-block / E-row / G-column-group layout."""
    index = {(r.gan_mode, r.encoder, r.generator): r for r in rows if not r.model_label}
    width = 30
    lines = []
    for mode in GRID_MODES:
        lines.append(_MODE_TITLES[mode].center(20 + width * 3).rstrip())
        for chunk_start in range(0, len(families), 3):
            chunk = families[chunk_start:chunk_start + 3]
            header = " " * 20 + "".join(f"G: {g}".center(width) for g in chunk)
            sub = " " * 20 + ("  DR     FAR    F1     Acc   ".center(width)) * len(chunk)
            lines.append(header.rstrip())
            lines.append(sub.rstrip())
            for efam in families:
                cells = []
                for gfam in chunk:
                    row = index.get((mode, efam, gfam))
                    cells.append(row.metrics_cells().center(width) if row
                                 else "-".center(width))
                lines.append((f"E: {efam}".ljust(20) + "".join(cells)).rstrip())
            lines.append("")
        lines.append("")
    return "\n".join(lines)


def render_baseline_table(rows: list[EvalRow]) -> str:
    """Model-per-row table in DR, FAR, F1, Acc column order."""
    name_w = max([len(r.model_label) for r in rows] + [len("Model")]) + 2
    lines = [f"{'Model'.ljust(name_w)}  DR     FAR    F1     Acc",
             "-" * (name_w + 29)]
    for r in rows:
        lines.append(f"{r.model_label.ljust(name_w)}{r.metrics_cells()}")
    return "\n".join(lines) + "\n"


def baseline_rows_from_grid(rows: list[EvalRow]) -> list[EvalRow]:
    """Project the two named detector configurations out of a grid result set.

    The flagship detector is the (wgan, E=LSTMMultiHead, G=ConvLSTM) cell and
    the encoder-equipped search-free baseline is (gan, E=FCNN, G=ConvLSTM).
    """
    wanted = {("wgan", "LSTMMultiHead", "ConvLSTM"): "WBHT",
              ("gan", "FCNN", "ConvLSTM"): "f-AnoGAN"}
    out = []
    for row in rows:
        label = wanted.get((row.gan_mode, row.encoder, row.generator))
        if label:
            projected = EvalRow(**{**asdict(row), "model_label": label})
            out.append(projected)
    return out


# -- score trace plot -------------------------------------------------------------------


def write_score_plot(path: str | Path, scores, threshold: Threshold,
                     labels=None, width: int = 960, height: int = 280) -> None:
    """Standalone SVG: score polyline, threshold rule, true anomalies marked."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("nothing to plot")
    margin = 40
    lo = min(scores.min(), threshold.value)
    hi = max(scores.max(), threshold.value)
    span = (hi - lo) or 1.0

    def sx(i):
        return margin + (width - 2 * margin) * (i / max(len(scores) - 1, 1))

    def sy(v):
        return height - margin - (height - 2 * margin) * ((v - lo) / span)

    points = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(scores))
    ty = sy(threshold.value)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1"/>',
        f'<line x1="{margin}" y1="{ty:.2f}" x2="{width - margin}" y2="{ty:.2f}" '
        f'stroke="#d62728" stroke-dasharray="6,4" stroke-width="1.5"/>',
        f'<text x="{margin}" y="16" font-family="monospace" font-size="12">'
        f'window scores (threshold {threshold.value:.4g}, {threshold.method})</text>',
    ]
    if labels is not None:
        labels = np.asarray(labels)
        for i in np.nonzero(labels == 1)[0]:
            parts.append(f'<circle cx="{sx(i):.2f}" cy="{sy(scores[i]):.2f}" r="2" '
                         f'fill="#ff7f0e"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
