"""The end-to-end detector: fit, score, evaluate, save, reload.

A detector bundles the trained networks with the normalization statistics,
the score threshold, the configs that produced it, and the phase logs.
Checkpoints are directories: a ``detector.json`` manifest plus one parameter
checkpoint per network, so reloads rebuild the exact models and reproduce
scores bit-for-bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .data import NormStats, SeriesTable, WindowBatch, make_windows, minmax_normalize
from .detection import (
    Metrics,
    Threshold,
    compute_metrics,
    confusion_counts,
    reconstruction_scores,
    scores_array,
    select_threshold,
)
from .errors import ConfigurationError, ContractError
from .models import ArchFamily, ModelSpec, build_model
from .rng import Rng
from .training import (
    PhaseLog,
    TrainConfig,
    anogan_latent_search,
    train_adversarial,
    train_autoencoder,
    train_encoder,
)

FORMAT_VERSION = 1

KINDS = ("gan_detector", "autoencoder", "latent_search")


@dataclass
class DetectorConfig:
    """What to build: detector kind, families, window geometry, model sizes."""

    kind: str = "gan_detector"
    encoder_family: ArchFamily = ArchFamily.LSTMMULTIHEAD
    generator_family: ArchFamily = ArchFamily.CONVLSTM
    baseline_family: ArchFamily = ArchFamily.FCNN   # autoencoder kind only
    window_len: int = 32
    stride: int = 4
    latent_dim: int = 16
    lstm_hidden: int = 64
    conv_channels: tuple[int, int] = (32, 16)
    attn_dim: int = 64
    n_heads: int = 4
    feature_dim: int = 64
    holdout_frac: float = 0.1
    holdout_strategy: str = "tail"  # tail: last block (temporal holdout);
                                    # strided: every k-th window
    fit_restarts: int = 1           # candidates fitted; best holdout fit kept
    threshold_method: str = "percentile_on_normal"
    threshold_param: float = 95.0
    search_iters: int = 40          # latent_search kind only
    search_restarts: int = 2
    search_lr: float = 0.1
    search_lr_decay: float = 0.97

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown detector kind {self.kind!r}")
        if isinstance(self.encoder_family, str):
            self.encoder_family = ArchFamily(self.encoder_family)
        if isinstance(self.generator_family, str):
            self.generator_family = ArchFamily(self.generator_family)
        if isinstance(self.baseline_family, str):
            self.baseline_family = ArchFamily(self.baseline_family)
        if isinstance(self.conv_channels, list):
            self.conv_channels = tuple(self.conv_channels)
        if not 0.0 < self.holdout_frac < 1.0:
            raise ConfigurationError("holdout_frac must lie in (0, 1)")
        if self.holdout_strategy not in ("strided", "tail"):
            raise ConfigurationError(f"unknown holdout strategy {self.holdout_strategy!r}")
        if self.fit_restarts < 1:
            raise ConfigurationError("fit_restarts must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("encoder_family", "generator_family", "baseline_family"):
            d[key] = getattr(self, key).value
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (32, 16)))
        return cls(**d)

    def model_common(self, n_features: int, gan_mode: str) -> dict:
        return dict(window_len=self.window_len, n_features=n_features,
                    latent_dim=self.latent_dim, lstm_hidden=self.lstm_hidden,
                    conv_channels=self.conv_channels, attn_dim=self.attn_dim,
                    n_heads=self.n_heads, feature_dim=self.feature_dim,
                    gan_mode=gan_mode)


@dataclass
class TrainedDetector:
    kind: str
    det_cfg: DetectorConfig
    train_cfg: TrainConfig
    stats: NormStats
    threshold: Threshold
    encoder: object | None = None
    generator: object | None = None
    discriminator: object | None = None
    autoencoder: object | None = None
    logs: dict = field(default_factory=dict)
    feature_columns: list[str] = field(default_factory=list)
    chosen_restart: int = 0

    # -- scoring -----------------------------------------------------------

    def window_batch(self, table: SeriesTable) -> WindowBatch:
        if self.feature_columns and list(table.columns) != self.feature_columns:
            raise ContractError(
                f"feature columns {table.columns} do not match checkpoint "
                f"{self.feature_columns}")
        batch = make_windows(table, self.det_cfg.window_len, self.det_cfg.stride)
        return minmax_normalize(batch, self.stats)

    def score_normalized(self, windows: np.ndarray) -> np.ndarray:
        k = self.train_cfg.feature_weight
        if self.kind == "gan_detector":
            return scores_array(self.encoder, self.generator, self.discriminator,
                                windows, k)
        if self.kind == "autoencoder":
            return reconstruction_scores(self.autoencoder, windows)
        # latent_search: deterministic because the rng is re-derived per call
        rng = Rng(self.train_cfg.seed).derive(1001)
        _, scores = anogan_latent_search(
            windows, self.generator, self.discriminator, k,
            iters=self.det_cfg.search_iters, restarts=self.det_cfg.search_restarts,
            rng=rng, lr=self.det_cfg.search_lr, lr_decay=self.det_cfg.search_lr_decay)
        return scores

    def score_table(self, table: SeriesTable) -> tuple[np.ndarray, np.ndarray | None]:
        batch = self.window_batch(table)
        return self.score_normalized(batch.windows), batch.labels

    def evaluate(self, table: SeriesTable) -> tuple[Metrics, np.ndarray, np.ndarray]:
        scores, labels = self.score_table(table)
        if labels is None:
            raise ContractError("evaluation needs a labeled series")
        preds = (scores > self.threshold.value).astype(np.int64)
        return compute_metrics(confusion_counts(labels, preds)), scores, preds

    # -- persistence ----------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "detector_config": self.det_cfg.to_dict(),
            "train_config": self.train_cfg.to_dict(),
            "stats": self.stats.to_dict(),
            "threshold": self.threshold.to_dict(),
            "feature_columns": self.feature_columns,
            "chosen_restart": self.chosen_restart,
            "specs": {},
        }
        for name in ("encoder", "generator", "discriminator", "autoencoder"):
            model = getattr(self, name)
            if model is not None:
                manifest["specs"][name] = model.spec.to_dict()
                model.params.save(directory / f"{name}.pset")
        (directory / "detector.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        for phase, log in self.logs.items():
            log.save(directory / f"log_{phase}.jsonl")

    @classmethod
    def load(cls, directory: str | Path) -> "TrainedDetector":
        directory = Path(directory)
        manifest = json.loads((directory / "detector.json").read_text(encoding="utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ContractError(f"unsupported detector checkpoint version "
                                f"{manifest.get('format_version')}")
        det = cls(
            kind=manifest["kind"],
            det_cfg=DetectorConfig.from_dict(manifest["detector_config"]),
            train_cfg=TrainConfig.from_dict(manifest["train_config"]),
            stats=NormStats.from_dict(manifest["stats"]),
            threshold=Threshold.from_dict(manifest["threshold"]),
            feature_columns=manifest.get("feature_columns", []),
            chosen_restart=manifest.get("chosen_restart", 0),
        )
        for name, spec_dict in manifest["specs"].items():
            spec = ModelSpec.from_dict(spec_dict)
            model = build_model(spec, Rng(0))
            model.params.load_into(directory / f"{name}.pset")
            setattr(det, name, model)
        for log_file in sorted(directory.glob("log_*.jsonl")):
            log = PhaseLog.load(log_file)
            det.logs[log.phase] = log
        return det


# -- fitting ------------------------------------------------------------------------


def _fit_holdout_split(windows: np.ndarray, frac: float,
                       strategy: str = "strided") -> tuple[np.ndarray, np.ndarray]:
    n = len(windows)
    hold = max(1, int(round(n * frac)))
    if hold >= n:
        raise ContractError("not enough windows for a holdout split")
    if strategy == "tail":
        return windows[:-hold], windows[-hold:]
    # strided: spread the holdout across the whole span so the threshold sees
    # every diurnal phase
    step = n / hold
    idx = np.unique((np.arange(hold) * step).astype(int))
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return windows[~mask], windows[mask]


def _fit_candidate(train_table: SeriesTable, det_cfg: DetectorConfig,
                   train_cfg: TrainConfig, fit: np.ndarray, holdout: np.ndarray,
                   stats: NormStats) -> TrainedDetector:
    common = det_cfg.model_common(train_table.features.shape[1], train_cfg.gan_mode)
    logs: dict[str, PhaseLog] = {}
    det = TrainedDetector(kind=det_cfg.kind, det_cfg=det_cfg, train_cfg=train_cfg,
                          stats=stats, threshold=Threshold(0.0, det_cfg.threshold_method),
                          feature_columns=list(train_table.columns))

    if det_cfg.kind in ("gan_detector", "latent_search"):
        g_spec = ModelSpec(role="generator", family=det_cfg.generator_family, **common)
        d_spec = ModelSpec(role="discriminator", family=ArchFamily.CONV, **common)
        gen, disc, log_adv = train_adversarial(fit, g_spec, d_spec, train_cfg,
                                               eval_windows=holdout)
        logs["adversarial"] = log_adv
        det.generator, det.discriminator = gen, disc
        if det_cfg.kind == "gan_detector":
            e_spec = ModelSpec(role="encoder", family=det_cfg.encoder_family, **common)
            enc, log_enc = train_encoder(fit, gen, disc, e_spec, train_cfg,
                                         eval_windows=holdout)
            logs["encoder"] = log_enc
            det.encoder = enc
    elif det_cfg.kind == "autoencoder":
        spec = ModelSpec(role="autoencoder_baseline", family=det_cfg.baseline_family,
                         **common)
        model, log_ae = train_autoencoder(fit, spec, train_cfg, eval_windows=holdout)
        logs["autoencoder"] = log_ae
        det.autoencoder = model

    det.logs = logs
    return det


def train_detector(train_table: SeriesTable, det_cfg: DetectorConfig,
                   train_cfg: TrainConfig) -> TrainedDetector:
    """Fit on normal traffic: train, then threshold on held-out normal scores.

    With ``fit_restarts > 1``, several candidates are fitted from derived
    seeds and the one that reconstructs the held-out normal windows best
    (lowest mean score) is kept; selection never touches labels.
    """
    if train_table.labels is not None and train_table.labels.sum() > 0:
        raise ContractError("training series must contain normal traffic only")
    stats = NormStats.from_series(train_table)
    batch = minmax_normalize(
        make_windows(train_table, det_cfg.window_len, det_cfg.stride), stats)
    fit, holdout = _fit_holdout_split(batch.windows, det_cfg.holdout_frac,
                                      det_cfg.holdout_strategy)

    best: tuple[float, int, TrainedDetector] | None = None
    for restart in range(det_cfg.fit_restarts):
        if restart == 0:
            sub_cfg = train_cfg
        else:
            sub_seed = Rng(train_cfg.seed).derive(7000 + restart).seed
            sub_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": sub_seed})
        candidate = _fit_candidate(train_table, det_cfg, sub_cfg, fit, holdout, stats)
        mean_hold = float(candidate.score_normalized(holdout).mean())
        if best is None or mean_hold < best[0]:
            best = (mean_hold, restart, candidate)
    _, chosen, det = best
    det.chosen_restart = chosen

    holdout_scores = det.score_normalized(holdout)
    det.threshold = select_threshold(
        holdout_scores, det_cfg.threshold_method, det_cfg.threshold_param,
        provenance={"source": "training holdout", "windows": int(len(holdout)),
                    "restart": chosen})
    return det


def evaluate_detector(det: TrainedDetector, test_table: SeriesTable,
                      started_at: float | None = None):
    """Metrics on a labeled series, timed from ``started_at`` if given."""
    t0 = started_at if started_at is not None else time.perf_counter()
    metrics, scores, preds = det.evaluate(test_table)
    runtime = time.perf_counter() - t0
    return metrics, scores, preds, runtime
