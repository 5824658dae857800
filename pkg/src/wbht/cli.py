"""Command-line surface.

Subcommands: ``synth`` (dataset synthesis), ``train`` (single detector),
``detect`` (score a series with a checkpoint), ``eval`` (metrics / report
rendering), ``grid`` (the full mode x encoder x generator experiment).

Configuration is a flat ``section.key = value`` text file; command-line
flags and ``--set section.key=value`` override file values.  Every command
writes the fully resolved configuration next to its outputs so a run can be
reproduced from that file alone.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence,
5 partial grid failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    SynthConfig,
    generate_synthetic,
    ingest_csv,
    split_series,
    write_csv,
)
from .detection import (
    Threshold,
    classify,
    compute_metrics,
    confusion_counts,
    load_rows,
    render_baseline_table,
    render_grid_table,
    select_threshold,
    write_score_plot,
)
from .detector import DetectorConfig, TrainedDetector, train_detector
from .errors import ConfigurationError, ContractError, DataError, TrainingDiverged
from .grid import ALL_FAMILIES, GridPlan, run_baselines, run_grid, write_reports
from .models import ArchFamily, BASELINE_LABELS
from .training import TrainConfig

OUT_ROOT_ENV = "WBHT_OUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_PARTIAL = 5

_BASELINE_NAMES = {label.lower(): family for family, label in BASELINE_LABELS.items()}


# -- settings: flat key=value with section prefixes --------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key or "." not in key:
            raise ConfigurationError(f"{source}:{lineno}: keys are 'section.name'")
        values[key] = value.strip()
    return values


class Settings:
    """Layered config: defaults under file values under flag overrides."""

    def __init__(self, file_values: dict[str, str] | None = None,
                 overrides: dict[str, str] | None = None):
        self.values: dict[str, str] = {}
        self.values.update(file_values or {})
        self.values.update(overrides or {})

    def get(self, key: str, default):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            if isinstance(default, bool):
                if raw.lower() in ("true", "1", "yes"):
                    return True
                if raw.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(raw)
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            if isinstance(default, tuple):
                parts = [p.strip() for p in raw.split(",")]
                return tuple(type(default[0])(p) for p in parts)
        except (ValueError, TypeError):
            raise ConfigurationError(f"config key {key}: cannot parse {raw!r}") from None
        return raw

    def maybe(self, key: str):
        return self.values.get(key)


def _flatten(section: str, payload: dict) -> list[str]:
    lines = []
    for key, value in sorted(payload.items()):
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            continue
        lines.append(f"{section}.{key} = {value}")
    return lines


def write_resolved_config(out_dir: Path, sections: dict[str, dict]) -> None:
    lines = []
    for section, payload in sorted(sections.items()):
        lines += _flatten(section, payload)
    (out_dir / "config_resolved.cfg").write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")


# -- builders ----------------------------------------------------------------------------


def synth_config_from(settings: Settings) -> SynthConfig:
    base = SynthConfig()
    return SynthConfig(
        seed=settings.get("synth.seed", base.seed),
        total_steps=settings.get("synth.total_steps", base.total_steps),
        n_features=settings.get("synth.n_features", base.n_features),
        diurnal_period=settings.get("synth.diurnal_period", base.diurnal_period),
        diurnal_amplitude=settings.get("synth.diurnal_amplitude", base.diurnal_amplitude),
        ar_coeff=settings.get("synth.ar_coeff", base.ar_coeff),
        noise_scale=settings.get("synth.noise_scale", base.noise_scale),
        bh_event_count=settings.get("synth.bh_event_count", base.bh_event_count),
        bh_duration=settings.get("synth.bh_duration", base.bh_duration),
        bh_suppression=settings.get("synth.bh_suppression", base.bh_suppression),
        bh_region_frac=settings.get("synth.bh_region_frac", base.bh_region_frac),
    )


def detector_config_from(settings: Settings) -> DetectorConfig:
    base = DetectorConfig()
    return DetectorConfig(
        kind=settings.get("detector.kind", base.kind),
        encoder_family=ArchFamily(settings.get("detector.encoder_family",
                                               base.encoder_family.value)),
        generator_family=ArchFamily(settings.get("detector.generator_family",
                                                 base.generator_family.value)),
        baseline_family=ArchFamily(settings.get("detector.baseline_family",
                                                base.baseline_family.value)),
        window_len=settings.get("detector.window_len", base.window_len),
        stride=settings.get("detector.stride", base.stride),
        latent_dim=settings.get("detector.latent_dim", base.latent_dim),
        lstm_hidden=settings.get("detector.lstm_hidden", base.lstm_hidden),
        conv_channels=settings.get("detector.conv_channels", base.conv_channels),
        attn_dim=settings.get("detector.attn_dim", base.attn_dim),
        n_heads=settings.get("detector.n_heads", base.n_heads),
        feature_dim=settings.get("detector.feature_dim", base.feature_dim),
        holdout_frac=settings.get("detector.holdout_frac", base.holdout_frac),
        holdout_strategy=settings.get("detector.holdout_strategy", base.holdout_strategy),
        fit_restarts=settings.get("detector.fit_restarts", base.fit_restarts),
        threshold_method=settings.get("detector.threshold_method", base.threshold_method),
        threshold_param=settings.get("detector.threshold_param", base.threshold_param),
        search_iters=settings.get("detector.search_iters", base.search_iters),
        search_restarts=settings.get("detector.search_restarts", base.search_restarts),
        search_lr=settings.get("detector.search_lr", base.search_lr),
        search_lr_decay=settings.get("detector.search_lr_decay", base.search_lr_decay),
    )


def train_config_from(settings: Settings, latent_dim: int) -> TrainConfig:
    base = TrainConfig()
    lr_or_none = lambda key: (float(settings.values[key])
                              if key in settings.values else None)
    n_critic = settings.maybe("train.n_critic")
    return TrainConfig(
        gan_mode=settings.get("train.gan_mode", base.gan_mode),
        epochs_adversarial=settings.get("train.epochs_adversarial",
                                        base.epochs_adversarial),
        epochs_encoder=settings.get("train.epochs_encoder", base.epochs_encoder),
        batch_size=settings.get("train.batch_size", base.batch_size),
        n_critic=int(n_critic) if n_critic is not None else None,
        critic_warmup_steps=settings.get("train.critic_warmup_steps",
                                         base.critic_warmup_steps),
        clip_c=settings.get("train.clip_c", base.clip_c),
        latent_dim=latent_dim,
        feature_weight=settings.get("train.feature_weight", base.feature_weight),
        lr_critic=lr_or_none("train.lr_critic"),
        lr_generator=lr_or_none("train.lr_generator"),
        lr_encoder=settings.get("train.lr_encoder", base.lr_encoder),
        lr_baseline=settings.get("train.lr_baseline", base.lr_baseline),
        seed=settings.get("train.seed", base.seed),
    )


def _resolve_out(path: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


# -- subcommands -------------------------------------------------------------------------


def cmd_synth(args) -> int:
    settings = _settings(args)
    out = _resolve_out(args.out)
    cfg = synth_config_from(settings)
    train_frac = settings.get("split.train_frac", 0.6)
    val_frac = settings.get("split.val_frac", 0.2)
    targets = [out / name for name in ("train.csv", "val.csv", "test.csv")]
    existing = [str(t) for t in targets if t.exists()]
    if existing and not args.force:
        raise ConfigurationError(f"refusing to overwrite {existing} (use --force)")
    out.mkdir(parents=True, exist_ok=True)

    table = generate_synthetic(cfg)
    train, val, test = split_series(table, train_frac, val_frac)
    for part, target in zip((train, val, test), targets):
        write_csv(part, target)
    write_resolved_config(out, {"synth": cfg.to_dict(),
                                "split": {"train_frac": train_frac,
                                          "val_frac": val_frac}})
    print(f"wrote {', '.join(t.name for t in targets)} to {out} "
          f"({len(table)} steps, {int(table.labels.sum())} anomalous)")
    return EXIT_OK


def _apply_train_flags(args, overrides: dict[str, str]) -> None:
    if getattr(args, "gan_mode", None):
        overrides["train.gan_mode"] = args.gan_mode
    if getattr(args, "encoder", None):
        overrides["detector.encoder_family"] = args.encoder
    if getattr(args, "generator", None):
        overrides["detector.generator_family"] = args.generator
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs_adversarial"] = str(args.epochs)
        overrides["train.epochs_encoder"] = str(args.epochs)
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    if getattr(args, "baseline", None):
        name = args.baseline.lower()
        if name == "anogan":
            overrides["detector.kind"] = "latent_search"
        elif name in _BASELINE_NAMES:
            overrides["detector.kind"] = "autoencoder"
            overrides["detector.baseline_family"] = _BASELINE_NAMES[name].value
        else:
            raise ConfigurationError(
                f"unknown baseline {args.baseline!r}; choose from "
                f"{sorted(_BASELINE_NAMES)} or anogan")


def cmd_train(args) -> int:
    overrides: dict[str, str] = {}
    _apply_train_flags(args, overrides)
    settings = _settings(args, overrides)
    data_dir = Path(args.data)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)

    det_cfg = detector_config_from(settings)
    train_cfg = train_config_from(settings, det_cfg.latent_dim)
    train_table = ingest_csv(data_dir / "train.csv")

    started = time.perf_counter()
    det = train_detector(train_table, det_cfg, train_cfg)
    det.save(out)
    write_resolved_config(out, {"detector": det_cfg.to_dict(),
                                "train": train_cfg.to_dict()})
    print(f"trained {det.kind} in {time.perf_counter() - started:.1f}s; "
          f"threshold {det.threshold.value:.6g} ({det.threshold.method}); "
          f"checkpoint at {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    det = TrainedDetector.load(args.checkpoint)
    table = ingest_csv(args.input)
    scores, labels = det.score_table(table)
    preds = classify(scores, det.threshold)

    header = ["window_index", "score", "label_pred"]
    if labels is not None:
        header.append("label_true")
    lines = [",".join(header)]
    for i, (s, p) in enumerate(zip(scores, preds)):
        cells = [str(i), repr(float(s)), str(int(p))]
        if labels is not None:
            cells.append(str(int(labels[i])))
        lines.append(",".join(cells))
    (out / "scores.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if labels is not None:
        metrics = compute_metrics(confusion_counts(labels, preds))
        payload = {"dr": metrics.dr, "far": metrics.far, "f1": metrics.f1,
                   "acc": metrics.acc, "flags": metrics.flags,
                   "threshold": det.threshold.to_dict(), "windows": int(len(scores))}
        (out / "metrics.json").write_text(json.dumps(payload, indent=2),
                                          encoding="utf-8")
        print(f"DR {metrics.dr:.4f}  FAR {metrics.far:.4f}  "
              f"F1 {metrics.f1:.4f}  Acc {metrics.acc:.4f}")
    else:
        print(f"scored {len(scores)} windows (no labels present)")
    if args.plot:
        write_score_plot(out / "scores.svg", scores, det.threshold, labels)
    return EXIT_OK


def _read_scores_csv(path: str | Path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    cols = {name: i for i, name in enumerate(header)}
    if "score" not in cols:
        raise DataError(f"{path}: missing 'score' column")
    scores, labels, preds = [], [], []
    for line in lines[1:]:
        cells = line.split(",")
        scores.append(float(cells[cols["score"]]))
        if "label_true" in cols:
            labels.append(int(cells[cols["label_true"]]))
        if "label_pred" in cols:
            preds.append(int(cells[cols["label_pred"]]))
    return (np.array(scores),
            np.array(labels) if labels else None,
            np.array(preds) if preds else None)


def cmd_eval(args) -> int:
    if not args.grid_dir and not args.scores:
        raise ConfigurationError("eval needs --scores or --grid-dir")
    if args.grid_dir:
        rows = load_rows(Path(args.grid_dir) / "rows.jsonl")
        grid_rows = [r for r in rows if not r.model_label]
        base_rows = [r for r in rows if r.model_label]
        if grid_rows:
            print(render_grid_table(grid_rows, [f.label for f in ALL_FAMILIES]))
        if base_rows:
            print(render_baseline_table(base_rows))
        return EXIT_OK

    scores, labels, preds = _read_scores_csv(args.scores)
    if labels is None:
        raise DataError("evaluation needs a label_true column")
    if args.threshold is not None:
        thr = Threshold(args.threshold, "percentile_on_normal",
                        {"source": "flag override"})
        preds = classify(scores, thr)
    elif args.f1_max:
        thr = select_threshold(scores, "f1_max_on_validation", labels=labels)
        preds = classify(scores, thr)
        print(f"f1_max threshold {thr.value:.6g} (diagnostic: uses labels)")
    elif preds is None:
        raise DataError("scores file has no label_pred; pass --threshold or --f1-max")
    metrics = compute_metrics(confusion_counts(labels, preds))
    print(f"DR {metrics.dr:.4f}  FAR {metrics.far:.4f}  "
          f"F1 {metrics.f1:.4f}  Acc {metrics.acc:.4f}"
          + (f"  flags={metrics.flags}" if metrics.flags else ""))
    return EXIT_OK


def cmd_config_reference(args) -> int:
    """Emit the config-key reference, generated from the live defaults."""
    import dataclasses
    from .data import SynthConfig as _SynthConfig
    from .detector import DetectorConfig as _DetectorConfig
    from .training import TrainConfig as _TrainConfig

    lines = ["# Configuration reference",
             "",
             "Flat `section.key = value` files; `--set section.key=value` "
             "overrides any file value.",
             f"Relative --out paths are rooted at ${OUT_ROOT_ENV} when set.",
             ""]
    sections = [
        ("synth", _SynthConfig(), "synthetic dataset generator"),
        ("split", None, "dataset split fractions"),
        ("detector", _DetectorConfig(), "detector kind, families, geometry"),
        ("train", _TrainConfig(), "training budgets and optimizer settings"),
        ("grid", None, "grid plan"),
    ]
    extra = {
        "split": [("train_frac", 0.6), ("val_frac", 0.2)],
        "grid": [("master_seed", 0)],
    }
    for section, obj, title in sections:
        lines.append(f"## {section}.* - {title}")
        if obj is not None:
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif hasattr(value, "value"):
                    value = value.value
                lines.append(f"  {section}.{f.name} = {value}")
        for key, value in extra.get(section, []):
            lines.append(f"  {section}.{key} = {value}")
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        out = _resolve_out(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        print(f"wrote {out}")
    else:
        print(text)
    return EXIT_OK


def cmd_grid(args) -> int:
    settings = _settings(args)
    data_dir = Path(args.data)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)

    det_cfg = detector_config_from(settings)
    train_cfg = train_config_from(settings, det_cfg.latent_dim)
    modes = tuple(args.modes.split(",")) if args.modes else ("wgan", "gan")
    encoders = tuple(args.encoders.split(",")) if args.encoders else tuple(ALL_FAMILIES)
    generators = (tuple(args.generators.split(","))
                  if args.generators else tuple(ALL_FAMILIES))
    plan = GridPlan(modes=modes, encoders=encoders, generators=generators,
                    master_seed=args.seed if args.seed is not None
                    else settings.get("grid.master_seed", 0),
                    seeds_per_cell=args.seeds_per_cell)

    progress = None
    if not args.quiet:
        progress = lambda name: print(f"  finished {name}", flush=True)
    rows = run_grid(plan, data_dir / "train.csv", data_dir / "test.csv",
                    det_cfg, train_cfg, out, workers=args.workers,
                    resume=not args.no_resume, progress=progress)

    baseline_rows = None
    if args.baselines:
        baseline_rows = run_baselines(ingest_csv(data_dir / "train.csv"),
                                      ingest_csv(data_dir / "test.csv"),
                                      det_cfg, train_cfg, out, grid_rows=rows,
                                      resume=not args.no_resume, progress=progress)
    write_reports(out, rows, baseline_rows)
    write_resolved_config(out, {
        "detector": det_cfg.to_dict(), "train": train_cfg.to_dict(),
        "grid": {"modes": modes, "encoders": [e.value if isinstance(e, ArchFamily) else e
                                              for e in plan.encoders],
                 "generators": [g.value if isinstance(g, ArchFamily) else g
                                for g in plan.generators],
                 "master_seed": plan.master_seed,
                 "seeds_per_cell": plan.seeds_per_cell},
    })
    failed = [r for r in rows + (baseline_rows or []) if r.error]
    print(f"grid complete: {len(rows)} rows"
          + (f", {len(failed)} failed" if failed else ""))
    return EXIT_PARTIAL if failed else EXIT_OK


# -- argument parsing ----------------------------------------------------------------------


def _settings(args, extra_overrides: dict[str, str] | None = None) -> Settings:
    file_values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        file_values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    overrides: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set needs section.key=value, got {item!r}")
        key, _, value = item.partition("=")
        if "." not in key:
            raise ConfigurationError(f"--set keys are 'section.name', got {key!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None and args.command == "synth":
        overrides["synth.seed"] = str(args.seed)
    overrides.update(extra_overrides or {})
    return Settings(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wbht",
        description="Semi-supervised black-hole anomaly detection for "
                    "network telemetry windows.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat section.key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, help="seed override")

    p = sub.add_parser("synth", help="generate the synthetic labeled dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one detector and write a checkpoint")
    common(p)
    p.add_argument("--data", required=True, help="directory holding train.csv")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--gan-mode", choices=("gan", "wgan"), dest="gan_mode")
    p.add_argument("--encoder", help="encoder family (fcnn, conv, lstm, convlstm, "
                                     "convmultihead, lstmmultihead)")
    p.add_argument("--generator", help="generator family")
    p.add_argument("--baseline", help="train a baseline instead "
                                      "(ae, conv-ae, lstm-ae, convlstm-ae, "
                                      "convmultihead-ae, lstmmultihead-ae, anogan)")
    p.add_argument("--epochs", type=int, help="epochs for both phases")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a series with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="telemetry csv")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="emit scores.svg")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="metrics from scores, or render grid reports")
    p.add_argument("--scores", help="scores.csv with label_true")
    p.add_argument("--grid-dir", help="grid output directory (renders tables)")
    p.add_argument("--threshold", type=float, help="classify at this threshold")
    p.add_argument("--f1-max", action="store_true", dest="f1_max",
                   help="diagnostic threshold search using labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="train and evaluate the full architecture grid")
    common(p)
    p.add_argument("--data", required=True, help="directory with train.csv/test.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--modes", help="comma list subset of wgan,gan")
    p.add_argument("--encoders", help="comma list of encoder families")
    p.add_argument("--generators", help="comma list of generator families")
    p.add_argument("--seeds-per-cell", type=int, default=1, dest="seeds_per_cell")
    p.add_argument("--baselines", action="store_true",
                   help="also run the baseline battery")
    p.add_argument("--no-resume", action="store_true",
                   help="recompute cells even if row files exist")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
