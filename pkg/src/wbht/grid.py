"""Grid experiments: every (gan_mode, encoder family, generator family) cell
trained and evaluated with its own derived seed, plus the baseline battery.

Each cell derives its seed from (master_seed, canonical cell index), so a
subset plan, a resumed run, or a parallel run all reproduce exactly the rows
a full serial run would produce.  Finished cells are flushed to one JSON
file each; resuming skips any cell whose file already exists.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .data import SeriesTable, ingest_csv
from .detection import EvalRow, baseline_rows_from_grid, render_baseline_table, render_grid_table
from .detector import DetectorConfig, train_detector
from .errors import ConfigurationError
from .models import ArchFamily, BASELINE_LABELS
from .rng import Rng
from .training import TrainConfig

ALL_FAMILIES = list(ArchFamily)
ALL_MODES = ("wgan", "gan")

BASELINE_ORDER = ["AE", "Conv-AE", "LSTM-AE", "ConvLSTM-AE", "ConvMultiHead-AE",
                  "LSTMMultiHead-AE", "AnoGAN", "f-AnoGAN", "WBHT"]


@dataclass
class GridPlan:
    modes: tuple[str, ...] = ALL_MODES
    encoders: tuple[ArchFamily, ...] = tuple(ALL_FAMILIES)
    generators: tuple[ArchFamily, ...] = tuple(ALL_FAMILIES)
    master_seed: int = 0
    seeds_per_cell: int = 1

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.encoders = tuple(ArchFamily(e) for e in self.encoders)
        self.generators = tuple(ArchFamily(g) for g in self.generators)
        for mode in self.modes:
            if mode not in ALL_MODES:
                raise ConfigurationError(f"unknown gan mode {mode!r}")
        if self.seeds_per_cell < 1:
            raise ConfigurationError("seeds_per_cell must be >= 1")

    def cells(self) -> list["GridCell"]:
        out = []
        for mode in self.modes:
            for efam in self.encoders:
                for gfam in self.generators:
                    for rep in range(self.seeds_per_cell):
                        out.append(GridCell(mode, efam, gfam, rep, self.master_seed))
        return out


@dataclass
class GridCell:
    gan_mode: str
    encoder_family: ArchFamily
    generator_family: ArchFamily
    replicate: int
    master_seed: int

    @property
    def canonical_index(self) -> int:
        """Position in the full enumeration; independent of any plan subset."""
        mode = ALL_MODES.index(self.gan_mode)
        e = ALL_FAMILIES.index(self.encoder_family)
        g = ALL_FAMILIES.index(self.generator_family)
        return (mode * len(ALL_FAMILIES) + e) * len(ALL_FAMILIES) + g

    @property
    def seed(self) -> int:
        return Rng(self.master_seed).derive(self.canonical_index).derive(self.replicate).seed

    @property
    def name(self) -> str:
        tag = f"{self.gan_mode}_{self.encoder_family.value}_{self.generator_family.value}"
        return tag if self.replicate == 0 else f"{tag}_r{self.replicate}"


def run_cell(cell: GridCell, train_table: SeriesTable, test_table: SeriesTable,
             det_cfg: DetectorConfig, train_cfg: TrainConfig) -> EvalRow:
    """Train and evaluate one configuration; exceptions become error rows."""
    started = time.perf_counter()
    cfg = DetectorConfig.from_dict({**det_cfg.to_dict(),
                                    "kind": "gan_detector",
                                    "encoder_family": cell.encoder_family.value,
                                    "generator_family": cell.generator_family.value})
    tcfg = TrainConfig.from_dict({**train_cfg.to_dict(),
                                  "gan_mode": cell.gan_mode,
                                  "n_critic": None, "lr_critic": None,
                                  "lr_generator": None, "generator_ema": None,
                                  "seed": cell.seed})
    try:
        det = train_detector(train_table, cfg, tcfg)
        metrics, _, _ = det.evaluate(test_table)
        return EvalRow(dr=metrics.dr, far=metrics.far, f1=metrics.f1, acc=metrics.acc,
                       seed=cell.seed, runtime=time.perf_counter() - started,
                       gan_mode=cell.gan_mode, encoder=cell.encoder_family.label,
                       generator=cell.generator_family.label, flags=metrics.flags)
    except Exception as exc:   # a failed cell must not sink the grid
        return EvalRow(dr=0.0, far=0.0, f1=0.0, acc=0.0, seed=cell.seed,
                       runtime=time.perf_counter() - started,
                       gan_mode=cell.gan_mode, encoder=cell.encoder_family.label,
                       generator=cell.generator_family.label,
                       flags=["failed"], error=f"{type(exc).__name__}: {exc}")


def _cell_worker(args: tuple) -> tuple[str, str]:
    cell_dict, train_path, test_path, det_dict, train_dict = args
    cell = GridCell(gan_mode=cell_dict["gan_mode"],
                    encoder_family=ArchFamily(cell_dict["encoder_family"]),
                    generator_family=ArchFamily(cell_dict["generator_family"]),
                    replicate=cell_dict["replicate"],
                    master_seed=cell_dict["master_seed"])
    row = run_cell(cell, ingest_csv(train_path), ingest_csv(test_path),
                   DetectorConfig.from_dict(det_dict), TrainConfig.from_dict(train_dict))
    return cell.name, row.to_json()


def _write_atomic(path: Path, payload: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    tmp.replace(path)


def run_grid(plan: GridPlan, train_path: str | Path, test_path: str | Path,
             det_cfg: DetectorConfig, train_cfg: TrainConfig, out_dir: str | Path,
             workers: int = 1, resume: bool = True,
             progress=None) -> list[EvalRow]:
    """Run the plan, flushing one JSON row per finished cell.

    Returns the rows for every planned cell (reloaded ones included), in
    plan order.
    """
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    pending = []
    for cell in plan.cells():
        row_file = cells_dir / f"{cell.name}.json"
        if resume and row_file.exists():
            continue
        pending.append(cell)

    def flush(name: str, row_json: str) -> None:
        _write_atomic(cells_dir / f"{name}.json", row_json + "\n")
        if progress is not None:
            progress(name)

    if workers <= 1:
        for cell in pending:
            row = run_cell(cell, ingest_csv(train_path), ingest_csv(test_path),
                           det_cfg, train_cfg)
            flush(cell.name, row.to_json())
    else:
        tasks = [({"gan_mode": c.gan_mode, "encoder_family": c.encoder_family.value,
                   "generator_family": c.generator_family.value,
                   "replicate": c.replicate, "master_seed": c.master_seed},
                  str(train_path), str(test_path), det_cfg.to_dict(), train_cfg.to_dict())
                 for c in pending]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, row_json in pool.map(_cell_worker, tasks):
                flush(name, row_json)

    rows = []
    for cell in plan.cells():
        row_file = cells_dir / f"{cell.name}.json"
        rows.append(EvalRow.from_json(row_file.read_text(encoding="utf-8")))
    return rows


def run_baselines(train_table: SeriesTable, test_table: SeriesTable,
                  det_cfg: DetectorConfig, train_cfg: TrainConfig, out_dir: str | Path,
                  grid_rows: list[EvalRow] | None = None, resume: bool = True,
                  include: tuple[str, ...] = tuple(BASELINE_ORDER),
                  progress=None) -> list[EvalRow]:
    """The comparison battery: six reconstruction baselines, the latent-search
    detector, and the two named grid configurations.

    WBHT and f-AnoGAN rows are projected from ``grid_rows`` when available,
    otherwise trained directly.
    """
    out_dir = Path(out_dir)
    cells_dir = out_dir / "baselines"
    cells_dir.mkdir(parents=True, exist_ok=True)
    projected = {r.model_label: r for r in baseline_rows_from_grid(grid_rows or [])}

    def run_one(label: str) -> EvalRow:
        started = time.perf_counter()
        base = det_cfg.to_dict()
        seed = Rng(train_cfg.seed).derive(10_000 + BASELINE_ORDER.index(label)).seed
        tdict = {**train_cfg.to_dict(), "seed": seed, "n_critic": None,
                 "lr_critic": None, "lr_generator": None, "generator_ema": None}
        if label in projected:
            return projected[label]
        if label == "WBHT":
            cfg = DetectorConfig.from_dict({**base, "kind": "gan_detector",
                                            "encoder_family": "lstmmultihead",
                                            "generator_family": "convlstm"})
            tcfg = TrainConfig.from_dict({**tdict, "gan_mode": "wgan"})
        elif label == "f-AnoGAN":
            cfg = DetectorConfig.from_dict({**base, "kind": "gan_detector",
                                            "encoder_family": "fcnn",
                                            "generator_family": "convlstm"})
            tcfg = TrainConfig.from_dict({**tdict, "gan_mode": "gan"})
        elif label == "AnoGAN":
            cfg = DetectorConfig.from_dict({**base, "kind": "latent_search",
                                            "generator_family": "convlstm"})
            tcfg = TrainConfig.from_dict({**tdict, "gan_mode": "gan"})
        else:
            family = next(f for f, lbl in BASELINE_LABELS.items() if lbl == label)
            cfg = DetectorConfig.from_dict({**base, "kind": "autoencoder",
                                            "baseline_family": family.value})
            tcfg = TrainConfig.from_dict(tdict)
        try:
            det = train_detector(train_table, cfg, tcfg)
            metrics, _, _ = det.evaluate(test_table)
            return EvalRow(dr=metrics.dr, far=metrics.far, f1=metrics.f1,
                           acc=metrics.acc, seed=seed,
                           runtime=time.perf_counter() - started,
                           model_label=label, flags=metrics.flags)
        except Exception as exc:
            return EvalRow(dr=0.0, far=0.0, f1=0.0, acc=0.0, seed=seed,
                           runtime=time.perf_counter() - started, model_label=label,
                           flags=["failed"], error=f"{type(exc).__name__}: {exc}")

    rows = []
    for label in BASELINE_ORDER:
        if label not in include:
            continue
        row_file = cells_dir / f"{label}.json"
        if resume and row_file.exists():
            rows.append(EvalRow.from_json(row_file.read_text(encoding="utf-8")))
            continue
        row = run_one(label)
        _write_atomic(row_file, row.to_json() + "\n")
        if progress is not None:
            progress(label)
        rows.append(row)
    return rows


def write_reports(out_dir: str | Path, grid_rows: list[EvalRow],
                  baseline_rows: list[EvalRow] | None = None) -> None:
    out_dir = Path(out_dir)
    from .detection import save_rows
    save_rows(grid_rows + (baseline_rows or []), out_dir / "rows.jsonl")
    if grid_rows:
        labels = [f.label for f in ALL_FAMILIES]
        (out_dir / "grid_table.txt").write_text(
            render_grid_table(grid_rows, labels), encoding="utf-8")
    if baseline_rows:
        (out_dir / "baseline_table.txt").write_text(
            render_baseline_table(baseline_rows), encoding="utf-8")
