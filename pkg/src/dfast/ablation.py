"""Model and fusion-strategy comparisons over a shared split and seed list."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .fusion import MODALITIES
from .metrics import MetricReport
from .training import (
    FeatureSet, ModelConfig, StrokeModel, TrainConfig, auxiliary_samples, evaluate,
    features_from_samples, proxy_pretrain, scaled_counts, subject_split, train,
)

TABLE_METRICS = ("accuracy", "auc", "f1", "sensitivity", "specificity")
TABLE_HEADERS = ("Accuracy", "AUC", "F1-score", "Sensitivity", "Specificity")


@dataclass(frozen=True)
class AblationRow:
    name: str
    modalities: tuple
    fusion: str = "attention"
    frozen: bool = False


MODEL_ROWS = (
    AblationRow("Pose only", ("pose",)),
    AblationRow("Voice only", ("voice",)),
    AblationRow("Face only", ("face",)),
    AblationRow("Face + Pose", ("face", "pose")),
    AblationRow("Voice + Pose", ("voice", "pose")),
    AblationRow("Face + Voice", ("face", "voice")),
    AblationRow("Fusion (Frozen weight)", MODALITIES, frozen=True),
    AblationRow("Fusion (Fine-tuned)", MODALITIES),
)
FUSION_ROWS = (
    AblationRow("Concat", MODALITIES, "concat"),
    AblationRow("Sum", MODALITIES, "sum"),
    AblationRow("Learnable Weighted Sum", MODALITIES, "wsum"),
    AblationRow("Attention Fusion", MODALITIES, "attention"),
)


@dataclass(frozen=True)
class AblationSettings:
    base: ModelConfig = ModelConfig()
    epochs: int = 300
    lr: float = 1e-4
    batch_size: int = 8
    seeds: tuple = (0, 1, 2, 3, 4)
    split_seed: int = 0
    pretrain: bool = True
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-4
    pretrain_subjects: int = 16


@dataclass
class SeedRun:
    seed: int
    report: MetricReport
    initial_loss: float
    final_loss: float
    best_epoch: int | None


@dataclass
class RowResult:
    row: AblationRow
    runs: list = field(default_factory=list)
    error: str | None = None

    def median(self, metric):
        values = [getattr(r.report, metric) for r in self.runs]
        values = [float(v) for v in values if v is not None]
        return float(np.median(values)) if values else None


@dataclass
class AblationResult:
    split: dict
    rows: dict  # row name -> RowResult, in table order


def _row_config(settings, row):
    return replace(settings.base, modalities=row.modalities, fusion=row.fusion, freeze_encoders=row.frozen)


def _key(settings, row):
    return (row.modalities, row.fusion, row.frozen)


def run_ablation(fs: FeatureSet, settings: AblationSettings, rows=MODEL_ROWS + FUSION_ROWS,
                 log=None, batch_hook=None) -> AblationResult:
    """Train and test every row for every seed.

    All rows share one subject split and one seed list. Per seed the encoders
    are proxy-pretrained once and every row starts from those weights. Rows
    with an identical configuration are trained once. A failing row is
    recorded and the remaining rows still run.
    """
    plan = subject_split(fs.subjects, scaled_counts(len(set(fs.subjects))), settings.split_seed)
    parts = {s: fs.subset(plan.indices(s, fs.subjects)) for s in ("train", "val", "test")}
    aux = None
    if settings.pretrain:
        aux = features_from_samples(auxiliary_samples(10_000 + settings.split_seed, settings.pretrain_subjects))
    results = {row.name: RowResult(row) for row in rows}
    done = {}
    for seed in settings.seeds:
        pretrained = None
        if aux is not None:
            pretrained = proxy_pretrain(settings.base, aux, seed, settings.pretrain_epochs, settings.pretrain_lr,
                                        settings.batch_size).state
        for row in rows:
            res = results[row.name]
            if res.error is not None:
                continue
            key = (_key(settings, row), seed)
            if key in done:
                res.runs.append(done[key])
                continue
            try:
                model = StrokeModel(_row_config(settings, row), seed)
                if pretrained is not None:
                    model.load_pretrained(pretrained)
                hook = None if batch_hook is None else (lambda e, b, f, _r=row, _s=seed: batch_hook(_r, _s, e, b, f))
                tr = train(model, parts["train"], parts["val"],
                           TrainConfig(settings.epochs, settings.lr, settings.batch_size, seed), batch_hook=hook)
                report, _ = evaluate(model, parts["test"])
            except Exception as exc:  # recorded per row, see docstring
                res.error = f"{type(exc).__name__}: {exc}"
                if log:
                    log(f"{row.name}: failed ({res.error})")
                continue
            run = SeedRun(seed, report, tr.initial_loss, tr.final_loss, tr.best_epoch)
            done[key] = run
            res.runs.append(run)
            if log:
                log(f"{row.name} seed {seed}: accuracy {report.accuracy:.4f}")
    return AblationResult(plan.to_dict(), results)


def _fmt(v):
    return "undefined" if v is None else f"{v:.4f}"


def write_table(path, result: AblationResult, rows, first_header):
    """One line per row: median over seeds of each metric."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow((first_header,) + TABLE_HEADERS)
        for row in rows:
            res = result.rows[row.name]
            if res.error is not None:
                w.writerow([row.name] + ["failed"] * len(TABLE_METRICS))
            else:
                w.writerow([row.name] + [_fmt(res.median(m)) for m in TABLE_METRICS])


def write_runs(path, result: AblationResult):
    """Per-seed detail: metrics, initial/final train loss, best validation epoch."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("row", "seed") + TABLE_METRICS + ("initial_loss", "final_loss", "best_epoch", "error"))
        for name, res in result.rows.items():
            for r in res.runs:
                w.writerow([name, r.seed] + [_fmt(getattr(r.report, m)) for m in TABLE_METRICS]
                           + [f"{r.initial_loss:.6f}", f"{r.final_loss:.6f}", r.best_epoch, ""])
            if res.error is not None:
                w.writerow([name, ""] + [""] * len(TABLE_METRICS) + ["", "", "", res.error])
