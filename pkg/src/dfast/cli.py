"""Command-line interface: generate, train, eval, ablate, infer.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import FUSION_ROWS, MODEL_ROWS, AblationSettings, run_ablation, write_runs, write_table
from .audio import read_wav
from .config import load_config
from .errors import ContractError, DFastError
from .fusion import MODALITIES
from .landmarks import load_face, load_pose
from .metrics import REPORT_COLUMNS
from .synthgen import GenParams, gen_dataset
from .training import (
    FeatureSet, ModelConfig, SplitPlan, StrokeModel, TrainConfig, auxiliary_samples, evaluate,
    features_from_samples, frozen_groups, load_features, load_model, predict, prepare_inputs, proxy_pretrain, save_model,
    scaled_counts, subject_split, train,
)


class UsageError(Exception):
    """Bad flag combination or value; exit code 2."""


def _modalities(text):
    mods = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [m for m in mods if m not in MODALITIES]
    if not mods or bad:
        raise argparse.ArgumentTypeError(f"modalities must be a comma list from {','.join(MODALITIES)}")
    return mods


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("seeds must be a comma list of integers") from None


# flag dest -> config key; None-valued flags leave the config untouched
_CONFIG_FLAGS = {
    "subjects": "subjects", "delta": "delta", "sigma": "sigma", "seed": "seed",
    "modalities": "modalities", "fusion": "fusion", "face_preset": "face_preset",
    "voice_preset": "voice_preset", "pose_preset": "pose_preset", "dropout": "dropout",
    "freeze_encoders": "freeze_encoders", "epochs": "epochs", "lr": "lr", "batch_size": "batch_size",
    "pretrain": "pretrain", "pretrain_epochs": "pretrain_epochs", "pretrain_lr": "pretrain_lr",
    "pretrain_subjects": "pretrain_subjects", "seeds": "seeds",
}


def _add_model_flags(p):
    p.add_argument("--modalities", type=_modalities)
    p.add_argument("--fusion", choices=("concat", "sum", "wsum", "attention"))
    p.add_argument("--face-preset", dest="face_preset")
    p.add_argument("--voice-preset", dest="voice_preset")
    p.add_argument("--pose-preset", dest="pose_preset")
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pretrain", choices=("none", "proxy"))
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--pretrain-lr", dest="pretrain_lr", type=float)
    p.add_argument("--pretrain-subjects", dest="pretrain_subjects", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dfast", description="Multimodal F.A.S.T. stroke screening")
    parser.add_argument("--config", help="key = value config file (default: $DFAST_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset and manifest")
    g.add_argument("--subjects", type=int)
    g.add_argument("--delta", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true", help="write into a non-empty directory")

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--manifest", required=True)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--history", help="per-epoch CSV (default: <checkpoint>.history.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--freeze-encoders", dest="freeze_encoders", action="store_const", const=True)
    _add_model_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--report", required=True)
    e.add_argument("--samples", help="per-sample CSV (default: <report stem>_samples.csv)")

    a = sub.add_parser("ablate", help="model and fusion-strategy comparison tables")
    a.add_argument("--manifest", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, help="split seed")
    a.add_argument("--seeds", type=_seeds)
    _add_model_flags(a)

    i = sub.add_parser("infer", help="score one trial")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--face")
    i.add_argument("--pose")
    i.add_argument("--audio")
    return parser


def _resolve(args):
    overrides = {}
    for dest, key in _CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    try:
        return load_config(args.config, overrides)
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _print_config(cfg, out):
    print("resolved configuration:", file=out)
    for line in cfg.lines():
        print(f"  {line}", file=out)


def _model_config(cfg):
    return ModelConfig(cfg.modalities, cfg.fusion, cfg.face_preset, cfg.voice_preset, cfg.pose_preset,
                       cfg.dropout, cfg.freeze_encoders)


def cmd_generate(args, cfg, out):
    params = GenParams(delta=cfg.delta, sigma=cfg.sigma, seed=cfg.seed, n_subjects=cfg.subjects)
    try:
        gen_dataset(params, args.out, force=args.force)
    except FileExistsError as exc:
        raise FileExistsError(f"{exc} (use --force)") from None
    n = params.n_subjects * 2 * params.trials_per_class
    print(f"{params.n_subjects} subjects, {n} samples, {3 * n} files -> {args.out}", file=out)


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def cmd_train(args, cfg, out):
    model_cfg = _model_config(cfg)
    fs = load_features(args.manifest, model_cfg.modalities)
    plan = subject_split(fs.subjects, scaled_counts(len(set(fs.subjects))), cfg.seed)
    parts = {s: fs.subset(plan.indices(s, fs.subjects)) for s in ("train", "val", "test")}
    model = StrokeModel(model_cfg, cfg.seed)
    if cfg.pretrain == "proxy":
        aux = features_from_samples(auxiliary_samples(10_000 + cfg.seed, cfg.pretrain_subjects), model_cfg.modalities)
        pre = proxy_pretrain(model_cfg, aux, cfg.seed, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch_size)
        model.load_pretrained(pre.state)
    print(f"split: {len(plan.train)}/{len(plan.val)}/{len(plan.test)} subjects", file=out)
    result = train(model, parts["train"], parts["val"], TrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed))
    save_model(args.checkpoint, model, split=plan.to_dict(), seed=cfg.seed, pretrain=cfg.pretrain,
               best_epoch=result.best_epoch, config=cfg.lines())
    history = args.history or f"{args.checkpoint}.history.csv"
    frozen = ";".join(frozen_groups(model))
    with open(history, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_loss", "val_accuracy", "val_auc", "val_f1", "frozen_groups"))
        for r in result.history:
            rep = r.val_report
            w.writerow((r.epoch, f"{r.train_loss:.6f}", _fmt(r.val_loss), _fmt(rep and rep.accuracy),
                        _fmt(rep and rep.auc), _fmt(rep and rep.f1), frozen))
    print(f"train loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; best val F1 at epoch "
          f"{result.best_epoch}; frozen groups: {frozen or 'none'}", file=out)
    print(f"checkpoint -> {args.checkpoint}; history -> {history}", file=out)


def cmd_eval(args, cfg, out):
    model, meta = load_model(args.checkpoint)
    fs = load_features(args.manifest, model.cfg.modalities)
    if args.split != "all":
        if "split" not in meta:
            raise ContractError("checkpoint has no stored split; use --split all")
        plan = SplitPlan.from_dict(meta["split"])
        fs = fs.subset(plan.indices(args.split, fs.subjects))
        if len(fs) == 0:
            raise ContractError(f"split {args.split!r} has no samples in this manifest")
    report, preds = evaluate(model, fs)
    with open(args.report, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(report.as_row(Path(args.checkpoint).stem))
    samples = args.samples or str(Path(args.report).with_name(Path(args.report).stem + "_samples.csv"))
    weight_cols = [f"w_{m}" for m in preds.modalities] if preds.weights is not None else []
    with open(samples, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "label", "score", "prediction"] + weight_cols)
        scores = preds.scores
        for k, sid in enumerate(preds.sample_ids):
            row = [sid, int(preds.labels[k]), f"{scores[k]:.6f}", int(preds.predicted[k])]
            if weight_cols:
                row += [f"{x:.6f}" for x in preds.weights[k]]
            w.writerow(row)
    acc = "undefined" if report.accuracy is None else f"{report.accuracy:.4f}"
    print(f"{len(fs)} samples, accuracy {acc}; report -> {args.report}; samples -> {samples}", file=out)


def cmd_ablate(args, cfg, out):
    fs = load_features(args.manifest)
    settings = AblationSettings(
        base=replace(_model_config(cfg), modalities=MODALITIES),
        epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size, seeds=tuple(cfg.seeds),
        split_seed=cfg.seed, pretrain=cfg.pretrain == "proxy", pretrain_epochs=cfg.pretrain_epochs,
        pretrain_lr=cfg.pretrain_lr, pretrain_subjects=cfg.pretrain_subjects,
    )
    result = run_ablation(fs, settings, log=lambda msg: print(msg, file=out))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(out_dir / "table_models.csv", result, MODEL_ROWS, "Model")
    write_table(out_dir / "table_fusion.csv", result, FUSION_ROWS, "Fusion Strategy")
    write_runs(out_dir / "runs.csv", result)
    failed = [n for n, r in result.rows.items() if r.error]
    print(f"tables -> {out_dir}; failed rows: {', '.join(failed) if failed else 'none'}", file=out)


def cmd_infer(args, cfg, out):
    model, _ = load_model(args.checkpoint)
    given = {"face": args.face, "voice": args.audio, "pose": args.pose}
    flags = {"face": "--face", "voice": "--audio", "pose": "--pose"}
    missing = [m for m in model.cfg.modalities if given[m] is None]
    if missing:
        raise UsageError("checkpoint needs " + ", ".join(f"{m} ({flags[m]})" for m in missing))
    raw = {
        "face": load_face(args.face) if "face" in model.cfg.modalities else None,
        "voice": read_wav(args.audio) if "voice" in model.cfg.modalities else None,
        "pose": load_pose(args.pose) if "pose" in model.cfg.modalities else None,
    }
    inputs = {m: v[None] for m, v in prepare_inputs(**raw).items()}
    fs = FeatureSet(["input"], np.array(["input"]), np.zeros(1, dtype=int), np.zeros(1), inputs)
    preds = predict(model, fs)
    prob = float(preds.scores[0])
    print(f"probability: {prob:.6f}", file=out)
    print(f"class: {int(preds.predicted[0])}", file=out)
    if preds.weights is not None:
        print("weights: " + ", ".join(f"{m}={w:.6f}" for m, w in zip(preds.modalities, preds.weights[0])), file=out)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "infer": cmd_infer}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args)
        _print_config(cfg, out)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"dfast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DFastError, OSError) as exc:
        print(f"dfast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
