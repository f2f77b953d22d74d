"""Model assembly, optimization, subject-independent splits and checkpoints."""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import read_wav, voice_grid
from .encoders import (
    EMBED_DIM, FACE_GRID, VOICE_GRID, PatchTransformer, PoseMixer, Projector,
    encoder_out_dim, mixer_config, patchify, pose_tokens, transformer_config,
)
from .errors import ContractError, DimensionError, FormatError, NumericError, SchemaError
from .fusion import MODALITIES, STRATEGIES, Fusion, FusionInput
from .landmarks import face_grid, load_face, load_pose, pose_frames
from .metrics import MetricReport, summary
from .nn import LayerNorm, Linear, Module
from .rng import make_rng
from .tensor import Tensor

# Stream keys for make_rng(seed, key, ...); fixed so that e.g. the face encoder
# initialization does not depend on which other modalities are present.
_INIT_KEYS = {"encoder.face": 1, "encoder.voice": 2, "encoder.pose": 3, "projector": 4, "fusion": 5, "head": 6}
_SHUFFLE_KEY = 11
_DROPOUT_KEY = 12
_SPLIT_KEY = 13
_PRETRAIN_KEY = 14


class TrainingDiverged(NumericError):
    """Raised when the loss becomes non-finite; names epoch and batch."""


# -- configuration -----------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    modalities: tuple = MODALITIES
    fusion: str = "attention"
    face_preset: str = "base"
    voice_preset: str = "tiny"
    pose_preset: str = "default"
    dropout: float = 0.1
    freeze_encoders: bool = False
    use_pos_embed: bool = True

    def __post_init__(self):
        mods = tuple(self.modalities)
        if not mods:
            raise ContractError("a model needs at least one modality")
        unknown = [m for m in mods if m not in MODALITIES]
        if unknown:
            raise ContractError(f"unknown modalities {unknown}; choose from {MODALITIES}")
        if len(set(mods)) != len(mods):
            raise ContractError(f"duplicate modalities in {mods}")
        object.__setattr__(self, "modalities", tuple(m for m in MODALITIES if m in mods))
        if self.fusion not in STRATEGIES:
            raise ContractError(f"unknown fusion strategy {self.fusion!r}; choose from {STRATEGIES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self):
        return EMBED_DIM * len(self.modalities) if self.fusion == "concat" else EMBED_DIM

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-4
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be at least 1")
        if not self.lr > 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")


# -- model -------------------------------------------------------------


class Branches(Module):
    """Named per-modality sub-modules (``face``, ``voice``, ``pose``)."""

    def __init__(self, **modules):
        for name, mod in modules.items():
            setattr(self, name, mod)

    def __getitem__(self, name):
        return getattr(self, name)


class ClassifierHead(Module):
    """LayerNorm → GELU → dropout → Linear to a single logit."""

    def __init__(self, dim, rate, rng, dtype=np.float32):
        self.norm = LayerNorm(dim, dtype=dtype)
        self.fc = Linear(dim, 1, rng, dtype=dtype)
        self.rate = rate

    def forward(self, x, rng=None):
        h = T.dropout(T.gelu(self.norm(x)), self.rate, self.training, rng)
        return self.fc(h).reshape(x.shape[0])


def build_encoder(modality, cfg: ModelConfig, rng, dtype=np.float32):
    if modality == "face":
        return PatchTransformer(transformer_config(cfg.face_preset, FACE_GRID, cfg.use_pos_embed), rng, dtype)
    if modality == "voice":
        return PatchTransformer(transformer_config(cfg.voice_preset, VOICE_GRID, cfg.use_pos_embed), rng, dtype)
    return PoseMixer(mixer_config(cfg.pose_preset), rng, dtype)


class StrokeModel(Module):
    """encode → project → fuse → classify, for any subset of modalities."""

    def __init__(self, cfg: ModelConfig, seed, dtype=np.float32):
        self.cfg = cfg
        encoders, projectors = {}, {}
        for m in cfg.modalities:
            encoders[m] = build_encoder(m, cfg, make_rng(seed, _INIT_KEYS[f"encoder.{m}"]), dtype)
            prng = make_rng(seed, _INIT_KEYS["projector"], MODALITIES.index(m))
            projectors[m] = Projector(encoder_out_dim(encoders[m]), prng, dtype=dtype)
        self.encoder = Branches(**encoders)
        self.projector = Branches(**projectors)
        self.fusion = Fusion(cfg.fusion, make_rng(seed, _INIT_KEYS["fusion"]), dtype=dtype)
        self.head = ClassifierHead(cfg.head_dim, cfg.dropout, make_rng(seed, _INIT_KEYS["head"]), dtype=dtype)
        if cfg.freeze_encoders:
            self.encoder.requires_grad_(False)

    @property
    def dtype(self):
        return self.head.fc.weight.dtype

    def encode(self, inputs):
        """Raw encoder outputs per modality, shape (B, encoder width)."""
        missing = [m for m in self.cfg.modalities if inputs.get(m) is None]
        if missing:
            raise ContractError(f"missing input for modalities {missing}")
        return {m: self.encoder[m](inputs[m]) for m in self.cfg.modalities}

    def classify(self, encoded, rng=None):
        """Projection, fusion and head on top of encoder outputs."""
        emb = {}
        for m in self.cfg.modalities:
            e = encoded[m]
            if not isinstance(e, Tensor):
                e = Tensor(e, dtype=self.dtype)
            emb[m] = self.projector[m](e)
        fused = self.fusion(FusionInput(emb))
        return self.head(fused.fused, rng), fused

    def forward(self, inputs, rng=None):
        return self.classify(self.encode(inputs), rng)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        """Copy arrays into the parameters; shape mismatches name the tensor."""
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name in state and tuple(np.shape(state[name])) != p.shape:
                raise DimensionError(
                    f"tensor {name!r}: checkpoint shape {tuple(np.shape(state[name]))}, model shape {p.shape}"
                )
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise ContractError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if name in state:
                p.data[...] = state[name]

    def load_pretrained(self, state):
        """Load encoder and projector tensors for this model's modalities."""
        prefixes = tuple(f"{g}.{m}." for g in ("encoder", "projector") for m in self.cfg.modalities)
        self.load_state_dict({k: v for k, v in state.items() if k.startswith(prefixes)}, strict=False)


def build_model(cfg: ModelConfig, seed, dtype=np.float32) -> StrokeModel:
    return StrokeModel(cfg, seed, dtype)


def parameter_group(name):
    """Group of a parameter name: ``encoder.face``, ``projector``, ``fusion`` or ``head``."""
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] == "encoder" else parts[0]


def parameter_groups(model: Module):
    """Group name → {"names": [...], "trainable": bool}."""
    groups = {}
    for name, p in model.named_parameters():
        g = groups.setdefault(parameter_group(name), {"names": [], "trainable": False})
        g["names"].append(name)
        g["trainable"] = g["trainable"] or p.requires_grad
    return groups


def frozen_groups(model: Module):
    return sorted(g for g, info in parameter_groups(model).items() if not info["trainable"])


# -- features ----------------------------------------------------------


@dataclass
class FeatureSet:
    """Encoder-ready inputs for a list of samples, stacked along axis 0."""

    sample_ids: list
    subjects: np.ndarray
    labels: np.ndarray
    deltas: np.ndarray
    inputs: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sample_ids)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return FeatureSet(
            [self.sample_ids[i] for i in idx],
            self.subjects[idx],
            self.labels[idx],
            self.deltas[idx],
            {m: a[idx] for m, a in self.inputs.items()},
        )

    def batch(self, idx, modalities):
        return {m: self.inputs[m][idx] for m in modalities}


def face_input(face):
    return patchify(face_grid(face)).astype(np.float32)


def voice_input(wave):
    return patchify(voice_grid(wave)).astype(np.float32)


def pose_input(pose):
    return pose_tokens(pose_frames(pose)).astype(np.float32)


_PREPARE = {"face": face_input, "voice": voice_input, "pose": pose_input}


def prepare_inputs(face=None, voice=None, pose=None):
    """Single-sample encoder inputs for whichever modalities are given."""
    raw = {"face": face, "voice": voice, "pose": pose}
    return {m: _PREPARE[m](v) for m, v in raw.items() if v is not None}


def features_from_samples(samples, modalities=MODALITIES):
    """FeatureSet from in-memory synthetic samples."""
    inputs = {m: [] for m in modalities}
    for s in samples:
        prepared = prepare_inputs(**{m: getattr(s, m) for m in modalities})
        for m in modalities:
            inputs[m].append(prepared[m])
    return FeatureSet(
        [s.sample_id for s in samples],
        np.array([s.subject_id for s in samples]),
        np.array([s.label for s in samples], dtype=int),
        np.array([s.delta for s in samples], dtype=np.float64),
        {m: np.stack(v) for m, v in inputs.items()},
    )


MANIFEST_FIELDS = ("subject_id", "trial_id", "label", "face_path", "pose_path", "audio_path", "delta", "affected_side")


def read_manifest(path):
    """Parse ``manifest.jsonl``; every record must carry all manifest fields."""
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = [k for k in MANIFEST_FIELDS if k not in rec]
            if missing:
                raise SchemaError(f"{path}:{lineno}: missing fields {missing}")
            if rec["label"] not in (0, 1):
                raise SchemaError(f"{path}:{lineno}: label must be 0 or 1")
            records.append(rec)
    if not records:
        raise SchemaError(f"{path}: manifest is empty")
    return records


def load_features(manifest_path, modalities=MODALITIES):
    """Read the files listed in a manifest and prepare encoder inputs."""
    root = Path(manifest_path).parent
    records = read_manifest(manifest_path)
    loaders = {
        "face": lambda r: face_input(load_face(root / r["face_path"])),
        "voice": lambda r: voice_input(read_wav(root / r["audio_path"])),
        "pose": lambda r: pose_input(load_pose(root / r["pose_path"])),
    }
    inputs = {m: np.stack([loaders[m](r) for r in records]) for m in modalities}
    return FeatureSet(
        [f"{r['subject_id']}_t{r['trial_id']}" for r in records],
        np.array([r["subject_id"] for r in records]),
        np.array([r["label"] for r in records], dtype=int),
        np.array([r["delta"] for r in records], dtype=np.float64),
        inputs,
    )


# -- optimizer ---------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` maps names to trainable tensors, ``grads`` names to arrays; a
    missing gradient counts as zero. Only the tensors in ``params`` change.
    """
    if state is None:
        raise ContractError("adam_step needs an optimizer state")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        if name not in state.m:
            raise ContractError(f"no optimizer state for {name!r}")
        g = grads.get(name)
        m, v = state.m[name], state.v[name]
        if g is None:
            m *= beta1
            v *= beta2
        else:
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
        if not m.any():
            continue
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.data.dtype)
    return state


class Adam:
    """Adam over the trainable parameters of a module."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = {k: p for k, p in named_params if p.requires_grad}
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros(self.params)

    def step(self):
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def bce_loss(logits, labels):
    """Mean numerically stable binary cross-entropy on logits."""
    if not isinstance(logits, Tensor):
        logits = Tensor(np.atleast_1d(np.asarray(logits, dtype=np.float64)))
    return T.bce_with_logits(logits, labels)


# -- splits ------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise ContractError("split subject sets overlap")

    def of(self, split):
        if split not in ("train", "val", "test"):
            raise ContractError(f"unknown split {split!r}")
        return getattr(self, split)

    def indices(self, split, subjects):
        chosen = set(self.of(split))
        return np.array([i for i, s in enumerate(subjects) if s in chosen], dtype=int)

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def scaled_counts(n_subjects):
    """(train, val, test) from the 29/4/4 proportions, held-out sets at least 1."""
    if n_subjects < 3:
        raise ContractError(f"need at least 3 subjects to split, got {n_subjects}")
    held = max(1, int(math.floor(n_subjects * 4 / 37 + 0.5)))
    return n_subjects - 2 * held, held, held


def subject_split(subjects, counts, seed) -> SplitPlan:
    """Shuffle the distinct subject ids with ``seed`` and cut by ``counts``."""
    ids = sorted(set(subjects))
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 0:
        raise ContractError(f"counts must be three non-negative integers, got {counts}")
    if sum(counts) != len(ids):
        raise ContractError(f"counts {counts} sum to {sum(counts)}, but there are {len(ids)} subjects")
    order = make_rng(seed, _SPLIT_KEY).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    a, b = counts[0], counts[0] + counts[1]
    return SplitPlan(tuple(sorted(shuffled[:a])), tuple(sorted(shuffled[a:b])), tuple(sorted(shuffled[b:])))


# -- training ----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_report: MetricReport | None = None


@dataclass
class TrainResult:
    history: list
    best_epoch: int | None
    initial_loss: float
    final_loss: float
    frozen_groups: list


@dataclass
class Predictions:
    sample_ids: list
    labels: np.ndarray
    logits: np.ndarray
    weights: np.ndarray | None
    modalities: tuple

    @property
    def scores(self):
        e = np.exp(-np.abs(self.logits))
        return np.where(self.logits >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    @property
    def predicted(self):
        return (self.logits >= 0).astype(int)


class _EncodedView:
    """Encoder outputs computed once, for training on frozen encoders."""

    def __init__(self, model, fs, batch_size=32):
        self.arrays = {}
        with T.no_grad():
            for start in range(0, len(fs), batch_size):
                idx = np.arange(start, min(start + batch_size, len(fs)))
                out = model.encode(fs.batch(idx, model.cfg.modalities))
                for m, t in out.items():
                    self.arrays.setdefault(m, []).append(t.data)
        self.arrays = {m: np.concatenate(v) for m, v in self.arrays.items()}

    def batch(self, idx):
        return {m: a[idx] for m, a in self.arrays.items()}


def _logits(model, fs, idx, cache, rng=None):
    if cache is not None:
        return model.classify(cache.batch(idx), rng)
    return model(fs.batch(idx, model.cfg.modalities), rng)


def predict(model, fs, batch_size=32, cache=None) -> Predictions:
    """Eval-mode logits (and fusion weights) for every sample of ``fs``."""
    was_training = model.training
    model.eval()
    logits, weights = [], []
    try:
        with T.no_grad():
            for start in range(0, len(fs), batch_size):
                idx = np.arange(start, min(start + batch_size, len(fs)))
                z, fused = _logits(model, fs, idx, cache)
                logits.append(z.data.astype(np.float64))
                if fused.weights is not None:
                    w = fused.weights
                    weights.append(np.broadcast_to(w, (len(idx), w.shape[-1])).astype(np.float64))
    finally:
        model.train(was_training)
    return Predictions(
        list(fs.sample_ids), fs.labels.copy(), np.concatenate(logits),
        np.concatenate(weights) if weights else None, model.cfg.modalities,
    )


def evaluate(model, fs, cache=None):
    """(MetricReport, Predictions) on ``fs``."""
    preds = predict(model, fs, cache=cache)
    return summary(preds.scores, preds.labels), preds


def _mean_loss(model, fs, cache):
    preds = predict(model, fs, cache=cache)
    return float(bce_loss(preds.logits, preds.labels).data)


def train(model: StrokeModel, train_set: FeatureSet, val_set: FeatureSet | None = None,
          cfg: TrainConfig = TrainConfig(), batch_hook=None, log=None) -> TrainResult:
    """Mini-batch Adam on BCE; records per-epoch losses and validation metrics.

    ``batch_hook(epoch, batch, fusion_output)`` is called after every forward
    pass. With frozen encoders the encoder outputs are computed once and reused.
    """
    if len(train_set) == 0:
        raise ContractError("training split is empty")
    frozen = model.cfg.freeze_encoders or not any(p.requires_grad for p in model.encoder.parameters())
    train_cache = _EncodedView(model, train_set) if frozen else None
    val_cache = _EncodedView(model, val_set) if frozen and val_set is not None and len(val_set) else None
    opt = Adam(model.named_parameters(), cfg.lr)
    shuffle_rng = make_rng(cfg.seed, _SHUFFLE_KEY)
    dropout_rng = make_rng(cfg.seed, _DROPOUT_KEY)
    initial = _mean_loss(model, train_set, train_cache)
    history, best_epoch, best_f1 = [], None, -1.0
    n = len(train_set)
    for epoch in range(cfg.epochs):
        model.train()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                z, fused = _logits(model, train_set, idx, train_cache, dropout_rng)
                loss = bce_loss(z, train_set.labels[idx])
                if not np.isfinite(loss.data):
                    raise NumericError("loss is not finite")
                opt.zero_grad()
                T.backward(loss)
            except NumericError as exc:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}, batch {b}: {exc}") from None
            if batch_hook is not None:
                batch_hook(epoch, b, fused)
            opt.step()
            total += float(loss.data) * len(idx)
        record = EpochRecord(epoch, total / n)
        if val_set is not None and len(val_set):
            report, preds = evaluate(model, val_set, cache=val_cache)
            record.val_report = report
            record.val_loss = float(bce_loss(preds.logits, preds.labels).data)
            f1 = -1.0 if report.f1 is None else report.f1
            if f1 > best_f1:
                best_f1, best_epoch = f1, epoch
        history.append(record)
        if log is not None:
            log(record)
    model.eval()
    final = _mean_loss(model, train_set, train_cache)
    return TrainResult(history, best_epoch, initial, final, frozen_groups(model))


# -- proxy pretraining -------------------------------------------------


@dataclass
class PretrainResult:
    state: dict
    val_mse: dict
    val_var: float


def proxy_pretrain(cfg: ModelConfig, aux_train: FeatureSet, seed, epochs=20, lr=1e-4, batch_size=8,
                   aux_val: FeatureSet | None = None) -> PretrainResult:
    """Pretrain each encoder (with its projector) to regress the severity delta.

    Each branch gets a temporary linear regression head that is discarded
    afterwards. Returns the encoder and projector tensors of every modality in
    ``cfg`` plus held-out MSE per modality when ``aux_val`` is given.
    """
    cfg = replace(cfg, freeze_encoders=False)
    model = StrokeModel(cfg, seed)
    state, val_mse = {}, {}
    targets = aux_train.deltas.astype(np.float32)
    for m in cfg.modalities:
        rng = make_rng(seed, _PRETRAIN_KEY, MODALITIES.index(m))
        reg = Linear(EMBED_DIM, 1, rng)
        enc, proj = model.encoder[m], model.projector[m]
        named = [(f"encoder.{m}.{k}", p) for k, p in enc.named_parameters()]
        named += [(f"projector.{m}.{k}", p) for k, p in proj.named_parameters()]
        named += [(f"reg.{k}", p) for k, p in reg.named_parameters()]
        opt = Adam(named, lr)

        def regress(x):
            return reg(proj(enc(x))).reshape(x.shape[0])

        n = len(aux_train)
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                loss = T.mse_loss(regress(aux_train.inputs[m][idx]), targets[idx])
                opt.zero_grad()
                T.backward(loss)
                opt.step()
        if aux_val is not None and len(aux_val):
            with T.no_grad():
                pred = np.concatenate([
                    regress(aux_val.inputs[m][s : s + 32]).data for s in range(0, len(aux_val), 32)
                ])
            val_mse[m] = float(np.mean((pred - aux_val.deltas) ** 2))
        for k, p in named:
            if not k.startswith("reg."):
                state[k] = p.data.copy()
    val_var = float(np.var(aux_val.deltas)) if aux_val is not None and len(aux_val) else float("nan")
    return PretrainResult(state, val_mse, val_var)


def auxiliary_samples(seed, n_subjects=16, sigma=1.0):
    """Synthetic subjects with severities spread over [0.1, 1] for pretraining."""
    from .synthgen import GenParams, generate_samples

    base = make_rng(seed, _PRETRAIN_KEY).uniform(0.1, 1.0, size=n_subjects)
    params = GenParams(delta=0.5, sigma=sigma, seed=seed, n_subjects=n_subjects)
    return generate_samples(params, base_deltas=base)


# -- checkpoints -------------------------------------------------------

CHECKPOINT_MAGIC = b"DFST"
CHECKPOINT_VERSION = 1
META_TENSOR = "__meta__"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


def save_checkpoint(path, state, meta=None):
    """Write named tensors (float32) plus optional JSON metadata atomically.

    Metadata is stored as a reserved u8 tensor named ``__meta__``.
    """
    items = [(k, np.ascontiguousarray(v, dtype="<f4"), 0) for k, v in state.items()]
    if meta is not None:
        blob = json.dumps(meta, sort_keys=True).encode()
        items.append((META_TENSOR, np.frombuffer(blob, dtype="u1"), 1))
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(items))]
    for name, arr, code in items:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContractError(f"tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path):
    """(state dict, metadata or None); the whole file is parsed before returning."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: missing DFST magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    state, meta = {}, None

    def need(n):
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        need(nlen + 2)
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPES:
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        need(nbytes)
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
        pos += nbytes
        if name == META_TENSOR:
            meta = json.loads(arr.tobytes().decode())
        elif name in state:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        else:
            state[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return state, meta


def load_model(path):
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    state, meta = load_checkpoint(path)
    if meta is None or "model" not in meta:
        raise FormatError(f"{path}: checkpoint carries no model configuration")
    model = StrokeModel(ModelConfig.from_dict(meta["model"]), seed=0)
    model.load_state_dict(state)
    return model, meta


def save_model(path, model, **meta):
    meta = {"model": model.cfg.to_dict(), "frozen_groups": frozen_groups(model), **meta}
    save_checkpoint(path, model.state_dict(), meta)
