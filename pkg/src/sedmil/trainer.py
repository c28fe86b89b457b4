"""Weak-label training: BCE on clip probabilities, Adam with step decay, early stopping."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Dataset, format_matrix, parse_matrix
from .decision import ALPHA
from .disentangle import DFAllocation, allocate, count_cooccurrence
from .encoder import BatchNormState, EncoderConfig
from .metrics import clip_f1
from .model import MILModel, ModelConfig
from .numerics import Tensor
from .pooling import PoolingSpec

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_MAGIC = "sedmil-checkpoint 1"


@dataclass
class TrainConfig:
    pooling: str = "eatp"
    sds: bool = False
    df: str = "none"
    m: float = 0.0
    lr: float = 0.0018
    batch_size: int = 64
    lr_decay: float = 0.8
    decay_every: int = 10
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(kind="identity", n_bands=32))
    scale_d: float | None = None
    sds_scaled: bool = False

    def __post_init__(self):
        spec = self.pooling_spec  # validates the name
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.sds and spec.kind != "atp":
            raise ValueError(f"SDS requires ATP pooling, got {self.pooling}")
        if self.df not in ("none", "df1", "dfw"):
            raise ValueError(f"unknown DF mode {self.df!r}")
        if self.df != "none" and self.pooling != "eatp":
            raise ValueError(f"DF requires embedding-level ATP pooling (eatp), got {self.pooling}")
        if not 0 <= self.m <= 1:
            raise ValueError("m must lie in [0, 1]")

    @property
    def pooling_spec(self) -> PoolingSpec:
        return PoolingSpec.from_name(self.pooling, scale_d=self.scale_d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        return cls(**d)


def bce_loss(clip_probs: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = nx.clip(clip_probs, PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(targets, dtype=np.float64)
    return -nx.mean(y * nx.log(p) + (1 - y) * nx.log(1 - p))


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise nx.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EarlyStopping:
    """Tracks the best score; stops after ``patience`` epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.since_improvement = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.since_improvement = score, epoch, 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch: multiplied by ``lr_decay`` after every ``decay_every`` epochs."""
    return config.lr * config.lr_decay ** ((epoch - 1) // config.decay_every)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    lr: float


@dataclass
class TrainResult:
    model: MILModel
    history: list[EpochRecord]
    best_epoch: int
    best_score: float
    class_names: list[str]
    config: TrainConfig


def predict_clip_probs(model: MILModel, frames: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = [model.forward(frames[i : i + chunk]).clip_probs.data for i in range(0, len(frames), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.config.n_classes))


def clip_macro_f1(model: MILModel, ds: Dataset, alpha: float = ALPHA) -> float:
    probs = predict_clip_probs(model, ds.features())
    pred = {c.clip_id: frozenset(ds.class_names[j] for j in np.flatnonzero(row >= alpha)) for c, row in zip(ds.clips, probs)}
    return clip_f1(ds.weak_labels(), pred, ds.class_names)[0]


def build_model(config: TrainConfig, train_set: Dataset) -> MILModel:
    n_classes = len(train_set.class_names)
    model_cfg = ModelConfig(config.encoder, config.pooling_spec, n_classes, config.sds, config.sds_scaled)
    alloc = None
    if config.df != "none":
        counts = count_cooccurrence(train_set.weak_indices(), n_classes)
        alloc = allocate(counts, config.df, config.m, model_cfg.d)
        if alloc.degenerate:
            log.warning("DF degenerates to general feature: every class keeps all %d dimensions", model_cfg.d)
    return MILModel.create(model_cfg, config.seed, alloc)


def _snapshot(model: MILModel):
    return (
        {k: p.data.copy() for k, p in model.params.items()},
        [(s.mean.copy(), s.var.copy()) for s in model.bn_state],
    )


def _restore(model: MILModel, snap) -> None:
    params, bn = snap
    for k, arr in params.items():
        model.params[k].data = arr.copy()
    for state, (mean, var) in zip(model.bn_state, bn):
        state.mean, state.var = mean.copy(), var.copy()


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset, evaluate=None) -> TrainResult:
    """Train on weak labels and return the model snapshot with the best validation clip macro F1.

    ``evaluate(model, epoch) -> float`` overrides the validation score (used in tests).
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.class_names != val_set.class_names:
        raise ValueError("train and validation class lists differ")
    model = build_model(config, train_set)
    X, Y = train_set.features(), train_set.targets()
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(config.lr)
    stopper = EarlyStopping(config.patience)
    history: list[EpochRecord] = []
    best = _snapshot(model)
    params = model.trainable()

    for epoch in range(1, config.max_epochs + 1):
        opt.lr = lr_at(config, epoch)
        order = rng.permutation(len(X))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            for p in params.values():
                p.grad = None
            out = model.forward(X[idx], train=True)
            loss = bce_loss(out.clip_probs, Y[idx])
            loss.backward()
            opt.step(params, {k: p.grad for k, p in params.items() if p.grad is not None})
            model.update_running_stats()
            total += float(loss.data) * len(idx)
            seen += len(idx)
        score = evaluate(model, epoch) if evaluate else clip_macro_f1(model, val_set)
        history.append(EpochRecord(epoch, total / seen, float(score), opt.lr))
        log.info("epoch %d loss %.5f val macro F1 %.4f lr %.6g", epoch, total / seen, score, opt.lr)
        if stopper.update(epoch, score):
            best = _snapshot(model)
        if stopper.should_stop:
            break

    _restore(model, best)
    return TrainResult(model, history, stopper.best_epoch, stopper.best, list(train_set.class_names), config)


# files ----------------------------------------------------------------------------


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_macro_f1", "lr"])
    for r in history:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_macro_f1), repr(r.lr)])
    return buf.getvalue()


def save_checkpoint(path: str | Path, result: TrainResult) -> None:
    """Text container: a magic line, JSON metadata lines, then one section per tensor.

    Each tensor section is ``tensor <name> <shape...>`` followed by the tensor
    flattened to 2-D in the feature-file matrix format.
    """
    model = result.model
    lines = [CHECKPOINT_MAGIC]
    lines.append("config " + json.dumps(result.config.to_dict(), sort_keys=True))
    lines.append("classes " + json.dumps(result.class_names))
    lines.append("allocation " + json.dumps(model.alloc.to_dict() if model.alloc else None, sort_keys=True))
    lines.append("best " + json.dumps({"epoch": result.best_epoch, "val_macro_f1": result.best_score}))
    tensors = {k: p.data for k, p in model.params.items()}
    for i, state in enumerate(model.bn_state):
        tensors[f"enc.bn{i}.running_mean"] = state.mean
        tensors[f"enc.bn{i}.running_var"] = state.var
    for name in sorted(tensors):
        arr = tensors[name]
        lines.append("tensor " + " ".join([name] + [str(s) for s in arr.shape]))
        flat = arr.reshape(arr.shape[0] if arr.ndim else 1, -1)
        lines.append(format_matrix(flat).rstrip("\n"))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> TrainResult:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (expected first line {CHECKPOINT_MAGIC!r})")
    meta, i = {}, 1
    while i < len(text) and not text[i].startswith("tensor "):
        key, _, payload = text[i].partition(" ")
        meta[key] = json.loads(payload)
        i += 1
    tensors = {}
    while i < len(text):
        parts = text[i].split()
        name, shape = parts[1], tuple(int(s) for s in parts[2:])
        rows = int(text[i + 1].split()[0])
        block = "\n".join(text[i + 1 : i + 2 + rows])
        tensors[name] = parse_matrix(block, f"{path}:{name}").reshape(shape)
        i += 2 + rows
    config = TrainConfig.from_dict(meta["config"])
    classes = meta["classes"]
    alloc = DFAllocation.from_dict(meta["allocation"]) if meta.get("allocation") else None
    model_cfg = ModelConfig(config.encoder, config.pooling_spec, len(classes), config.sds, config.sds_scaled)
    model = MILModel.create(model_cfg, config.seed, alloc)
    for name, p in model.params.items():
        if name not in tensors:
            raise ValueError(f"{path}: missing tensor {name}")
        p.data = tensors[name]
    for j, state in enumerate(model.bn_state):
        state.mean = tensors[f"enc.bn{j}.running_mean"]
        state.var = tensors[f"enc.bn{j}.running_var"]
    best = meta.get("best", {})
    return TrainResult(model, [], best.get("epoch", 0), best.get("val_macro_f1", 0.0), classes, config)
