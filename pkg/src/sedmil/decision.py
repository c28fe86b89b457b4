"""Clip classifier, frame-level decision surfaces and the gated prediction rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .pooling import PoolingSpec

ALPHA = 0.5
GAMMA = 0.5


@dataclass
class ClipPrediction:
    probs: np.ndarray  # (C,) or (B, C)
    alpha: float = ALPHA

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.probs) >= self.alpha


@dataclass
class FramePrediction:
    probs: np.ndarray  # (C, T)
    labels: np.ndarray  # (C, T) bool
    gamma: float
    surface: str  # "shared" | "sds"


def _dim_check(v: np.ndarray, x: np.ndarray) -> None:
    if v.shape[-1] != x.shape[-1]:
        raise nx.ShapeError(f"classifier dimension {v.shape[-1]} != feature dimension {x.shape[-1]}")


def clip_probability(v, b, h) -> float:
    """sigma(v . h + b) for one class."""
    v, h = np.asarray(v, dtype=np.float64), np.asarray(h, dtype=np.float64)
    _dim_check(v, h)
    return float(nx.sigmoid(np.dot(v, h) + b).data)


def frame_probs_shared(v, b, reps) -> np.ndarray:
    """The clip-level classifier of one class applied to each frame of (T, d) reps."""
    v, reps = np.asarray(v, dtype=np.float64), np.asarray(reps, dtype=np.float64)
    _dim_check(v, reps)
    return nx.sigmoid(reps @ v + b).data


def frame_probs_sds(w, reps, spec: PoolingSpec | None = None, scale: float | None = None) -> np.ndarray:
    """Specialized decision surface sigma(w_c . x_t) built from the attention detector.

    No bias and no 1/d scaling unless ``scale`` is given explicitly.
    """
    if w is None or (spec is not None and spec.kind != "atp"):
        raise ValueError("SDS requires attention parameters (ATP pooling)")
    w, reps = np.asarray(w, dtype=np.float64), np.asarray(reps, dtype=np.float64)
    _dim_check(w, reps)
    logits = reps @ w
    if scale is not None:
        logits = logits / scale
    return nx.sigmoid(logits).data


def shared_surface(reps, v, b) -> Tensor:
    """Batched shared surface: (B, T, d), (C, d), (C,) -> (B, C, T)."""
    return nx.transpose(nx.sigmoid(nx.as_tensor(reps) @ nx.transpose(nx.as_tensor(v)) + b), (0, 2, 1))


def sds_surface(reps, w, scale=None) -> Tensor:
    """Batched SDS: (B, T, d), (C, d) -> (B, C, T)."""
    logits = nx.transpose(nx.as_tensor(reps) @ nx.transpose(nx.as_tensor(w)), (0, 2, 1))
    if scale is not None:
        s = np.asarray(scale, dtype=np.float64)
        logits = logits / (s[:, None] if s.ndim else s)
    return nx.sigmoid(logits)


def predict(clip: ClipPrediction, frame_probs, gamma: float = GAMMA, surface: str = "shared") -> FramePrediction:
    """Frame label is 1 iff its probability >= gamma and the clip label of its class is 1."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    probs = np.asarray(frame_probs, dtype=np.float64)
    labels = (probs >= gamma) & clip.labels[..., None]
    return FramePrediction(probs, labels, gamma, surface)
