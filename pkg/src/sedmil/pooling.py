"""Instance-level and embedding-level MIL pooling (GMP, GAP, GSP, ATP).

The batched functions work on every class at once:

* frame probabilities have shape (B, C, T),
* frame representations have shape (B, T, d),
* attention / softmax weights have shape (B, C, T),
* embedding-level contextual representations have shape (B, C, d).

``pool_instance`` and ``pool_embedding`` are single-class conveniences on top.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import Tensor

KINDS = ("gmp", "gap", "gsp", "atp")
LEVELS = ("instance", "embedding")

PSI: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda p: p,
}


@dataclass(frozen=True)
class PoolingSpec:
    level: str = "embedding"
    kind: str = "atp"
    psi: str = "identity"
    scale_d: float | None = None  # None: dimension of x_t

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown pooling level {self.level!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown pooling kind {self.kind!r}")
        if self.psi not in PSI:
            raise ValueError(f"unknown psi {self.psi!r}")
        if self.scale_d is not None and self.scale_d <= 0:
            raise ValueError("scale_d must be positive")

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "PoolingSpec":
        """Parse the short names used on the command line, e.g. ``eatp`` or ``igmp``."""
        levels = {"i": "instance", "e": "embedding"}
        if len(name) != 4 or name[0] not in levels or name[1:] not in KINDS:
            raise ValueError(f"unknown pooling {name!r}; expected one of i/e + {'/'.join(KINDS)}")
        return cls(level=levels[name[0]], kind=name[1:], **kwargs)

    @property
    def name(self) -> str:
        return self.level[0] + self.kind

    def scale_for(self, d: int) -> float:
        return float(self.scale_d) if self.scale_d is not None else float(d)


# batched building blocks ------------------------------------------------------


def attention_logits(reps, weights, scale) -> Tensor:
    """w_c . x_t / scale for every class: (B, T, d), (C, d), scalar or (C,) -> (B, C, T)."""
    reps, weights = nx.as_tensor(reps), nx.as_tensor(weights)
    logits = nx.transpose(reps @ nx.transpose(weights), (0, 2, 1))
    scale = np.asarray(scale, dtype=np.float64)
    if scale.ndim:
        scale = scale[:, None]
    return logits / scale


def attention_weights(reps, weights, scale) -> Tensor:
    """ATP contributions a_ct: softmax over time of scaled detector logits."""
    return nx.softmax(attention_logits(reps, weights, scale), axis=-1)


def softmax_weights(frame_probs, psi: str = "identity") -> Tensor:
    """GSP contributions a_ct: softmax over time of psi(frame probability)."""
    return nx.softmax(PSI[psi](nx.as_tensor(frame_probs)), axis=-1)


def pool_probs(spec: PoolingSpec, frame_probs, weights: Tensor | None = None) -> tuple[Tensor, Tensor | None]:
    """Aggregate (B, C, T) frame probabilities into (B, C) clip probabilities.

    For ATP the caller passes the attention ``weights``; for GSP they are derived
    from the probabilities themselves.
    """
    p = nx.as_tensor(frame_probs)
    if spec.kind == "gmp":
        return nx.max_(p, axis=-1), None
    if spec.kind == "gap":
        return nx.mean(p, axis=-1), None
    if spec.kind == "gsp":
        weights = softmax_weights(p, spec.psi)
    elif weights is None:
        raise ValueError("instance-level ATP needs attention weights computed from the representations")
    return nx.sum_(weights * p, axis=-1), weights


def pool_reps(spec: PoolingSpec, reps, weights: Tensor | None = None, n_classes: int | None = None):
    """Aggregate (B, T, d) representations into (B, C, d) contextual representations.

    GMP and GAP ignore the class, so with ``weights=None`` they return (B, 1, d),
    which broadcasts against per-class parameters. GSP/ATP need (B, C, T) weights.
    """
    x = nx.as_tensor(reps)
    if spec.kind == "gmp":
        return nx.max_(x, axis=1, keepdims=True), None
    if spec.kind == "gap":
        return nx.mean(x, axis=1, keepdims=True), None
    if weights is None:
        raise ValueError(f"embedding-level {spec.kind.upper()} needs contribution weights")
    return weights @ x, weights


# single-class API -------------------------------------------------------------


def _check_probs(frame_probs) -> np.ndarray:
    p = np.asarray(nx.as_tensor(frame_probs).data)
    if p.size == 0 or p.shape[-1] == 0:
        raise ValueError("cannot pool an empty sequence")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValueError("frame probabilities must lie in [0, 1]")
    return p


def pool_instance(spec: PoolingSpec, frame_probs, reps=None, w=None):
    """Pool one class's T frame probabilities into a clip probability.

    Returns ``(clip_prob, weights)``; ``weights`` is the length-T contribution
    row for GSP/ATP and ``None`` otherwise. ATP needs the frame representations
    (T, d) and the detector weights ``w`` (d,).
    """
    if spec.level != "instance":
        raise ValueError("pool_instance needs an instance-level spec")
    _check_probs(frame_probs)
    p = nx.reshape(nx.as_tensor(frame_probs), (1, 1, -1))
    weights = None
    if spec.kind == "atp":
        if reps is None or w is None:
            raise ValueError("instance-level ATP needs frame representations and w_c")
        x = nx.as_tensor(reps)
        w = nx.as_tensor(w)
        if x.shape[0] != p.shape[-1]:
            raise nx.ShapeError(f"{x.shape[0]} representations for {p.shape[-1]} frame probabilities")
        weights = attention_weights(nx.reshape(x, (1,) + x.shape), nx.reshape(w, (1, -1)), spec.scale_for(x.shape[1]))
    pooled, weights = pool_probs(spec, p, weights)
    return nx.reshape(pooled, ()), (None if weights is None else nx.reshape(weights, (-1,)))


def pool_embedding(spec: PoolingSpec, reps, w=None, classifier=None):
    """Pool one class's (T, d) representations into h_c (d,).

    ATP needs ``w`` (d,). GSP needs ``classifier = (v, b)``, the clip-level
    classifier applied framewise to produce the probabilities it weights by.
    """
    if spec.level != "embedding":
        raise ValueError("pool_embedding needs an embedding-level spec")
    x = nx.as_tensor(reps)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("cannot pool an empty sequence")
    xb = nx.reshape(x, (1,) + x.shape)
    weights = None
    if spec.kind == "atp":
        if w is None:
            raise ValueError("embedding-level ATP needs w_c")
        weights = attention_weights(xb, nx.reshape(nx.as_tensor(w), (1, -1)), spec.scale_for(x.shape[1]))
    elif spec.kind == "gsp":
        if classifier is None:
            raise ValueError("embedding-level GSP needs the shared classifier (v_c, b_c)")
        v, b = classifier
        probs = nx.sigmoid(xb @ nx.reshape(nx.as_tensor(v), (-1, 1)) + b)  # (1, T, 1)
        weights = softmax_weights(nx.transpose(probs, (0, 2, 1)), spec.psi)
    h, weights = pool_reps(spec, xb, weights)
    return nx.reshape(h, (-1,)), (None if weights is None else nx.reshape(weights, (-1,)))
