"""Encoder + pooling + classifier assembled into one MIL model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .decision import sds_surface, shared_surface
from .disentangle import DFAllocation
from .encoder import BatchNormState, EncoderConfig, encode_batch, init_bn_state, init_params
from .numerics import Tensor
from .pooling import PoolingSpec, attention_weights, pool_probs, pool_reps, softmax_weights


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    pooling: PoolingSpec
    n_classes: int
    sds: bool = False
    sds_scaled: bool = False  # ablation: sigma(w.x / d_c) instead of sigma(w.x)

    def __post_init__(self):
        if self.sds and self.pooling.kind != "atp":
            raise ValueError(f"SDS requires ATP pooling, got {self.pooling.name}")

    @property
    def d(self) -> int:
        return self.encoder.out_dim


@dataclass
class ModelOutput:
    clip_probs: Tensor  # (B, C)
    frame_probs: Tensor  # (B, C, T), from the surface used for frame prediction
    reps: Tensor  # (B, T, d)
    weights: Tensor | None  # (B, C, T) contributions for GSP/ATP


@dataclass
class MILModel:
    config: ModelConfig
    params: dict[str, Tensor]
    bn_state: list[BatchNormState] = field(default_factory=list)
    alloc: DFAllocation | None = None

    @classmethod
    def create(cls, config: ModelConfig, seed: int, alloc: DFAllocation | None = None) -> "MILModel":
        rng = np.random.default_rng(seed)
        params = init_params(config.encoder, rng)
        d, c = config.d, config.n_classes
        s = np.sqrt(1.0 / d)
        params["cls.weight"] = Tensor(rng.uniform(-s, s, size=(c, d)), requires_grad=True, name="cls.weight")
        params["cls.bias"] = Tensor(np.zeros(c), requires_grad=True, name="cls.bias")
        if config.pooling.kind == "atp":
            params["att.weight"] = Tensor(rng.uniform(-s, s, size=(c, d)), requires_grad=True, name="att.weight")
        if alloc is not None:
            if alloc.d != d or alloc.n_classes != c:
                raise ValueError(f"allocation is for {alloc.n_classes} classes x {alloc.d} dims, model has {c} x {d}")
            if alloc.mode != "none" and (config.pooling.level, config.pooling.kind) != ("embedding", "atp"):
                raise ValueError("DF is only defined for embedding-level ATP pooling")
        return cls(config, params, init_bn_state(config.encoder), alloc)

    @property
    def uses_df(self) -> bool:
        return self.alloc is not None and self.alloc.mode != "none"

    def _masked(self, name: str) -> Tensor:
        p = self.params[name]
        return p * self.alloc.masks if self.uses_df else p

    def _attention_scale(self):
        if self.uses_df:
            return np.asarray(self.alloc.k, dtype=np.float64)
        return self.config.pooling.scale_for(self.config.d)

    def forward(self, frames, train: bool = False) -> ModelOutput:
        cfg = self.config
        spec = cfg.pooling
        reps = encode_batch(cfg.encoder, self.params, frames, self.bn_state, train)
        v, b = self._masked("cls.weight"), self.params["cls.bias"]
        w = self._masked("att.weight") if spec.kind == "atp" else None
        att = attention_weights(reps, w, self._attention_scale()) if w is not None else None
        shared = shared_surface(reps, v, b)

        if spec.level == "instance":
            clip, weights = pool_probs(spec, shared, att)
        else:
            if spec.kind == "gsp":
                att = softmax_weights(shared, spec.psi)
            h, weights = pool_reps(spec, reps, att)
            clip = nx.sigmoid(nx.sum_(h * v, axis=-1) + b)

        if cfg.sds:
            scale = self._attention_scale() if cfg.sds_scaled else None
            frame = sds_surface(reps, w, scale)
        else:
            frame = shared
        return ModelOutput(clip, frame, reps, weights)

    def update_running_stats(self) -> None:
        for state in self.bn_state:
            state.update()

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}
