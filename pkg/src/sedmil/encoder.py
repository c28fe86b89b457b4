"""Frame-wise feature encoders: identity, time-distributed MLP, and a 3-block CNN.

All encoders map a batch of feature matrices (B, T, F) to high-level frame
representations (B, T, d) without touching the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

ACTIVATIONS = {"relu": nx.relu, "tanh": nx.tanh, "none": lambda x: x}


@dataclass(frozen=True)
class FeatureSequence:
    clip_id: str
    frames: np.ndarray  # (T, F)
    frame_hop: float = 0.02

    def __post_init__(self):
        if self.frames.ndim != 2 or min(self.frames.shape) < 1:
            raise ValueError(f"{self.clip_id}: frames must be a non-empty T x F matrix, got {self.frames.shape}")
        if self.frame_hop <= 0:
            raise ValueError(f"{self.clip_id}: frame_hop must be positive")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class HighLevelSequence:
    clip_id: str
    reps: np.ndarray  # (T, d)

    @property
    def d(self) -> int:
        return self.reps.shape[1]


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "cnn"  # cnn | mlp | identity
    n_bands: int = 64
    channels: tuple[int, ...] = (64, 128, 160)
    freq_pool: tuple[int, ...] = (4, 4, 4)
    kernel: int = 3
    hidden: tuple[int, ...] = (32,)  # mlp layer widths; the last one is d
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in ("cnn", "mlp", "identity"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "cnn":
            if len(self.channels) != len(self.freq_pool):
                raise ValueError("channels and freq_pool must have one entry per block")
            total = int(np.prod(self.freq_pool))
            if self.n_bands % total:
                raise ValueError(
                    f"F={self.n_bands} is not divisible by the product of frequency-pooling "
                    f"factors {'*'.join(map(str, self.freq_pool))}={total}"
                )
        if self.kind == "mlp" and not self.hidden:
            raise ValueError("mlp encoder needs at least one layer")

    @property
    def out_dim(self) -> int:
        if self.kind == "identity":
            return self.n_bands
        if self.kind == "mlp":
            return self.hidden[-1]
        return self.channels[-1] * self.n_bands // int(np.prod(self.freq_pool))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_bands": self.n_bands,
            "channels": list(self.channels),
            "freq_pool": list(self.freq_pool),
            "kernel": self.kernel,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        for key in ("channels", "freq_pool", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (not trainable)."""

    mean: np.ndarray
    var: np.ndarray
    batch_mean: np.ndarray | None = field(default=None, repr=False)
    batch_var: np.ndarray | None = field(default=None, repr=False)

    def update(self, momentum: float = BN_MOMENTUM) -> None:
        if self.batch_mean is None:
            return
        self.mean = momentum * self.mean + (1 - momentum) * self.batch_mean
        self.var = momentum * self.var + (1 - momentum) * self.batch_var
        self.batch_mean = self.batch_var = None


def init_params(config: EncoderConfig, seed: int | np.random.Generator) -> dict[str, Tensor]:
    """Uniform(-s, s) weights with s = sqrt(1/fan_in); zero biases, unit BN scale."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def uniform(shape, fan_in, name):
        s = np.sqrt(1.0 / fan_in)
        params[name] = Tensor(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)

    if config.kind == "mlp":
        fan_in = config.n_bands
        for i, width in enumerate(config.hidden):
            uniform((fan_in, width), fan_in, f"enc.mlp{i}.weight")
            params[f"enc.mlp{i}.bias"] = Tensor(np.zeros(width), requires_grad=True, name=f"enc.mlp{i}.bias")
            fan_in = width
    elif config.kind == "cnn":
        cin = 1
        k = config.kernel
        for i, cout in enumerate(config.channels):
            uniform((cout, cin, k, k), cin * k * k, f"enc.conv{i}.weight")
            params[f"enc.conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True, name=f"enc.conv{i}.bias")
            params[f"enc.bn{i}.gamma"] = Tensor(np.ones(cout), requires_grad=True, name=f"enc.bn{i}.gamma")
            params[f"enc.bn{i}.beta"] = Tensor(np.zeros(cout), requires_grad=True, name=f"enc.bn{i}.beta")
            cin = cout
    return params


def init_bn_state(config: EncoderConfig) -> list[BatchNormState]:
    if config.kind != "cnn":
        return []
    return [BatchNormState(np.zeros(c), np.ones(c)) for c in config.channels]


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState | None, train: bool) -> Tensor:
    """Per-channel normalization of (B, C, H, W) input.

    In training mode batch statistics (biased variance) are used and stashed on
    ``state`` for the trainer to fold into the running averages.
    """
    if train or state is None:
        mu = nx.mean(x, axis=(0, 2, 3), keepdims=True)
        centred = x - mu
        var = nx.mean(centred * centred, axis=(0, 2, 3), keepdims=True)
        if state is not None:
            state.batch_mean = mu.data.reshape(-1).copy()
            state.batch_var = var.data.reshape(-1).copy()
        xhat = centred / nx.power(var + BN_EPS, 0.5)
    else:
        mu = state.mean[None, :, None, None]
        var = state.var[None, :, None, None]
        xhat = (x - mu) / np.sqrt(var + BN_EPS)
    c = gamma.shape[0]
    return xhat * nx.reshape(gamma, (1, c, 1, 1)) + nx.reshape(beta, (1, c, 1, 1))


def _freq_max_pool(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    b, c, t, f = x.shape
    return nx.max_(nx.reshape(x, (b, c, t, f // factor, factor)), axis=-1)


def encode_batch(
    config: EncoderConfig,
    params: dict[str, Tensor],
    frames,
    bn_state: list[BatchNormState] | None = None,
    train: bool = False,
) -> Tensor:
    """Encode a (B, T, F) batch into (B, T, d) representations."""
    x = nx.as_tensor(frames)
    if x.ndim != 3:
        raise nx.ShapeError(f"encoder input must be (B, T, F), got {x.shape}")
    if x.shape[2] != config.n_bands:
        raise nx.ShapeError(f"encoder expects F={config.n_bands} bands, got {x.shape[2]}")
    act = ACTIVATIONS[config.activation]

    if config.kind == "identity":
        return x
    if config.kind == "mlp":
        for i in range(len(config.hidden)):
            x = act(x @ params[f"enc.mlp{i}.weight"] + params[f"enc.mlp{i}.bias"])
        return x

    b, t, _ = x.shape
    h = nx.reshape(x, (b, 1, t, config.n_bands))
    for i, factor in enumerate(config.freq_pool):
        h = nx.conv2d(h, params[f"enc.conv{i}.weight"], params[f"enc.conv{i}.bias"])
        state = bn_state[i] if bn_state else None
        h = batch_norm(h, params[f"enc.bn{i}.gamma"], params[f"enc.bn{i}.beta"], state, train)
        h = _freq_max_pool(h, factor)
        h = act(h)
    # (B, C, T, F') -> (B, T, C*F')
    _, c, _, fr = h.shape
    return nx.reshape(nx.transpose(h, (0, 2, 1, 3)), (b, t, c * fr))


def encode(config: EncoderConfig, params: dict[str, Tensor], seq: FeatureSequence, bn_state=None) -> HighLevelSequence:
    """Inference-mode encoding of a single clip."""
    out = encode_batch(config, params, seq.frames[None], bn_state, train=False)
    return HighLevelSequence(seq.clip_id, out.data[0])
