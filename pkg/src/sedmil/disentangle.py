"""Disentangled-feature subspace allocation from co-occurrence statistics.

Each class c gets the first k_c coordinates of the encoder output, where k_c
grows with the share of its training clips that carry little interference from
other classes. Allocation is done in exact rational arithmetic so the ceiling
is never thrown off by rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx

MODES = ("none", "df1", "dfw")


def compute_r(mode: str, i: int, n_classes: int | None = None) -> Fraction:
    """Weight of clips that contain exactly ``i`` classes."""
    if i < 1 or (n_classes is not None and i > n_classes):
        raise ValueError(f"class count i={i} out of range 1..{n_classes}")
    if mode == "dfw":
        return Fraction(1, i)
    if mode == "df1":
        return Fraction(int(i == 1))
    raise ValueError(f"r_i is only defined for df1/dfw, not {mode!r}")


def count_cooccurrence(weak_labels: Iterable[Iterable[int]], n_classes: int) -> np.ndarray:
    """N[c, i-1] = number of clips with exactly i distinct classes, one of them c."""
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for n, labels in enumerate(weak_labels):
        labels = set(labels)
        if not labels:
            raise ValueError(f"clip #{n} has an empty label set")
        for c in labels:
            if not 0 <= c < n_classes:
                raise ValueError(f"clip #{n}: class index {c} out of range")
            counts[c, len(labels) - 1] += 1
    return counts


@dataclass(frozen=True)
class DFAllocation:
    mode: str
    m: float
    d: int
    k: tuple[int, ...]
    f: tuple[float, ...]
    R: float

    @property
    def n_classes(self) -> int:
        return len(self.k)

    @property
    def masks(self) -> np.ndarray:
        """(C, d) 0/1 matrix selecting the first k_c coordinates of each class."""
        return (np.arange(self.d)[None, :] < np.asarray(self.k)[:, None]).astype(np.float64)

    @property
    def degenerate(self) -> bool:
        return all(kc == self.d for kc in self.k)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "m": self.m, "d": self.d, "k": list(self.k), "f": list(self.f), "R": self.R}

    @classmethod
    def from_dict(cls, d: dict) -> "DFAllocation":
        return cls(d["mode"], float(d["m"]), int(d["d"]), tuple(d["k"]), tuple(d["f"]), float(d["R"]))

    @classmethod
    def none(cls, n_classes: int, d: int) -> "DFAllocation":
        return cls("none", 1.0, d, (d,) * n_classes, (1.0,) * n_classes, 1.0)


def allocate(counts, mode: str, m: float, d: int) -> DFAllocation:
    """Per-class dimensions k_c = ceil(((1 - m) f_c + m) d) with f_c = S_c / max_c S_c."""
    if mode not in MODES:
        raise ValueError(f"unknown DF mode {mode!r}")
    counts = np.asarray(counts)
    n_classes = counts.shape[0]
    if d < 1:
        raise ValueError("d must be at least 1")
    if not 0 <= m <= 1:
        raise ValueError("m must lie in [0, 1]")
    if mode == "none":
        return DFAllocation.none(n_classes, d)
    if counts.ndim != 2 or np.any(counts < 0):
        raise ValueError("co-occurrence counts must be a non-negative C x C matrix")

    r = [compute_r(mode, i) for i in range(1, counts.shape[1] + 1)]
    sums = [sum((ri * int(n) for ri, n in zip(r, row)), Fraction(0)) for row in counts]
    R = max(sums)
    mq = Fraction(str(m))
    if R == 0:
        if mq == 0:
            raise ValueError("every class has zero weighted clip count; set m > 0")
        f = [Fraction(0)] * n_classes
    else:
        f = [s / R for s in sums]
    if mq == 0:
        empty = [c for c, fc in enumerate(f) if fc == 0]
        if empty:
            raise ValueError(
                f"classes {empty} have no clips with weight under {mode}, which gives k_c = 0; set m > 0"
            )
    k = tuple(max(1, math.ceil(((1 - mq) * fc + mq) * d)) for fc in f)
    return DFAllocation(mode, float(m), d, k, tuple(float(x) for x in f), float(R))


def masked_attention(alloc: DFAllocation, reps, c: int, w):
    """Attention pooling of class c restricted to its first k_c coordinates.

    Returns ``(h_c, weights)`` with h_c of length k_c and the softmax scaled by k_c.
    """
    k = alloc.k[c]
    w = nx.as_tensor(w)
    if w.shape != (k,):
        raise nx.ShapeError(f"w_c has length {w.shape[0] if w.ndim else 0}, class {c} subspace has {k}")
    x = nx.as_tensor(reps)
    xc = nx.getitem(x, (slice(None), slice(0, k)))
    weights = nx.softmax((xc @ nx.reshape(w, (k, 1))) / float(k), axis=0)  # (T, 1)
    h = nx.sum_(weights * xc, axis=0)
    return h, nx.reshape(weights, (-1,))


def allocation_table(alloc: DFAllocation, class_names: Sequence[str]) -> str:
    width = max([len("class")] + [len(n) for n in class_names])
    lines = [f"{'class':<{width}}  {'f_c':>8}  {'k_c':>5}"]
    for name, fc, kc in zip(class_names, alloc.f, alloc.k):
        lines.append(f"{name:<{width}}  {fc:>8.4f}  {kc:>5d}")
    lines.append(f"mode={alloc.mode} m={alloc.m:g} d={alloc.d} R={alloc.R:g}")
    return "\n".join(lines)
