"""Class-adaptive median smoothing and frame-to-event conversion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decision import GAMMA


@dataclass(frozen=True, order=True)
class Event:
    clip_id: str
    label: str
    onset: float
    offset: float

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ValueError(f"malformed event {self.clip_id}/{self.label}: onset {self.onset} >= offset {self.offset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class SmoothingConfig:
    durations: Sequence[float]
    beta: float = 1 / 3
    frame_hop: float = 0.02
    fixed_window: int | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.frame_hop <= 0:
            raise ValueError("frame_hop must be positive")
        if any(d <= 0 for d in self.durations):
            raise ValueError("class durations must be positive")
        if self.fixed_window is not None and (self.fixed_window < 1 or self.fixed_window % 2 == 0):
            raise ValueError(f"fixed window must be an odd integer >= 1, got {self.fixed_window}")

    def windows(self) -> list[int]:
        if self.fixed_window is not None:
            return [self.fixed_window] * len(self.durations)
        return [window_size(d, self.beta, self.frame_hop) for d in self.durations]


def window_size(duration: float, beta: float, frame_hop: float) -> int:
    """duration * beta converted to frames, rounded half-up, then stepped down to odd."""
    frames = int(math.floor(duration * beta / frame_hop + 0.5))
    if frames % 2 == 0:
        frames -= 1
    return max(frames, 1)


def median_filter(series, window: int) -> np.ndarray:
    """Centred running median; windows are truncated at the edges.

    A truncated window of even length takes the lower of its two middle values.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be an odd integer >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if window == 1 or x.size == 0:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, constant_values=np.nan)
    windows = np.sort(np.lib.stride_tricks.sliding_window_view(padded, window), axis=1)  # NaNs sort last
    valid = window - np.isnan(windows).sum(axis=1)
    return windows[np.arange(x.size), (valid - 1) // 2]


def smooth_pipeline(frame_probs, clip_labels, config: SmoothingConfig, gamma: float = GAMMA) -> np.ndarray:
    """Median-filter probabilities, threshold with clip gating, median-filter the labels again."""
    probs = np.asarray(frame_probs, dtype=np.float64)
    clip_labels = np.asarray(clip_labels, dtype=bool)
    windows = config.windows()
    if len(windows) != probs.shape[0]:
        raise ValueError(f"{len(windows)} class windows for {probs.shape[0]} classes")
    out = np.zeros(probs.shape, dtype=bool)
    for c, win in enumerate(windows):
        if not clip_labels[c]:
            continue
        binary = median_filter(probs[c], win) >= gamma
        out[c] = median_filter(binary.astype(np.float64), win) >= 0.5
    return out


def frames_to_events(binary, frame_hop: float, clip_id: str, class_names: Sequence[str]) -> list[Event]:
    """Maximal runs of positive frames become events; frame t spans [t*hop, (t+1)*hop)."""
    binary = np.asarray(binary, dtype=bool)
    events = []
    for c, row in enumerate(binary):
        padded = np.concatenate([[False], row, [False]]).astype(np.int8)
        edges = np.diff(padded)
        for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            events.append(Event(clip_id, class_names[c], start * frame_hop, stop * frame_hop))
    return sorted(events, key=lambda e: (e.clip_id, e.label, e.onset))


def events_to_frames(events: Iterable[Event], n_frames: int, frame_hop: float, class_names: Sequence[str]) -> np.ndarray:
    """Inverse of ``frames_to_events`` for grid-aligned events: frame t is on if its
    start lies in [onset, offset) after rounding both boundaries to the grid."""
    index = {name: i for i, name in enumerate(class_names)}
    out = np.zeros((len(class_names), n_frames), dtype=bool)
    for e in events:
        lo = max(0, int(math.floor(e.onset / frame_hop + 0.5)))
        hi = min(n_frames, int(math.floor(e.offset / frame_hop + 0.5)))
        out[index[e.label], lo:hi] = True
    return out


STRONG_HEADER = ["clip_id", "class", "onset_s", "offset_s"]


def write_events(path: str | Path, events: Iterable[Event]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STRONG_HEADER)
        for e in events:
            writer.writerow([e.clip_id, e.label, f"{e.onset:.6f}", f"{e.offset:.6f}"])


def read_events(path: str | Path) -> list[Event]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header != STRONG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(STRONG_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                events.append(Event(row[0], row[1], float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return events
