"""Datasets on disk and in memory, plus a synthetic weak-label generator.

On-disk layout of a dataset directory::

    classes.txt          one class name per line (index = line number)
    dataset.json         {"frame_hop": seconds}
    <split>.csv          clip_id,feature_path,labels   (labels joined by ';')
    <split>_strong.csv   clip_id,class,onset_s,offset_s   (optional)
    features/*.txt       feature matrices, see ``write_features``

Feature files are text: a first line ``T d``, then T lines of d space-separated
floats in shortest round-trip form. Features are precomputed log-mel matrices;
the reference front end uses 64 mel bands at 44.1 kHz, 40 ms frames with 50%
overlap and an FFT size of 2048, giving 500 frames per 10 s clip.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import FeatureSequence
from .postprocess import Event, read_events, write_events

SPLITS = ("train", "validation", "test")
WEAK_HEADER = ["clip_id", "labels"]
MANIFEST_HEADER = ["clip_id", "feature_path", "labels"]


# feature files ------------------------------------------------------------------


def format_matrix(values: np.ndarray) -> str:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    lines = [f"{values.shape[0]} {values.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in values)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str, source: str = "<matrix>") -> np.ndarray:
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{source}:1: empty file, expected header 'T d'")
    header = lines[0].split()
    if len(header) != 2 or not all(h.isdigit() for h in header):
        raise ValueError(f"{source}:1: malformed header {lines[0]!r}, expected 'T d'")
    rows, cols = int(header[0]), int(header[1])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise ValueError(f"{source}: expected {rows} rows, found {len(body)}")
    out = np.empty((rows, cols), dtype=np.float64)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != cols:
            raise ValueError(f"{source}:{i + 2}: expected {cols} values, found {len(parts)}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{source}:{i + 2}: unparsable value in {line!r}") from None
        if not np.all(np.isfinite(out[i])):
            raise ValueError(f"{source}:{i + 2}: non-finite value")
    return out


def write_features(path: str | Path, frames: np.ndarray) -> None:
    Path(path).write_text(format_matrix(frames))


def load_features(path: str | Path, frame_hop: float = 0.02, clip_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    frames = parse_matrix(path.read_text(), str(path))
    if frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValueError(f"{path}: feature matrix must have T >= 1 and d >= 1")
    return FeatureSequence(clip_id or path.stem, frames, frame_hop)


# in-memory datasets ---------------------------------------------------------------


@dataclass
class Clip:
    clip_id: str
    features: np.ndarray  # (T, F)
    labels: frozenset[str]
    events: list[Event] = field(default_factory=list)
    feature_path: str | None = None


@dataclass
class Dataset:
    class_names: list[str]
    clips: list[Clip]
    frame_hop: float = 0.02
    split: str = "train"

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.class_names)}

    def features(self, idx: Sequence[int] | None = None) -> np.ndarray:
        clips = self.clips if idx is None else [self.clips[i] for i in idx]
        shapes = {c.features.shape for c in clips}
        if len(shapes) > 1:
            raise ValueError(f"clips have differing feature shapes {sorted(shapes)}")
        return np.stack([c.features for c in clips]) if clips else np.zeros((0, 0, 0))

    def targets(self, idx: Sequence[int] | None = None) -> np.ndarray:
        clips = self.clips if idx is None else [self.clips[i] for i in idx]
        index = self.class_index
        y = np.zeros((len(clips), len(self.class_names)))
        for n, clip in enumerate(clips):
            for label in clip.labels:
                y[n, index[label]] = 1.0
        return y

    def weak_labels(self) -> dict[str, frozenset[str]]:
        return {c.clip_id: c.labels for c in self.clips}

    def weak_indices(self) -> list[set[int]]:
        index = self.class_index
        return [{index[label] for label in c.labels} for c in self.clips]

    def events(self) -> list[Event]:
        return [e for c in self.clips for e in c.events]

    def validate(self) -> None:
        index = self.class_index
        for clip in self.clips:
            for label in clip.labels:
                if label not in index:
                    raise ValueError(f"{clip.clip_id}: unknown class {label!r}")
            for e in clip.events:
                if e.label not in clip.labels:
                    raise ValueError(f"{clip.clip_id}: strong event class {e.label!r} missing from weak labels")


def class_durations(events: Iterable[Event], class_names: Sequence[str]) -> list[float]:
    """Mean event length (seconds) per class."""
    totals = {c: [0.0, 0] for c in class_names}
    for e in events:
        if e.label not in totals:
            raise ValueError(f"event of unknown class {e.label!r}")
        totals[e.label][0] += e.duration
        totals[e.label][1] += 1
    missing = [c for c, (_, n) in totals.items() if n == 0]
    if missing:
        raise ValueError(f"no strong events for class(es): {', '.join(missing)}")
    return [totals[c][0] / totals[c][1] for c in class_names]


# manifests ------------------------------------------------------------------------


def read_classes(path: str | Path) -> list[str]:
    names = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate class names")
    return names


def write_weak(path: str | Path, weak: dict[str, Iterable[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEAK_HEADER)
        for clip_id in sorted(weak):
            writer.writerow([clip_id, ";".join(sorted(weak[clip_id]))])


def read_weak(path: str | Path) -> dict[str, frozenset[str]]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header != WEAK_HEADER:
            raise ValueError(f"{path}: expected header {','.join(WEAK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            out[row[0]] = frozenset(x for x in row[1].split(";") if x)
    return out


def save_dataset(root: str | Path, datasets: dict[str, Dataset]) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    first = next(iter(datasets.values()))
    (root / "classes.txt").write_text("".join(f"{c}\n" for c in first.class_names))
    (root / "dataset.json").write_text(json.dumps({"frame_hop": first.frame_hop}) + "\n")
    for split, ds in datasets.items():
        with open(root / f"{split}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for clip in ds.clips:
                rel = clip.feature_path or f"features/{clip.clip_id}.txt"
                write_features(root / rel, clip.features)
                writer.writerow([clip.clip_id, rel, ";".join(sorted(clip.labels))])
        write_events(root / f"{split}_strong.csv", sorted(ds.events()))


def load_dataset(root: str | Path, split: str) -> Dataset:
    """Load one split of a manifest directory; features are read eagerly."""
    root = Path(root)
    class_names = read_classes(root / "classes.txt")
    meta_path = root / "dataset.json"
    frame_hop = json.loads(meta_path.read_text())["frame_hop"] if meta_path.exists() else 0.02
    manifest = root / f"{split}.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest for split {split!r} at {manifest}")
    strong_path = root / f"{split}_strong.csv"
    strong: dict[str, list[Event]] = {}
    if strong_path.exists():
        for e in read_events(strong_path):
            strong.setdefault(e.clip_id, []).append(e)
    clips = []
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header != MANIFEST_HEADER:
            raise ValueError(f"{manifest}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{manifest}:{lineno}: expected 3 fields, got {len(row)}")
            clip_id, rel, labels = row
            seq = load_features(root / rel, frame_hop, clip_id)
            clips.append(Clip(clip_id, seq.frames, frozenset(x for x in labels.split(";") if x),
                              sorted(strong.get(clip_id, [])), rel))
    ds = Dataset(class_names, clips, frame_hop, split)
    ds.validate()
    return ds


# synthetic generator ------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic weakly-labelled corpus.

    ``splits`` maps split name -> {"A;B": n_clips}. Every frame carries a
    background draw; each class in a clip's subset adds one event whose frames
    get an extra draw from that class's cluster (overlapping events sum).
    """

    class_names: list[str]
    splits: dict[str, dict[str, int]]
    d: int = 32
    n_frames: int = 500
    frame_hop: float = 0.02
    durations: dict[str, tuple[float, float]] | None = None  # class -> (mean s, jitter s)
    cluster_means: list[list[float]] | None = None
    cluster_spread: float = 0.3
    separation: float = 2.0
    background_mean: list[float] | None = None
    background_spread: float = 0.3
    noise: float = 0.1
    standardize: bool = True  # z-score every split with per-dimension train statistics
    seed: int = 0

    def __post_init__(self):
        c, d = len(self.class_names), self.d
        if c < 1 or d < 1 or self.n_frames < 1 or self.frame_hop <= 0:
            raise ValueError("need at least one class, d >= 1, n_frames >= 1 and frame_hop > 0")
        if self.durations is None:
            self.durations = {name: (1.0, 0.0) for name in self.class_names}
        clip_len = self.n_frames * self.frame_hop
        for name in self.class_names:
            if name not in self.durations:
                raise ValueError(f"no duration given for class {name!r}")
            mean, jitter = self.durations[name]
            if mean - jitter <= 0:
                raise ValueError(f"class {name!r}: event durations must stay positive")
            if mean + jitter > clip_len + 1e-9:
                raise ValueError(
                    f"class {name!r}: event duration up to {mean + jitter:g} s exceeds the clip length {clip_len:g} s"
                )
        if self.cluster_means is None:
            self.cluster_means = default_cluster_means(c, d, self.separation).tolist()
        means = np.asarray(self.cluster_means, dtype=np.float64)
        if means.shape != (c, d):
            raise ValueError(f"cluster_means must be {c} x {d}, got {means.shape}")
        if len({tuple(row) for row in means}) != c:
            raise ValueError("class cluster means must be pairwise distinct")
        if self.background_mean is None:
            self.background_mean = [0.0] * d
        for split, subsets in self.splits.items():
            for key in subsets:
                unknown = set(parse_subset(key)) - set(self.class_names)
                if unknown or not parse_subset(key):
                    raise ValueError(f"split {split!r}: bad class subset {key!r}")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        raw = json.loads(Path(path).read_text())
        if "durations" in raw and raw["durations"] is not None:
            raw["durations"] = {k: tuple(v) for k, v in raw["durations"].items()}
        return cls(**raw)


def parse_subset(key: str) -> tuple[str, ...]:
    return tuple(sorted(x for x in key.split(";") if x))


def default_cluster_means(n_classes: int, d: int, separation: float) -> np.ndarray:
    """Class c raises its own block of coordinates by ``separation``."""
    means = np.zeros((n_classes, d))
    if n_classes <= d:
        for c, block in enumerate(np.array_split(np.arange(d), n_classes)):
            means[c, block] = separation
    else:
        rng = np.random.default_rng(12345)
        means = rng.normal(0, separation, size=(n_classes, d))
    return means


def generate(spec: SyntheticSpec) -> dict[str, Dataset]:
    rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.cluster_means, dtype=np.float64)
    bg = np.asarray(spec.background_mean, dtype=np.float64)
    index = {name: i for i, name in enumerate(spec.class_names)}
    T, hop = spec.n_frames, spec.frame_hop
    out = {}
    for split, subsets in spec.splits.items():
        clips = []
        for key, count in subsets.items():
            subset = parse_subset(key)
            for _ in range(count):
                clip_id = f"{split}_{len(clips):05d}"
                x = bg + spec.background_spread * rng.standard_normal((T, spec.d))
                events = []
                for name in subset:
                    mean, jitter = spec.durations[name]
                    dur = mean + jitter * rng.uniform(-1.0, 1.0)
                    n = min(T, max(1, int(math.floor(dur / hop + 0.5))))
                    start = int(rng.integers(0, T - n + 1))
                    x[start : start + n] += means[index[name]] + spec.cluster_spread * rng.standard_normal((n, spec.d))
                    events.append(Event(clip_id, name, start * hop, (start + n) * hop))
                x += spec.noise * rng.standard_normal((T, spec.d))
                clips.append(Clip(clip_id, x, frozenset(subset), sorted(events)))
        out[split] = Dataset(list(spec.class_names), clips, hop, split)
    if spec.standardize:
        ref = out.get("train") or next(iter(out.values()))
        stacked = np.concatenate([c.features for c in ref.clips]) if ref.clips else np.zeros((1, spec.d))
        mu, sd = stacked.mean(axis=0), stacked.std(axis=0)
        sd[sd == 0] = 1.0
        for ds in out.values():
            for clip in ds.clips:
                clip.features = (clip.features - mu) / sd
    return out
