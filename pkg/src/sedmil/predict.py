"""Inference over a dataset: clip tags, smoothed frame labels, events, and scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .decision import ALPHA, GAMMA
from .metrics import CollarConfig, Counts, clip_f1, f1, macro_f1, match_events
from .model import MILModel
from .postprocess import Event, SmoothingConfig, events_to_frames, frames_to_events, smooth_pipeline


@dataclass
class DatasetPrediction:
    clip_ids: list[str]
    clip_probs: np.ndarray  # (N, C)
    frame_probs: np.ndarray  # (N, C, T)
    frame_labels: np.ndarray  # (N, C, T) after smoothing
    events: list[Event]
    class_names: list[str]
    alpha: float = ALPHA

    def weak(self) -> dict[str, frozenset[str]]:
        return {
            cid: frozenset(self.class_names[j] for j in np.flatnonzero(row >= self.alpha))
            for cid, row in zip(self.clip_ids, self.clip_probs)
        }


def run_model(model: MILModel, frames: np.ndarray, chunk: int = 128, keep_reps: bool = False):
    clip, frame, reps = [], [], []
    for i in range(0, len(frames), chunk):
        out = model.forward(frames[i : i + chunk])
        clip.append(out.clip_probs.data)
        frame.append(out.frame_probs.data)
        if keep_reps:
            reps.append(out.reps.data)
    if not clip:
        return np.zeros((0, model.config.n_classes)), np.zeros((0, model.config.n_classes, 0)), None
    return np.concatenate(clip), np.concatenate(frame), (np.concatenate(reps) if keep_reps else None)


def predict_dataset(
    model: MILModel,
    ds: Dataset,
    smoothing: SmoothingConfig,
    alpha: float = ALPHA,
    gamma: float = GAMMA,
) -> DatasetPrediction:
    names = ds.class_names
    if not ds.clips:
        c = len(names)
        return DatasetPrediction([], np.zeros((0, c)), np.zeros((0, c, 0)), np.zeros((0, c, 0), bool), [], names, alpha)
    clip_probs, frame_probs, _ = run_model(model, ds.features())
    labels = np.zeros(frame_probs.shape, dtype=bool)
    events: list[Event] = []
    for n, clip in enumerate(ds.clips):
        labels[n] = smooth_pipeline(frame_probs[n], clip_probs[n] >= alpha, smoothing, gamma)
        events.extend(frames_to_events(labels[n], ds.frame_hop, clip.clip_id, names))
    return DatasetPrediction([c.clip_id for c in ds.clips], clip_probs, frame_probs, labels, events, names, alpha)


@dataclass
class Scores:
    event_macro_f1: float
    frame_macro_f1: float
    clip_macro_f1: float
    clip_micro_f1: float
    event_class_f1: dict[str, float]
    frame_class_f1: dict[str, float]


def score_prediction(pred: DatasetPrediction, ds: Dataset, collars: CollarConfig = CollarConfig()) -> Scores:

    counts = match_events(ds.events(), pred.events, collars, ds.class_names)
    clip_macro, clip_micro = clip_f1(ds.weak_labels(), pred.weak(), ds.class_names)
    T = pred.frame_labels.shape[-1]
    ref_frames = np.stack([events_to_frames(c.events, T, ds.frame_hop, ds.class_names) for c in ds.clips])
    frame_counts = {}
    for c, name in enumerate(ds.class_names):
        r, p = ref_frames[:, c], pred.frame_labels[:, c]
        frame_counts[name] = Counts(int((r & p).sum()), int((~r & p).sum()), int((r & ~p).sum()))
    return Scores(
        event_macro_f1=macro_f1(counts),
        frame_macro_f1=macro_f1(frame_counts),
        clip_macro_f1=clip_macro,
        clip_micro_f1=clip_micro,
        event_class_f1={name: f1(c.tp, c.fp, c.fn)[2] for name, c in counts.items()},
        frame_class_f1={name: f1(c.tp, c.fp, c.fn)[2] for name, c in frame_counts.items()},
    )
