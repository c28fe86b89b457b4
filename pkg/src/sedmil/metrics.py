"""Event-based and clip-level F1 with collar matching."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .postprocess import Event


@dataclass(frozen=True)
class CollarConfig:
    onset_collar: float = 0.2
    offset_collar_abs: float = 0.2
    offset_collar_rel: float = 0.2

    def __post_init__(self):
        if min(self.onset_collar, self.offset_collar_abs, self.offset_collar_rel) < 0:
            raise ValueError("collars must be non-negative")

    def offset_tolerance(self, ref: Event) -> float:
        return max(self.offset_collar_abs, self.offset_collar_rel * ref.duration)

    def matches(self, ref: Event, pred: Event) -> bool:
        return (
            abs(pred.onset - ref.onset) <= self.onset_collar
            and abs(pred.offset - ref.offset) <= self.offset_tolerance(ref)
        )


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


def _group(events: Iterable[Event]) -> dict[tuple[str, str], list[Event]]:
    groups: dict[tuple[str, str], list[Event]] = defaultdict(list)
    for e in events:
        if not e.onset < e.offset:
            raise ValueError(f"malformed event {e}")
        groups[(e.clip_id, e.label)].append(e)
    for items in groups.values():
        items.sort(key=lambda e: (e.onset, e.offset))
    return groups


def greedy_match(refs: Sequence[Event], preds: Sequence[Event], collars: CollarConfig) -> int:
    """Number of one-to-one matches, each reference (in onset order) taking the
    first unmatched prediction (in onset order) within its collars."""
    used = [False] * len(preds)
    tp = 0
    for ref in refs:
        for j, pred in enumerate(preds):
            if not used[j] and collars.matches(ref, pred):
                used[j] = True
                tp += 1
                break
    return tp


def match_events(
    refs: Iterable[Event],
    preds: Iterable[Event],
    collars: CollarConfig = CollarConfig(),
    classes: Sequence[str] | None = None,
) -> dict[str, Counts]:
    """Per-class tp/fp/fn from greedy matching inside each (clip, class) group."""
    ref_groups, pred_groups = _group(refs), _group(preds)
    counts: dict[str, Counts] = {c: Counts() for c in classes or ()}
    for key in sorted(set(ref_groups) | set(pred_groups)):
        r, p = ref_groups.get(key, []), pred_groups.get(key, [])
        tp = greedy_match(r, p, collars)
        counts.setdefault(key[1], Counts())
        counts[key[1]] += Counts(tp, len(p) - tp, len(r) - tp)
    return counts


def f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def macro_f1(counts: Mapping[str, Counts]) -> float:
    """Unweighted mean of per-class F1 over classes seen in refs or preds."""
    scores = [f1(c.tp, c.fp, c.fn)[2] for c in counts.values() if c.tp + c.fp + c.fn]
    return sum(scores) / len(scores) if scores else 0.0


def micro_f1(counts: Mapping[str, Counts]) -> float:
    total = Counts()
    for c in counts.values():
        total += c
    return f1(total.tp, total.fp, total.fn)[2]


def clip_counts(
    ref_weak: Mapping[str, Iterable[str]],
    pred_weak: Mapping[str, Iterable[str]],
    classes: Sequence[str] | None = None,
) -> dict[str, Counts]:
    if set(ref_weak) != set(pred_weak):
        missing = sorted(set(ref_weak) ^ set(pred_weak))
        raise ValueError(f"reference and prediction clip ids differ: {missing[:5]}")
    counts: dict[str, Counts] = {c: Counts() for c in classes or ()}
    for clip in sorted(ref_weak):
        r, p = set(ref_weak[clip]), set(pred_weak[clip])
        for c in r | p:
            counts.setdefault(c, Counts())
            counts[c] += Counts(int(c in r and c in p), int(c in p and c not in r), int(c in r and c not in p))
    return counts


def clip_f1(ref_weak, pred_weak, classes=None) -> tuple[float, float]:
    """(macro F1, micro F1) of clip-level tagging."""
    counts = clip_counts(ref_weak, pred_weak, classes)
    return macro_f1(counts), micro_f1(counts)


def report_rows(counts: Mapping[str, Counts], classes: Sequence[str] | None = None):
    names = list(classes) if classes is not None else sorted(counts)
    rows = []
    for name in names:
        c = counts.get(name, Counts())
        p, r, f = f1(c.tp, c.fp, c.fn)
        rows.append((name, p, r, f, c.tp, c.fp, c.fn))
    return rows


def format_report(title: str, counts: Mapping[str, Counts], classes: Sequence[str] | None = None) -> str:
    rows = report_rows(counts, classes)
    width = max([len("macro")] + [len(r[0]) for r in rows])
    out = [title, f"{'class':<{width}}  {'P':>6}  {'R':>6}  {'F1':>6}  {'tp':>5}  {'fp':>5}  {'fn':>5}"]
    for name, p, r, f, tp, fp, fn in rows:
        out.append(f"{name:<{width}}  {p:6.3f}  {r:6.3f}  {f:6.3f}  {tp:5d}  {fp:5d}  {fn:5d}")
    out.append(f"{'macro':<{width}}  {'':>6}  {'':>6}  {macro_f1(counts):6.3f}")
    return "\n".join(out)


def report_csv(task: str, counts: Mapping[str, Counts], classes: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for name, p, r, f, tp, fp, fn in report_rows(counts, classes):
        writer.writerow([task, name, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}", tp, fp, fn])
    writer.writerow([task, "macro", "", "", f"{macro_f1(counts):.6f}", "", "", ""])
    return buf.getvalue()


REPORT_CSV_HEADER = "task,class,precision,recall,f1,tp,fp,fn\n"
