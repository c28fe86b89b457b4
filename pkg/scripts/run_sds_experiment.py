"""Shared decision surface vs. SDS with embedding-level ATP over several seeds.

    python scripts/run_sds_experiment.py --seeds 0 1 2 3 4
"""

import argparse
import time

import numpy as np

from sedmil.experiments import run_sds_comparison


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    rows = []
    t0 = time.perf_counter()
    for seed in args.seeds:
        shared, sds = run_sds_comparison(seed)
        rows.append((shared, sds))
        print(
            f"seed {seed}: event F1 {shared.event_macro_f1:.3f} -> {sds.event_macro_f1:.3f}   "
            f"frame F1 {shared.frame_macro_f1:.3f} -> {sds.frame_macro_f1:.3f}   "
            f"clip F1 {shared.clip_macro_f1:.3f} / {sds.clip_macro_f1:.3f}   "
            f"best epochs {shared.best_epoch} / {sds.best_epoch}",
            flush=True,
        )
    for attr in ("event_macro_f1", "frame_macro_f1", "clip_macro_f1"):
        a = np.median([getattr(r[0], attr) for r in rows])
        b = np.median([getattr(r[1], attr) for r in rows])
        print(f"median {attr}: eATP {a:.3f}  eATP-SDS {b:.3f}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
