"""Command-line entry point: gen, train, predict, eval.

Exit codes: 0 success, 2 usage or validation error, 1 internal error. Reports go
to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .data import SyntheticSpec, class_durations, generate, load_dataset, read_classes, read_weak, save_dataset, write_weak
from .disentangle import allocation_table
from .encoder import EncoderConfig
from .metrics import REPORT_CSV_HEADER, CollarConfig, clip_counts, format_report, match_events, report_csv
from .postprocess import SmoothingConfig, read_events, write_events
from .predict import predict_dataset, run_model
from .trainer import TrainConfig, history_csv, load_checkpoint, save_checkpoint, train

log = logging.getLogger("sedmil")

FORMATS = """\
file formats:
  features      first line 'T d', then T lines of d space-separated floats
  classes.txt   one class name per line
  <split>.csv   clip_id,feature_path,labels       (labels joined by ';')
  weak CSV      clip_id,labels
  strong CSV    clip_id,class,onset_s,offset_s    (6-decimal seconds)
  history.csv   epoch,train_loss,val_macro_f1,lr
  checkpoint    'sedmil-checkpoint 1', JSON metadata lines, then tensors as
                'tensor <name> <shape...>' followed by a feature-format matrix
"""

TRAIN_DEFAULTS = {
    "pooling": "eatp",
    "sds": False,
    "df": "none",
    "m": 0.0,
    "lr": 0.0018,
    "batch": 64,
    "seed": 0,
    "max_epochs": 100,
    "patience": 10,
    "encoder": "identity",
    "hidden": "32",
    "channels": "64,128,160",
    "freq_pool": "4,4,4",
    "activation": "relu",
}


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x)
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def parse_beta(text: str) -> float:
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"beta must be a number or fraction like 1/3, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("beta must be positive")
    return value


# gen ------------------------------------------------------------------------------


def cmd_gen(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        raise UsageError(f"spec file not found: {path}")
    spec = SyntheticSpec.from_json(path)
    if args.seed is not None:
        spec.seed = args.seed
    datasets = generate(spec)
    save_dataset(args.out, datasets)
    print(f"wrote {sum(len(d) for d in datasets.values())} clips to {args.out}")
    return 0


# train ------------------------------------------------------------------------------


def resolve_train_options(args) -> dict:
    opts = dict(TRAIN_DEFAULTS)
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        file_opts = json.loads(cfg_path.read_text())
        unknown = set(file_opts) - set(TRAIN_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in config file: {', '.join(sorted(unknown))}")
        opts.update(file_opts)
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def build_train_config(opts: dict, n_bands: int) -> TrainConfig:
    kind = opts["encoder"]
    enc_kwargs = {"kind": kind, "n_bands": n_bands, "activation": opts["activation"]}
    if kind == "mlp":
        enc_kwargs["hidden"] = _ints(opts["hidden"])
    elif kind == "cnn":
        enc_kwargs["channels"] = _ints(opts["channels"])
        enc_kwargs["freq_pool"] = _ints(opts["freq_pool"])
    try:
        return TrainConfig(
            pooling=opts["pooling"],
            sds=bool(opts["sds"]),
            df=opts["df"],
            m=float(opts["m"]),
            lr=float(opts["lr"]),
            batch_size=int(opts["batch"]),
            patience=int(opts["patience"]),
            max_epochs=int(opts["max_epochs"]),
            seed=int(opts["seed"]),
            encoder=EncoderConfig(**enc_kwargs),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    opts = resolve_train_options(args)
    # pooling/SDS/DF combinations are checked before any data is read
    build_train_config({**opts, "encoder": "identity"}, n_bands=1)
    train_set = load_dataset(args.data, "train")
    val_set = load_dataset(args.data, "validation")
    if not train_set.clips:
        raise UsageError("empty training set")
    config = build_train_config(opts, train_set.clips[0].features.shape[1])
    result = train(config, train_set, val_set)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.txt", result)
    (out / "history.csv").write_text(history_csv(result.history))
    if result.model.alloc is not None:
        (out / "allocation.txt").write_text(allocation_table(result.model.alloc, result.class_names) + "\n")
    print(f"best epoch {result.best_epoch}: validation clip macro F1 {result.best_score:.4f}")
    return 0


# predict ------------------------------------------------------------------------------


def cmd_predict(args) -> int:
    result = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data, args.split)
    if ds.class_names != result.class_names:
        raise UsageError(
            f"class list mismatch: checkpoint has {result.class_names}, dataset has {ds.class_names}"
        )
    if args.fixed_window is not None:
        durations = [1.0] * len(ds.class_names)
    else:
        ref = load_dataset(args.data, args.durations_split)
        durations = class_durations(ref.events(), ref.class_names)
    smoothing = SmoothingConfig(durations, beta=args.beta, frame_hop=ds.frame_hop, fixed_window=args.fixed_window)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred = predict_dataset(result.model, ds, smoothing, alpha=args.alpha, gamma=args.gamma)
    write_weak(out / "clips.csv", pred.weak())
    write_events(out / "events.csv", pred.events)
    if args.dump_frames:
        with open(out / "frame_probs.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["clip_id", "class", "frame", "prob"])
            for n, cid in enumerate(pred.clip_ids):
                for c, name in enumerate(pred.class_names):
                    for t, p in enumerate(pred.frame_probs[n, c]):
                        writer.writerow([cid, name, t, repr(float(p))])
    if args.dump_features:
        _, _, reps = run_model(result.model, ds.features(), keep_reps=True) if ds.clips else (None, None, None)
        with open(out / "features.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            d = result.model.config.d
            writer.writerow(["clip_id", "frame"] + [f"x{j}" for j in range(d)])
            for n, clip in enumerate(ds.clips):
                for t, row in enumerate(reps[n]):
                    writer.writerow([clip.clip_id, t] + [repr(float(v)) for v in row])
    print(f"{len(pred.clip_ids)} clips, {len(pred.events)} events, windows {smoothing.windows()}")
    return 0


# eval ------------------------------------------------------------------------------


def cmd_eval(args) -> int:
    classes = read_classes(args.classes)
    known = set(classes)
    ref_events = read_events(args.ref_strong)
    pred_events = read_events(args.pred_events)
    ref_weak = read_weak(args.ref_weak)
    pred_weak = read_weak(args.pred_clips)
    for source, names in (
        (args.ref_strong, {e.label for e in ref_events}),
        (args.pred_events, {e.label for e in pred_events}),
        (args.ref_weak, set().union(*ref_weak.values()) if ref_weak else set()),
        (args.pred_clips, set().union(*pred_weak.values()) if pred_weak else set()),
    ):
        unknown = names - known
        if unknown:
            raise UsageError(f"{source}: unknown class name(s) {', '.join(sorted(unknown))}")
    pred_weak = {cid: pred_weak.get(cid, frozenset()) for cid in ref_weak}
    collars = CollarConfig(args.onset_collar, args.offset_collar, args.offset_collar_rel)
    event_counts = match_events(ref_events, pred_events, collars, classes)
    tag_counts = clip_counts(ref_weak, pred_weak, classes)
    print(format_report("event-based (collared)", event_counts, classes))
    print()
    print(format_report("audio tagging", tag_counts, classes))
    if args.csv:
        Path(args.csv).write_text(
            REPORT_CSV_HEADER + report_csv("event", event_counts, classes) + report_csv("tagging", tag_counts, classes)
        )
    return 0


# parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedmil",
        description="Weakly-supervised MIL sound event detection.",
        epilog=FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset from a JSON spec", epilog=FORMATS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on weak labels", epilog=FORMATS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True, help="dataset directory with train/validation manifests")
    p.add_argument("--out", required=True, help="output directory for checkpoint.txt and history.csv")
    p.add_argument("--config", help="JSON file of defaults; explicit flags take precedence")
    p.add_argument("--pooling", choices=["igmp", "igap", "igsp", "iatp", "egmp", "egap", "egsp", "eatp"])
    p.add_argument("--sds", action="store_true", default=None, help="specialized decision surface (ATP only)")
    p.add_argument("--df", choices=["none", "df1", "dfw"])
    p.add_argument("--m", type=float, help="DF floor factor in [0, 1]")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--encoder", choices=["identity", "mlp", "cnn"])
    p.add_argument("--hidden", help="mlp layer widths, e.g. 64,32")
    p.add_argument("--channels", help="cnn block channels, e.g. 64,128,160")
    p.add_argument("--freq-pool", dest="freq_pool", help="cnn frequency pooling factors, e.g. 4,4,4")
    p.add_argument("--activation", choices=["relu", "tanh", "none"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag clips and detect events", epilog=FORMATS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=parse_beta, default=1 / 3,
                   help="window = mean class duration * beta; e.g. 1/2, 1/3, 1/4, 1/5 (default 1/3)")
    p.add_argument("--fixed-window", dest="fixed_window", type=int, help="odd window in frames for every class")
    p.add_argument("--durations-split", dest="durations_split", default="validation",
                   help="split whose strong labels give the mean class durations")
    p.add_argument("--alpha", type=float, default=0.5, help="clip threshold")
    p.add_argument("--gamma", type=float, default=0.5, help="frame threshold")
    p.add_argument("--dump-frames", dest="dump_frames", action="store_true", help="write frame_probs.csv")
    p.add_argument("--dump-features", dest="dump_features", action="store_true",
                   help="write features.csv with the encoder output of every frame")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against references", epilog=FORMATS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--ref-strong", dest="ref_strong", required=True)
    p.add_argument("--ref-weak", dest="ref_weak", required=True)
    p.add_argument("--pred-events", dest="pred_events", required=True)
    p.add_argument("--pred-clips", dest="pred_clips", required=True)
    p.add_argument("--classes", required=True, help="classes.txt")
    p.add_argument("--onset-collar", dest="onset_collar", type=float, default=0.2)
    p.add_argument("--offset-collar", dest="offset_collar", type=float, default=0.2)
    p.add_argument("--offset-collar-rel", dest="offset_collar_rel", type=float, default=0.2)
    p.add_argument("--csv", help="also write a machine-readable report here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"sedmil {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"sedmil {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
