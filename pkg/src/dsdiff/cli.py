"""Command-line entry point: ``dsdiff score | reference | eval | synth``."""

import argparse
import csv
import dataclasses
import functools
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .dataset import FORMATS, PRESETS, SynthSpec, load_dataset, save_dset, synth_generate
from .harness import emit_report, evaluate, format_report
from .kmeans_scores import METRICS, kmeans_score_pipeline
from .probe_nets import PROBE_KINDS, TrainConfig, probe_score
from .records import METHODS, read_reference, read_scores, write_reference, write_scores
from .silhouette import PIPELINES, silhouette_pipeline
from .transform import TRANSFORM_KINDS

DEFAULT_SEED = 42
SEED_ENV = "DIFFICULTY_SEED"


class UsageError(Exception):
    """Invalid invocation; reported with exit code 2."""


def default_seed(environ=os.environ):
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def dataset_id_for(path):
    p = Path(path)
    return p.stem if p.suffix else p.name


# ---------------------------------------------------------------- workers

@functools.lru_cache(maxsize=4)
def _load(path, fmt, num_classes):
    return load_dataset(path, fmt, num_classes)


def run_task(task):
    """Run one ``(dataset, method, variant)`` job; returns ``(record_or_None, message, curve_rows)``.

    Runs in worker processes, so everything it needs travels in ``task``.
    """
    ds = _load(task["dataset"], task["format"], task["num_classes"])
    ds_id = task["dataset_id"] or dataset_id_for(task["dataset"])
    seed, timing = task["seed"], task["timing"]
    method = task["method"]
    if method == "silhouette":
        res = silhouette_pipeline(ds, task["pipeline"], n_max=task["n_max"], seed=seed,
                                  embeddings=task["embeddings"])
        return res.to_record(ds_id, seed, timing), None, None
    if method == "kmeans":
        res = kmeans_score_pipeline(ds, task["transform"], task["metric"], seed=seed,
                                    embeddings=task["embeddings"])
        return res.to_record(ds_id, seed, timing), None, None
    config = TrainConfig(epochs=task["epochs"], seed=seed, augment=task["augment"])
    input_size = task["input_size"] or None
    res = probe_score(ds, task["probe"], task["epochs"], input_size=input_size, config=config, seed=seed)
    rows = res.curve.rows()
    if res.failed:
        return None, f"{ds_id}: probe {res.variant} diverged: {res.curve.message}", rows
    return res.to_record(ds_id, seed, timing), None, rows


def _variants(args):
    if args.method == "silhouette":
        return [{"pipeline": p} for p in args.pipeline]
    if args.method == "kmeans":
        return [{"transform": t, "metric": m} for t, m in itertools.product(args.transform, args.metric)]
    return [{"probe": k} for k in args.probe]


def build_tasks(args):
    if args.dataset_id and len(args.dataset) > 1:
        raise UsageError("--dataset-id applies to a single --dataset")
    base = {"format": args.format, "num_classes": args.num_classes, "dataset_id": args.dataset_id,
            "seed": args.seed, "timing": args.timing, "method": args.method, "n_max": args.n_max,
            "embeddings": args.embeddings, "epochs": args.epochs, "input_size": args.input_size,
            "augment": not args.no_augment, "pipeline": None, "transform": None, "metric": None,
            "probe": None}
    tasks = []
    for path, variant in itertools.product(args.dataset, _variants(args)):
        tasks.append({**base, **variant, "dataset": str(path)})
    for t in tasks:
        if t["pipeline"] == "S6" or t["transform"] == "embedding_file":
            if not t["embeddings"]:
                raise UsageError("S6 / embedding_file needs --embeddings")
    return tasks


def run_tasks(tasks, jobs=1):
    """Execute tasks, in a process pool when ``jobs > 1``; results keep submission order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_guarded(run_task, t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(functools.partial(_guarded, run_task), tasks))


def _guarded(fn, task):
    try:
        return fn(task)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        return None, f"{task['dataset']}: {type(exc).__name__}: {exc}", None


def _write_curve(curve_dir, record_or_task, rows):
    curve_dir = Path(curve_dir)
    curve_dir.mkdir(parents=True, exist_ok=True)
    name = f"{record_or_task.dataset_id}_{record_or_task.variant}".replace("/", "_")
    with open(curve_dir / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "top1", "loss", "seconds"))
        for epoch, top1, loss, sec in rows:
            w.writerow((epoch, repr(float(top1)), repr(float(loss)), repr(float(sec))))


# ---------------------------------------------------------------- commands

def cmd_score(args):
    tasks = build_tasks(args)
    results = run_tasks(tasks, args.jobs)
    records, status = [], 0
    for rec, err, rows in results:
        if err:
            print(f"error: {err}", file=sys.stderr)
            status = 1
            continue
        records.append(rec)
        print(f"{rec.dataset_id}\t{rec.method}\t{rec.variant}\tscore={rec.score:.6f}\t"
              f"wall_time={rec.wall_time:.4f}s")
        if rows and args.curve_dir:
            _write_curve(args.curve_dir, rec, rows)
    if records:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_scores(args.out, records, append=True)
    return status


def cmd_reference(args):
    """Train a probe to (near) convergence and store its final Top-1 as the reference."""
    args.method = "probenet"
    args.probe = [args.probe]
    tasks = build_tasks(args)
    results = run_tasks(tasks, args.jobs)
    ref = read_reference(args.out) if Path(args.out).exists() else {}
    records, status = [], 0
    for rec, err, _ in results:
        if err:
            print(f"error: {err}", file=sys.stderr)
            status = 1
            continue
        ref[rec.dataset_id] = rec.score
        records.append(rec)
        print(f"{rec.dataset_id}\treference top1={rec.score:.6f}\twall_time={rec.wall_time:.4f}s")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_reference(args.out, ref)
    if args.scores and records:
        write_scores(args.scores, records, append=True)
    return status


def _parse_baseline(text):
    if text is None:
        return None
    method, sep, variant = text.partition("/")
    if not sep or method not in METHODS:
        raise UsageError(f"--baseline must look like METHOD/VARIANT, got {text!r}")
    return (method, variant)


def cmd_eval(args):
    baseline = _parse_baseline(args.baseline)
    records = read_scores(args.scores)
    reference = read_reference(args.reference)
    report = evaluate(records, reference, baseline=baseline)
    emit_report(report, args.out)
    print(format_report(report))
    return 0


def _manifest_row(dataset_id, spec):
    return {"dataset_id": dataset_id, **dataclasses.asdict(spec)}


def cmd_synth(args):
    if args.preset:
        items = PRESETS[args.preset](args.seed)
    else:
        spec = SynthSpec(num_classes=args.classes, samples_per_class=args.samples_per_class, side=args.side,
                         separation=args.separation, sigma=args.sigma, flip_rate=args.flip_rate,
                         seed=args.seed, channels=args.channels, shift=args.shift, modes=args.modes)
        items = [(args.id or f"synth_{args.seed}", spec)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["dataset_id"] + [f.name for f in dataclasses.fields(SynthSpec)]
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for dataset_id, spec in items:
            save_dset(synth_generate(spec, dataset_id), out / f"{dataset_id}.dset")
            writer.writerow(_manifest_row(dataset_id, spec))
            print(out / f"{dataset_id}.dset")
    return 0


def read_manifest(path):
    """``[(dataset_id, SynthSpec), ...]`` from a ``manifest.csv`` written by ``synth``."""
    defaults = SynthSpec()
    items = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dataset_id = row.pop("dataset_id")
            kwargs = {k: type(getattr(defaults, k))(v) for k, v in row.items()}
            items.append((dataset_id, SynthSpec(**kwargs)))
    return items


# ---------------------------------------------------------------- parser

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return v


def _add_common(p, seed):
    p.add_argument("--seed", type=int, default=seed,
                   help=f"random seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    p.add_argument("--config", metavar="JSON", help="JSON file whose keys override flag defaults")


def _add_dataset_args(p):
    p.add_argument("--dataset", nargs="+", required=True, metavar="PATH",
                   help="dataset file or directory; several paths fan out into independent runs")
    p.add_argument("--format", choices=FORMATS, help="dataset format (inferred when omitted)")
    p.add_argument("--num-classes", type=_positive_int, help="class count C (default: max label + 1)")
    p.add_argument("--dataset-id", help="id written to score rows (default: file stem)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")
    p.add_argument("--timing", choices=("wall", "model"), default="wall",
                   help="wall: measured seconds; model: modelled operation count / 1e9 (deterministic)")
    p.add_argument("--epochs", type=_positive_int, default=5, help="probe training epochs")
    p.add_argument("--input-size", type=_nonneg_int, default=32,
                   help="probe input side in pixels; 0 keeps the native size")
    p.add_argument("--no-augment", action="store_true", help="disable pad/crop/flip augmentation")
    p.add_argument("--curve-dir", help="write per-epoch probe curves (epoch,top1,loss,seconds) here")


def build_parser(seed=DEFAULT_SEED):
    parser = argparse.ArgumentParser(prog="dsdiff",
                                     description="Estimate image dataset difficulty and evaluate difficulty scores.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("score", help="score datasets with one method; appends rows to scores.csv")
    _add_common(p, seed)
    _add_dataset_args(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--pipeline", nargs="+", choices=sorted(PIPELINES), default=["S3"],
                   help="silhouette pipeline(s)")
    p.add_argument("--transform", nargs="+", choices=TRANSFORM_KINDS, default=["none"],
                   help="k-means input transform(s)")
    p.add_argument("--metric", nargs="+", choices=METRICS, default=["aecm"], help="k-means agreement metric(s)")
    p.add_argument("--probe", nargs="+", choices=PROBE_KINDS, default=["regular"], help="probe net kind(s)")
    p.add_argument("--n-max", type=_positive_int, default=1000, help="silhouette subsample size")
    p.add_argument("--embeddings", help="EMB1 embedding file for S6 / embedding_file")
    p.add_argument("--out", default="scores.csv", help="scores CSV to append to")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("reference", help="train a probe to convergence and record its Top-1 as reference")
    _add_common(p, seed)
    _add_dataset_args(p)
    p.set_defaults(epochs=50)
    p.add_argument("--probe", choices=PROBE_KINDS, default="wide")
    p.add_argument("--out", default="reference.csv", help="reference CSV (rows are merged by dataset_id)")
    p.add_argument("--scores", help="also append the reference runs to this scores CSV")
    p.set_defaults(func=cmd_reference, n_max=1000, embeddings=None)

    p = sub.add_parser("eval", help="regress scores on reference accuracies and write the report")
    _add_common(p, seed)
    p.add_argument("--scores", default="scores.csv")
    p.add_argument("--reference", default="reference.csv")
    p.add_argument("--out", default="report", help="output directory")
    p.add_argument("--baseline", metavar="METHOD/VARIANT",
                   help="speedup baseline group (default: the slowest group)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic datasets (.dset) and a manifest")
    _add_common(p, seed)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--separation", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--shift", type=int, default=0)
    p.add_argument("--modes", type=int, default=1)
    p.add_argument("--id", help="dataset id for an explicit spec")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_config(parser, argv):
    """Reparse ``argv`` with defaults overridden by the ``--config`` JSON (explicit flags still win)."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(overrides, dict):
        raise UsageError("config file must hold a JSON object")
    overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
    unknown = sorted(set(overrides) - set(vars(args)) - {"command"})
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    for action in sub._actions:
        if action.dest in overrides and action.choices is not None:
            values = overrides[action.dest]
            for v in values if isinstance(values, list) else [values]:
                if v not in action.choices:
                    raise UsageError(f"config key {action.dest}: invalid choice {v!r}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        parser = build_parser(default_seed())
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"dsdiff: error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dsdiff: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dsdiff: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
