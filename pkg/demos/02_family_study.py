"""Regress difficulty scores on converged reference accuracies.

Trains every member of the synthetic family twice (a regular probe whose
epoch-1/5/10/50 accuracies are the early scores, and a wide probe whose
final accuracy is the reference), adds k-means and silhouette scores, and
writes scores.csv, report.csv and one scatter SVG per score variant.

    python3 demos/02_family_study.py --out family_report          # ~15 min
    python3 demos/02_family_study.py --out quick --epochs 10 --samples 500
"""

import argparse
import dataclasses

from dsdiff import (PRESETS, ScoreRecord, TrainConfig, build_probe, early_stopping_curve, emit_report,
                    evaluate, format_report, kmeans_score_pipeline, silhouette_pipeline, synth_generate,
                    train_probe)

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--out", default="family_report")
parser.add_argument("--epochs", type=int, default=50, help="reference (and longest probe) epochs")
parser.add_argument("--samples", type=int, default=None, help="override samples per class")
parser.add_argument("--seed", type=int, default=42)
args = parser.parse_args()

config = TrainConfig(epochs=args.epochs, seed=args.seed)
checkpoints = sorted({e for e in (1, 5, 10, args.epochs) if e <= args.epochs})
records, reference = [], {}
for dataset_id, spec in PRESETS["family"](args.seed):
    if args.samples:
        spec = dataclasses.replace(spec, samples_per_class=args.samples)
    ds = synth_generate(spec, dataset_id)
    regular = train_probe(build_probe("regular", ds.image_shape, ds.num_classes), ds, config)
    wide = train_probe(build_probe("wide", ds.image_shape, ds.num_classes), ds, config)
    reference[dataset_id] = wide.final_top1
    records.append(ScoreRecord(dataset_id, "probenet", f"wide@{args.epochs}", wide.final_top1,
                               wide.total_seconds, args.seed))
    for e in checkpoints:
        records.append(ScoreRecord(dataset_id, "probenet", f"regular@{e}", regular.top1[e - 1],
                                   sum(regular.seconds[:e]), args.seed))
    for transform in ("none", "pca10"):
        res = kmeans_score_pipeline(ds, transform, "aecm", seed=args.seed)
        for metric in ("aecm", "ami"):
            records.append(ScoreRecord(dataset_id, "kmeans", f"{transform}+{metric}", res.scores.get(metric),
                                       res.wall_time, args.seed))
    for pipeline in ("S1", "S3", "S5"):
        records.append(silhouette_pipeline(ds, pipeline, seed=args.seed).to_record(dataset_id, args.seed))
    print(f"{dataset_id:<36} reference {wide.final_top1:.3f}  regular@5 {regular.top1[min(4, args.epochs - 1)]:.3f}")

report = evaluate(records, reference, baseline=("probenet", f"wide@{args.epochs}"))
emit_report(report, args.out)
print()
print(format_report(report))
print()
print("early stopping (epochs, R^2, mean |score - reference|):")
for epochs, r2, gap in early_stopping_curve(report, "regular"):
    print(f"  {epochs:>3}  {r2:.3f}  {gap:.3f}")
