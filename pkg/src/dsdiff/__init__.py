"""Dataset difficulty estimation: silhouette, k-means and probe-net scores."""

__version__ = "0.1.0"

from .dataset import PRESETS, Dataset, SynthSpec, load_dataset, resize_bilinear, save_dset, synth_generate
from .harness import EvalReport, early_stopping_curve, emit_report, evaluate, format_report, linregress
from .kmeans_scores import aecm, cluster_scores, kmeans, kmeans_score_pipeline
from .probe_nets import TrainConfig, build_probe, probe_score, train_probe
from .records import ScoreRecord, read_reference, read_scores, write_scores
from .silhouette import silhouette_pipeline, silhouette_samples
from .transform import TransformSpec, apply_transform, fit_pca

__all__ = [
    "PRESETS", "Dataset", "SynthSpec", "load_dataset", "resize_bilinear", "save_dset", "synth_generate",
    "EvalReport", "early_stopping_curve", "emit_report", "evaluate", "format_report", "linregress",
    "aecm", "cluster_scores", "kmeans", "kmeans_score_pipeline",
    "TrainConfig", "build_probe", "probe_score", "train_probe",
    "ScoreRecord", "read_reference", "read_scores", "write_scores",
    "silhouette_pipeline", "silhouette_samples",
    "TransformSpec", "apply_transform", "fit_pca",
]
