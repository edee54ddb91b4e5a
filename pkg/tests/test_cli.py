import csv
import json
import subprocess
import sys

import pytest

from dsdiff.cli import DEFAULT_SEED, SEED_ENV, UsageError, build_parser, default_seed, main, read_manifest
from dsdiff.dataset import SynthSpec, load_dataset, save_dset, synth_generate
from dsdiff.records import REFERENCE_HEADER, SCORES_HEADER, read_scores


@pytest.fixture
def small_dset(tmp_path):
    path = tmp_path / "d.dset"
    save_dset(synth_generate(SynthSpec(samples_per_class=30, side=8, sigma=0.1, seed=1)), path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_score_silhouette_row(small_dset, tmp_path, capsys):
    out = tmp_path / "scores.csv"
    code = main(["score", "--method", "silhouette", "--pipeline", "S3", "--dataset", str(small_dset),
                 "--seed", "7", "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 1 and list(rows[0]) == list(SCORES_HEADER)
    assert rows[0]["method"] == "silhouette" and rows[0]["variant"] == "S3" and rows[0]["seed"] == "7"
    assert rows[0]["dataset_id"] == "d"
    printed = capsys.readouterr().out
    assert "score=" in printed and "wall_time=" in printed


def test_score_appends_and_fans_out(small_dset, tmp_path):
    out = tmp_path / "scores.csv"
    args = ["score", "--method", "kmeans", "--transform", "none", "pca10", "--metric", "aecm", "ami",
            "--dataset", str(small_dset), "--out", str(out)]
    assert main(args) == 0 and main(args) == 0
    recs = read_scores(out)
    assert len(recs) == 8
    assert [r.variant for r in recs[:4]] == ["none+aecm", "none+ami", "pca10+aecm", "pca10+ami"]
    assert out.read_text().count("dataset_id") == 1


def test_score_probe_with_curves(small_dset, tmp_path):
    out = tmp_path / "scores.csv"
    code = main(["score", "--method", "probenet", "--probe", "regular", "--epochs", "2", "--input-size", "0",
                 "--dataset", str(small_dset), "--out", str(out), "--curve-dir", str(tmp_path / "curves")])
    assert code == 0
    assert read_scores(out)[0].variant == "regular@2"
    curve = _rows(tmp_path / "curves" / "d_regular@2.csv")
    assert [r["epoch"] for r in curve] == ["1", "2"]


def test_unknown_pipeline_exits_2(small_dset, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "--method", "silhouette", "--pipeline", "S9", "--dataset", str(small_dset)])
    assert exc.value.code == 2
    assert "S9" in capsys.readouterr().err


def test_s6_without_embeddings_exits_2(small_dset, tmp_path):
    assert main(["score", "--method", "silhouette", "--pipeline", "S6", "--dataset", str(small_dset),
                 "--out", str(tmp_path / "s.csv")]) == 2


def test_pipeline_error_exits_1(tmp_path, capsys):
    code = main(["score", "--method", "silhouette", "--dataset", str(tmp_path / "missing.dset"),
                 "--out", str(tmp_path / "s.csv")])
    assert code == 1 and "missing.dset" in capsys.readouterr().err
    assert not (tmp_path / "s.csv").exists()


def test_help_documents_every_flag():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
    result = subprocess.run([sys.executable, "-m", "dsdiff", "score", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "--pipeline" in result.stdout


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def test_eval_happy_path(tmp_path, capsys):
    _write(tmp_path / "s.csv", SCORES_HEADER,
           [(f"d{i}", "probenet", "regular@5", 0.3 + 0.1 * i, 1.0, 42) for i in range(4)])
    _write(tmp_path / "r.csv", REFERENCE_HEADER, [(f"d{i}", 0.35 + 0.1 * i) for i in range(4)])
    code = main(["eval", "--scores", str(tmp_path / "s.csv"), "--reference", str(tmp_path / "r.csv"),
                 "--out", str(tmp_path / "rep")])
    assert code == 0
    report = _rows(tmp_path / "rep" / "report.csv")
    assert report[0]["variant"] == "regular@5" and float(report[0]["r2"]) == pytest.approx(1.0)
    assert (tmp_path / "rep" / "probenet_regular_5.svg").exists()
    assert "regular@5" in capsys.readouterr().out


def test_eval_unknown_dataset_id_exits_1(tmp_path, capsys):
    _write(tmp_path / "s.csv", SCORES_HEADER, [("mystery", "kmeans", "none+aecm", 0.5, 1.0, 42)])
    _write(tmp_path / "r.csv", REFERENCE_HEADER, [("known", 0.5)])
    code = main(["eval", "--scores", str(tmp_path / "s.csv"), "--reference", str(tmp_path / "r.csv"),
                 "--out", str(tmp_path / "rep")])
    assert code == 1 and "mystery" in capsys.readouterr().err


def test_eval_bad_column_exits_1(tmp_path, capsys):
    _write(tmp_path / "s.csv", ("dataset_id", "method", "variant", "value", "wall_time_s", "seed"), [])
    _write(tmp_path / "r.csv", REFERENCE_HEADER, [])
    code = main(["eval", "--scores", str(tmp_path / "s.csv"), "--reference", str(tmp_path / "r.csv"),
                 "--out", str(tmp_path / "rep")])
    assert code == 1 and "score" in capsys.readouterr().err


def test_eval_empty_scores(tmp_path):
    _write(tmp_path / "s.csv", SCORES_HEADER, [])
    _write(tmp_path / "r.csv", REFERENCE_HEADER, [])
    code = main(["eval", "--scores", str(tmp_path / "s.csv"), "--reference", str(tmp_path / "r.csv"),
                 "--out", str(tmp_path / "rep")])
    assert code == 0
    assert _rows(tmp_path / "rep" / "report.csv") == []


def test_eval_bad_baseline_exits_2(tmp_path):
    _write(tmp_path / "s.csv", SCORES_HEADER, [])
    _write(tmp_path / "r.csv", REFERENCE_HEADER, [])
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--reference", str(tmp_path / "r.csv"),
                 "--baseline", "S2"]) == 2


def test_synth_noise_ladder(tmp_path):
    assert main(["synth", "--preset", "noise-ladder", "--out", str(tmp_path / "d")]) == 0
    files = sorted(p.name for p in (tmp_path / "d").glob("*.dset"))
    assert len(files) == 6
    items = read_manifest(tmp_path / "d" / "manifest.csv")
    assert [spec.sigma for _, spec in items] == [0.02, 0.05, 0.1, 0.2, 0.4, 0.8]
    for dataset_id, spec in items:
        assert load_dataset(tmp_path / "d" / f"{dataset_id}.dset").n_train == 4 * 400


def test_synth_explicit_round_trip_and_determinism(tmp_path):
    args = ["synth", "--classes", "3", "--samples-per-class", "20", "--side", "8", "--sigma", "0.25",
            "--shift", "1", "--id", "mine", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    [(dataset_id, spec)] = read_manifest(tmp_path / "a" / "manifest.csv")
    assert dataset_id == "mine"
    assert spec == SynthSpec(num_classes=3, samples_per_class=20, side=8, sigma=0.25, shift=1, seed=5,
                             separation=0.2)
    assert (tmp_path / "a" / "mine.dset").read_bytes() == (tmp_path / "b" / "mine.dset").read_bytes()
    assert main(args[:-2] + ["--seed", "6", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "mine.dset").read_bytes() != (tmp_path / "a" / "mine.dset").read_bytes()


def test_synth_unwritable_dir_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--preset", "noiseless", "--out", str(blocker / "sub")]) == 1


def test_seed_environment_variable(monkeypatch, small_dset, tmp_path):
    assert default_seed({}) == DEFAULT_SEED
    assert default_seed({SEED_ENV: "9"}) == 9
    with pytest.raises(UsageError):
        default_seed({SEED_ENV: "nine"})
    monkeypatch.setenv(SEED_ENV, "11")
    out = tmp_path / "s.csv"
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset), "--out", str(out)]) == 0
    assert read_scores(out)[0].seed == 11
    monkeypatch.setenv(SEED_ENV, "x")
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset)]) == 2


def test_config_file_overrides_defaults(small_dset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pipeline": ["S1", "S5"], "seed": 3}))
    out = tmp_path / "s.csv"
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset), "--config", str(cfg),
                 "--out", str(out)]) == 0
    recs = read_scores(out)
    assert [r.variant for r in recs] == ["S1", "S5"] and recs[0].seed == 3
    # explicit flags beat the config file
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset), "--config", str(cfg),
                 "--seed", "8", "--out", str(out)]) == 0
    assert read_scores(out)[-1].seed == 8
    cfg.write_text(json.dumps({"colour": "blue"}))
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset), "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"pipeline": ["S9"]}))
    assert main(["score", "--method", "silhouette", "--dataset", str(small_dset), "--config", str(cfg)]) == 2


def test_jobs_give_the_same_rows(tmp_path):
    paths = []
    for i in range(3):
        p = tmp_path / f"d{i}.dset"
        save_dset(synth_generate(SynthSpec(samples_per_class=20, side=8, sigma=0.1 * (i + 1), seed=i)), p)
        paths.append(str(p))
    base = ["score", "--method", "kmeans", "--timing", "model", "--dataset", *paths]
    assert main(base + ["--out", str(tmp_path / "one.csv")]) == 0
    assert main(base + ["--jobs", "2", "--out", str(tmp_path / "two.csv")]) == 0
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_reference_command_merges(small_dset, tmp_path):
    ref = tmp_path / "ref.csv"
    _write(ref, REFERENCE_HEADER, [("other", 0.5)])
    code = main(["reference", "--dataset", str(small_dset), "--epochs", "2", "--input-size", "0",
                 "--probe", "narrow", "--out", str(ref), "--scores", str(tmp_path / "s.csv")])
    assert code == 0
    rows = {r["dataset_id"]: float(r["top1"]) for r in _rows(ref)}
    assert set(rows) == {"d", "other"}
    assert read_scores(tmp_path / "s.csv")[0].variant == "narrow@2"
