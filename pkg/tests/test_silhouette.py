import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsdiff.dataset import Dataset, SynthSpec, synth_generate
from dsdiff.silhouette import (PIPELINES, DistanceMatrix, dssim, dssim_matrix, mse_distance, mse_matrix,
                               silhouette_pipeline, silhouette_samples)
from dsdiff.transform import save_embeddings
from oracles import silhouette_bruteforce


# -- distances ---------------------------------------------------------------

def test_mse_distance_values():
    assert mse_distance([0, 0], [1, 1]) == 1.0
    u = np.random.default_rng(0).random(50)
    assert mse_distance(u, u) == 0.0
    v = np.random.default_rng(1).random(50)
    assert mse_distance(u, v) == pytest.approx(sum((a - b) ** 2 for a, b in zip(u, v)) / 50, abs=1e-12)
    with pytest.raises(ValueError):
        mse_distance([1, 2], [1, 2, 3])


def test_mse_matrix_agrees_with_pairwise_function():
    X = np.random.default_rng(2).random((6, 10))
    D = mse_matrix(X).values
    for i in range(6):
        for j in range(6):
            assert D[i, j] == pytest.approx(mse_distance(X[i], X[j]), abs=1e-12)


def test_dssim_identity_and_symmetry():
    rng = np.random.default_rng(3)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert dssim(a, a) == pytest.approx(0.0, abs=1e-12)
    assert dssim(a, b) == dssim(b, a)
    assert 0.0 <= dssim(a, b) <= 1.0


def test_dssim_constant_images():
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ssim = c1 * c2 / ((1 + c1) * c2)
    got = dssim(np.zeros((10, 10)), np.ones((10, 10)))
    assert got == pytest.approx((1 - ssim) / 2, abs=1e-12)


def test_dssim_small_image_uses_global_window():
    rng = np.random.default_rng(4)
    a, b = rng.random((4, 5)), rng.random((4, 5))
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = ((a - ma) * (b - mb)).mean()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ssim = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))
    assert dssim(a, b) == pytest.approx((1 - ssim) / 2, abs=1e-12)


def test_dssim_sliding_windows_brute_force():
    rng = np.random.default_rng(5)
    a, b = rng.random((10, 9)), rng.random((10, 9))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(10 - 7):
        for j in range(9 - 7):
            wa, wb = a[i:i + 8, j:j + 8], b[i:i + 8, j:j + 8]
            ma, mb = wa.mean(), wb.mean()
            cov = ((wa - ma) * (wb - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (wa.var() + wb.var() + c2)))
    assert dssim(a, b) == pytest.approx((1 - np.mean(vals)) / 2, abs=1e-12)


def test_dssim_matrix_matches_pairwise():
    imgs = np.random.default_rng(6).random((5, 9, 9, 2))
    D = dssim_matrix(imgs)
    assert D.metric == "dssim"
    for i in range(5):
        assert D.values[i, i] == 0
        for j in range(5):
            assert D.values[i, j] == pytest.approx(dssim(imgs[i], imgs[j]), abs=1e-12)
    np.testing.assert_array_equal(D.values, D.values.T)


def test_distance_matrix_must_be_square():
    with pytest.raises(ValueError):
        DistanceMatrix(np.zeros((2, 3)), "mse")


# -- silhouette values ----------------------------------------------------------

def _line_distances(points):
    p = np.asarray(points, dtype=float)
    return np.abs(p[:, None] - p[None, :])


def test_four_point_hand_value():
    s = silhouette_samples(_line_distances([0, 1, 4, 5]), [0, 0, 1, 1])
    assert s[0] == pytest.approx(1 - 1 / 4.5, abs=1e-12)
    assert s[0] == pytest.approx(7 / 9)


def test_equal_a_and_b_gives_zero():
    D = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0.0]])
    s = silhouette_samples(np.pad(D, ((0, 1), (0, 1)), constant_values=1.0), [0, 0, 1, 1])
    assert s[0] == 0.0


def test_perfect_separation_scores_one():
    s = silhouette_samples(_line_distances([0, 0, 0, 9, 9]), [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(s, 1.0)


def test_singletons_warn_and_score_zero():
    with pytest.warns(RuntimeWarning):
        s = silhouette_samples(_line_distances([0, 1, 5]), [0, 0, 1])
    assert s[2] == 0.0


def test_single_class_is_an_error():
    with pytest.raises(ValueError):
        silhouette_samples(_line_distances([0, 1, 2]), [3, 3, 3])


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 30), st.integers(2, 4), st.integers(0, 10_000))
def test_matches_bruteforce(n, c, seed):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(c), np.arange(c), rng.integers(0, c, n)])
    X = rng.random((len(labels), 3))
    D = mse_matrix(X).values
    np.testing.assert_allclose(silhouette_samples(D, labels), silhouette_bruteforce(D, labels), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_relabel_and_scale_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(4), 5)
    D = mse_matrix(rng.random((20, 4))).values
    s = silhouette_samples(D, labels)
    perm = rng.permutation(4)
    assert np.array_equal(silhouette_samples(D, perm[labels]), s)
    np.testing.assert_allclose(silhouette_samples(D * lam, labels), s, atol=1e-12)


def test_values_lie_in_unit_interval():
    rng = np.random.default_rng(7)
    s = silhouette_samples(mse_matrix(rng.random((60, 5))).values, rng.integers(0, 3, 60))
    assert (s >= -1).all() and (s <= 1).all()


# -- pipelines --------------------------------------------------------------------

def _two_constant_classes(n=20, side=10):
    x = np.zeros((2 * n, side, side, 1), np.uint8)
    x[n:] = 255
    x[:n, 0, 0, 0] = np.arange(n)  # tiny within-class variation
    y = np.repeat([0, 1], n)
    return Dataset(x, y, x[:2], y[:2], 2, id="const")


@pytest.mark.parametrize("pipeline", ["S1", "S2", "S3", "S4", "S5"])
def test_well_separated_classes_score_high(pipeline):
    res = silhouette_pipeline(_two_constant_classes(), pipeline, repeat_below=0)
    assert res.score > 0.9
    assert res.per_class.keys() == {0, 1}
    assert res.score == pytest.approx(res.samples.mean())
    rec = res.to_record("const", seed=0)
    assert rec.method == "silhouette" and rec.variant == pipeline and rec.wall_time > 0


def test_pipeline_table():
    assert PIPELINES["S1"] == ("none", "mse") and PIPELINES["S3"] == ("resize8", "mse")
    assert PIPELINES["S5"] == ("pca10", "mse") and PIPELINES["S2"][1] == PIPELINES["S4"][1] == "dssim"


def test_s6_uses_embedding_rows(tmp_path):
    ds = _two_constant_classes()
    emb = np.zeros((ds.n_train, 1000), np.float32)
    emb[ds.y_train == 1] = 5.0
    emb += np.random.default_rng(0).standard_normal(emb.shape).astype(np.float32) * 0.01
    save_embeddings(tmp_path / "e.emb", emb)
    res = silhouette_pipeline(ds, "S6", embeddings=tmp_path / "e.emb", repeat_below=0)
    assert res.score > 0.9 and res.metadata["d_bar"] == 1000
    with pytest.raises(ValueError):
        silhouette_pipeline(ds, "S6")
    with pytest.raises(ValueError):
        silhouette_pipeline(ds, "S9")


def test_subsample_cap_and_metadata():
    ds = synth_generate(SynthSpec(num_classes=3, samples_per_class=100, side=8, seed=1))
    res = silhouette_pipeline(ds, "S1", n_max=50, seed=3, repeat_below=0)
    assert len(res.samples) == 50
    assert res.metadata["ssim_window"] == 8 and res.metadata["n"] == 50
    again = silhouette_pipeline(ds, "S1", n_max=50, seed=3, repeat_below=0)
    assert np.array_equal(res.samples, again.samples)


def test_noise_ladder_scores_fall():
    scores = [silhouette_pipeline(synth_generate(SynthSpec(samples_per_class=60, side=8, sigma=s, seed=2)),
                                  "S3", repeat_below=0).score for s in (0.02, 0.1, 0.4)]
    assert scores[0] > scores[1] > scores[2]
