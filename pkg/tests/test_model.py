import math

import numpy as np
import pytest

from cascadequery import (
    Blob,
    ConfigurationError,
    FeaturePyramid,
    FormatError,
    HeadOutput,
    ValidationError,
    level_dims,
    load_pyramid,
    load_weights,
    make_fixture_weights,
    make_synthetic_pyramid,
    run_dense_head,
    run_sparse_head,
    save_pyramid,
    save_weights,
)
from cascadequery.sparse import KeySet, build_rulebook, gather
from cascadequery.tensor import ConvWeights, DenseTensor

from conftest import dense_rows_at, standard_weights


def small_pyramid(seed=0, image=64, channels=8, blobs=()):
    return make_synthetic_pyramid(seed, image, image, 2, 5, channels, list(blobs))


def test_level_dims_floor_law():
    assert level_dims(512, 512, 2) == (128, 128)
    assert level_dims(512, 512, 7) == (4, 4)
    assert level_dims(500, 300, 3) == (62, 37)
    assert level_dims(500, 300, 5) == (15, 9)


def test_pyramid_validates_level_shapes():
    levels = {2: DenseTensor(np.zeros((4, 16, 16), dtype=np.float32))}
    with pytest.raises(ConfigurationError, match="expected"):
        FeaturePyramid(60, 64, levels)  # 60px image floors to 15 rows at level 2


def test_pyramid_validates_channel_agreement():
    levels = {
        2: DenseTensor(np.zeros((4, 16, 16), dtype=np.float32)),
        3: DenseTensor(np.zeros((3, 8, 8), dtype=np.float32)),
    }
    with pytest.raises(ConfigurationError, match="channel"):
        FeaturePyramid(64, 64, levels)


def test_synthetic_pyramid_is_deterministic():
    blob = Blob(cx=30.0, cy=30.0, width=8.0, height=8.0, amplitude=10.0)
    a = small_pyramid(seed=5, blobs=[blob])
    b = small_pyramid(seed=5, blobs=[blob])
    c = small_pyramid(seed=6, blobs=[blob])
    for l in a.levels:
        np.testing.assert_array_equal(a.levels[l].values, b.levels[l].values)
    assert not np.array_equal(a.levels[2].values, c.levels[2].values)


def test_synthetic_pyramid_plants_a_peak_at_every_level():
    blob = Blob(cx=32.0, cy=32.0, width=6.0, height=6.0, amplitude=50.0)
    pyr = small_pyramid(seed=1, blobs=[blob])
    for l, t in pyr.levels.items():
        gx, gy = 32 >> l, 32 >> l
        assert t.values[:, gy, gx].max() > 25.0, f"no bump at level {l}"


def test_fixture_weights_shapes_and_prior_bias():
    w = make_fixture_weights(0, 16, 2, 5)
    assert w.channels == 16
    assert w.cls_pred.out_channels == 10
    assert w.reg_pred.out_channels == 8
    assert w.query_pred.out_channels == 1
    prior = -math.log(99.0)  # sigmoid(prior) == 0.01
    np.testing.assert_allclose(w.cls_pred.bias, prior, rtol=1e-6)
    np.testing.assert_allclose(w.query_pred.bias, prior, rtol=1e-6)
    np.testing.assert_array_equal(w.reg_pred.bias, 0.0)


def test_head_weights_validation_catches_bad_tower():
    w = make_fixture_weights(0, 8, 1, 4)
    bad_tower = list(w.cls_tower[:-1])  # one conv short
    with pytest.raises(ConfigurationError, match="tower"):
        type(w)(bad_tower, w.reg_tower, w.query_tower,
                w.cls_pred, w.reg_pred, w.query_pred, 1, 4)


def test_dense_head_output_shapes():
    w = make_fixture_weights(3, 8, 2, 3)
    feature = DenseTensor(np.random.default_rng(0).standard_normal((8, 6, 7)).astype(np.float32))
    out = run_dense_head(feature, w)
    assert not out.is_sparse
    assert out.cls_logits.values.shape == (6, 6, 7)
    assert out.reg_deltas.values.shape == (8, 6, 7)
    assert out.query_logits.values.shape == (1, 6, 7)


def test_untrained_scores_start_near_the_prior():
    # on pure noise the prior bias keeps sigmoid scores close to 0.01
    pyr = small_pyramid(seed=2)
    w = make_fixture_weights(2, 8, 1, 4)
    out = run_dense_head(pyr.levels[3], w)
    scores = 1.0 / (1.0 + np.exp(-out.query_logits.values.astype(np.float64)))
    assert np.median(scores) < 0.05


def test_sparse_head_matches_dense_head_on_full_grid():
    pyr = small_pyramid(seed=4)
    w = make_fixture_weights(5, 8, 1, 4)
    feature = pyr.levels[4]
    ks = KeySet.full(4, feature.height, feature.width)
    dense = run_dense_head(feature, w)
    sparse = run_sparse_head(gather(feature, ks), w)
    for d, s in ((dense.cls_logits, sparse.cls_logits),
                 (dense.reg_deltas, sparse.reg_deltas),
                 (dense.query_logits, sparse.query_logits)):
        np.testing.assert_allclose(s.features, dense_rows_at(d, ks), rtol=2e-4, atol=1e-5)


def test_sparse_head_accepts_prebuilt_rulebook():
    pyr = small_pyramid(seed=4)
    w = make_fixture_weights(5, 8, 1, 4)
    feature = pyr.levels[4]
    ks = KeySet(4, feature.height, feature.width, [(0, 0), (1, 1), (2, 1)])
    vf = gather(feature, ks)
    a = run_sparse_head(vf, w)
    b = run_sparse_head(vf, w, build_rulebook(ks))
    np.testing.assert_array_equal(a.cls_logits.features, b.cls_logits.features)


def test_head_output_rejects_mixed_density():
    pyr = small_pyramid(seed=4)
    w = make_fixture_weights(5, 8, 1, 4)
    feature = pyr.levels[4]
    dense = run_dense_head(feature, w)
    ks = KeySet(4, feature.height, feature.width, [(0, 0)])
    sparse = run_sparse_head(gather(feature, ks), w)
    with pytest.raises(ValidationError):
        HeadOutput(dense.cls_logits, sparse.reg_deltas, dense.query_logits)


def test_head_output_requires_one_shared_keyset():
    pyr = small_pyramid(seed=4)
    w = make_fixture_weights(5, 8, 1, 4)
    feature = pyr.levels[4]
    out_a = run_sparse_head(gather(feature, KeySet(4, feature.height, feature.width, [(0, 0)])), w)
    out_b = run_sparse_head(gather(feature, KeySet(4, feature.height, feature.width, [(1, 0)])), w)
    with pytest.raises(ValidationError):
        HeadOutput(out_a.cls_logits, out_a.reg_deltas, out_b.query_logits)


# --- containers ----------------------------------------------------------------

def test_pyramid_roundtrip(tmp_path):
    pyr = small_pyramid(seed=7)
    p = tmp_path / "pyr.qdpyr"
    save_pyramid(pyr, p)
    back = load_pyramid(p)
    assert back.image_height == pyr.image_height
    assert sorted(back.levels) == sorted(pyr.levels)
    for l in pyr.levels:
        np.testing.assert_array_equal(back.levels[l].values, pyr.levels[l].values)


def test_pyramid_save_is_byte_stable(tmp_path):
    pyr = small_pyramid(seed=7)
    a, b = tmp_path / "a.qdpyr", tmp_path / "b.qdpyr"
    save_pyramid(pyr, a)
    save_pyramid(pyr, b)
    assert a.read_bytes() == b.read_bytes()


def test_weights_roundtrip(tmp_path):
    w = standard_weights(16)
    p = tmp_path / "w.qdwts"
    save_weights(w, p)
    back = load_weights(p)
    assert back.num_anchors == w.num_anchors
    assert back.num_classes == w.num_classes
    np.testing.assert_array_equal(back.cls_tower[2].weights, w.cls_tower[2].weights)
    np.testing.assert_array_equal(back.query_pred.bias, w.query_pred.bias)


def test_load_pyramid_rejects_wrong_magic(tmp_path):
    w = standard_weights(16)
    p = tmp_path / "w.qdwts"
    save_weights(w, p)
    with pytest.raises(FormatError, match="magic"):
        load_pyramid(p)  # weights container under the pyramid loader


def test_load_weights_reports_truncation_with_path(tmp_path):
    w = standard_weights(16)
    p = tmp_path / "w.qdwts"
    save_weights(w, p)
    p.write_bytes(p.read_bytes()[:100])
    with pytest.raises(FormatError, match="w.qdwts"):
        load_weights(p)
