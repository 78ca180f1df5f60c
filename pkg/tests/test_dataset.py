from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tap import dataset
from tap.errors import ConfigError, DataError, FormatError


@pytest.mark.parametrize("kind", dataset.SHAPE_KINDS)
def test_gen_shape_normalized(kind):
    cloud = dataset.gen_shape(kind, 256, seed=5)
    assert cloud.points.shape == (256, 3)
    assert cloud.label == dataset.SHAPE_KINDS.index(kind)
    np.testing.assert_allclose(cloud.points.mean(axis=0), 0.0, atol=1e-6)
    assert np.linalg.norm(cloud.points, axis=1).max() == pytest.approx(1.0, abs=1e-6)
    # every coordinate survives a float32 round trip unchanged
    np.testing.assert_array_equal(cloud.points.astype(np.float32).astype(np.float64), cloud.points)


@pytest.mark.parametrize("n", [16, 17, 100, 101])
def test_sphere_points_on_unit_sphere(n):
    pts = dataset.gen_shape("sphere", n, seed=1).points
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-6)


def test_gen_shape_deterministic_and_seed_dependent():
    a = dataset.gen_shape("torus", 128, seed=7).points
    np.testing.assert_array_equal(a, dataset.gen_shape("torus", 128, seed=7).points)
    assert not np.array_equal(a, dataset.gen_shape("torus", 128, seed=8).points)


def test_gen_shape_errors():
    with pytest.raises(ConfigError):
        dataset.gen_shape("teapot")
    with pytest.raises(ConfigError):
        dataset.gen_shape("cube", 8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 50))
def test_normalize_idempotent_and_similarity_invariant(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    once = dataset.normalize_cloud(pts)
    np.testing.assert_allclose(dataset.normalize_cloud(once), once, atol=1e-12)
    moved = dataset.normalize_cloud(3.5 * pts + rng.standard_normal(3))
    np.testing.assert_allclose(moved, once, atol=1e-9)


def test_normalize_single_point_goes_to_origin():
    np.testing.assert_array_equal(dataset.normalize_cloud(np.array([[1.0, 2.0, 3.0]])), np.zeros((1, 3)))


def test_cloud_round_trip(tmp_path):
    pts = dataset.gen_shape("cone", 64, 2).points
    dataset.save_cloud(tmp_path / "c.tapc", pts)
    np.testing.assert_array_equal(dataset.load_cloud(tmp_path / "c.tapc"), pts)


def test_cloud_file_errors(tmp_path):
    p = tmp_path / "c.tapc"
    dataset.save_cloud(p, np.zeros((4, 3)))
    raw = p.read_bytes()
    p.write_bytes(raw[:5])
    with pytest.raises(FormatError, match="offset 5"):
        dataset.load_cloud(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        dataset.load_cloud(p)
    p.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="payload"):
        dataset.load_cloud(p)
    with pytest.raises(DataError):
        dataset.save_cloud(p, np.zeros((4, 2)))


@pytest.mark.parametrize(
    "shapes, expected",
    [("2", {k: 2 for k in dataset.SHAPE_KINDS}), ("sphere:2,cube:3", {"sphere": 2, "cube": 3}),
     ("all:1", {k: 1 for k in dataset.SHAPE_KINDS}), ({"torus": 4}, {"torus": 4})],
)
def test_parse_shapes(shapes, expected):
    assert dataset.parse_shapes(shapes) == expected


def test_parse_shapes_unknown_kind():
    with pytest.raises(ConfigError):
        dataset.parse_shapes("blob:2")


def test_stable_split_is_stable_and_mixed():
    ids = [f"{k}_{i:04d}" for k in dataset.SHAPE_KINDS for i in range(50)]
    splits = [dataset.stable_split(i) for i in ids]
    assert splits == [dataset.stable_split(i) for i in ids]
    assert 0.03 < splits.count("test") / len(ids) < 0.2


def test_build_dataset_layout(tmp_path):
    man = dataset.build_dataset("1", 12, tmp_path, seed=0, n_points=64, image_size=16)
    assert len(man.entries) == 8
    assert sum(len(e.views) for e in man.entries) == 96
    text = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert text[0].startswith("#tap-manifest") and len(text) == 2 + 96
    loaded = dataset.load_manifest(tmp_path)
    assert loaded.to_text() == man.to_text()
    assert loaded.categories() == sorted(dataset.SHAPE_KINDS)
    train, test = loaded.split("train"), loaded.split("test")
    assert {e.id for e in train}.isdisjoint({e.id for e in test})
    assert len(train) + len(test) == 8


def test_build_dataset_reproducible(tmp_path):
    a = dataset.build_dataset("sphere:1,cube:1", 3, tmp_path / "a", seed=4, n_points=64, image_size=16)
    b = dataset.build_dataset("sphere:1,cube:1", 3, tmp_path / "b", seed=4, n_points=64, image_size=16)
    assert a.to_text() == b.to_text()
    for e in a.entries:
        assert (tmp_path / "a" / e.cloud).read_bytes() == (tmp_path / "b" / e.cloud).read_bytes()
        for _, img in e.views:
            assert (tmp_path / "a" / img).read_bytes() == (tmp_path / "b" / img).read_bytes()


def test_manifest_missing_file(tmp_path):
    man = dataset.build_dataset("cube:1", 2, tmp_path, n_points=32, image_size=16)
    (tmp_path / man.entries[0].views[1][1]).unlink()
    with pytest.raises(DataError, match="missing"):
        dataset.load_manifest(tmp_path)
    assert len(dataset.load_manifest(tmp_path, check_paths=False).entries) == 1


def test_manifest_without_views_round_trips(tmp_path):
    man = dataset.build_dataset("cube:2", 0, tmp_path, n_points=32)
    assert all(not e.views for e in dataset.load_manifest(tmp_path).entries)
    assert "\t-1\t-" in man.to_text()
