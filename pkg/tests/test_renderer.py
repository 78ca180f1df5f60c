from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import render_oracle
from tap import geometry, renderer
from tap.errors import ContractError, DataError, FormatError


def test_single_point_lands_in_center():
    img = renderer.render(np.array([[0.2, 0.4, 0.1]]), np.eye(3), 9, 9, splat_radius=0).pixels
    fg = np.argwhere(renderer.fg_mask(img))
    np.testing.assert_array_equal(fg, [[4, 4]])
    assert img[4, 4, 0] == pytest.approx(0.15)


def test_zbuffer_keeps_nearer_point():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.5]])
    img = renderer.render(pts, np.eye(3), 8, 8, splat_radius=0).pixels[:, :, 0]
    rows, cols, _ = renderer.splat_centers(pts, np.eye(3), 8, 8)
    # points 0 and 1 share a pixel; point 0 (depth 0, the minimum) is nearer
    assert img[rows[0], cols[0]] == pytest.approx(0.15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(0, 2))
def test_matches_brute_force(seed, n, radius):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    if n > 3:
        pts[1] = pts[0]  # force an exact depth tie
    R = geometry.random_rotation(rng)
    got = renderer.render(pts, R, 16, 16, splat_radius=radius).pixels
    np.testing.assert_allclose(got[:, :, 0], render_oracle(pts, R, 16, 16, radius), atol=1e-12)
    np.testing.assert_array_equal(got[:, :, 0], got[:, :, 2])


def test_pose_equals_prerotated_cloud(rng):
    pts = rng.standard_normal((60, 3))
    R = geometry.random_rotation(rng)
    a = renderer.render(pts, R, 16, 16).pixels
    b = renderer.render(geometry.rotate_points(pts, R), np.eye(3), 16, 16).pixels
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_render_errors():
    with pytest.raises(DataError):
        renderer.render(np.zeros((0, 3)), np.eye(3), 16, 16)
    with pytest.raises(ContractError):
        renderer.render(np.zeros((2, 3)), np.eye(3), 4, 16)
    with pytest.raises(ContractError):
        renderer.render(np.zeros((2, 3)), np.eye(3), 16, 16, splat_radius=-1)


def test_default_radius_scaling():
    assert renderer.default_splat_radius(224) == 2
    assert renderer.default_splat_radius(32) == 1


def test_ppm_round_trip(tmp_path, rng):
    img = renderer.render(rng.standard_normal((50, 3)), np.eye(3), 12, 10)
    renderer.save_image(tmp_path / "a.ppm", img)
    back = renderer.load_image(tmp_path / "a.ppm").pixels
    assert back.shape == (12, 10, 3)
    np.testing.assert_allclose(back, img.pixels, atol=0.5 / 255)
    renderer.save_image(tmp_path / "b.ppm", back)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_white_survives_exactly(tmp_path):
    renderer.save_image(tmp_path / "w.ppm", np.ones((8, 8, 3)))
    back = renderer.load_image(tmp_path / "w.ppm").pixels
    assert np.all(back == 1.0) and not renderer.fg_mask(back).any()


def test_ppm_header_comments_accepted(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255]))
    px = renderer.load_image(tmp_path / "c.ppm").pixels
    np.testing.assert_array_equal(renderer.fg_mask(px), [[True, False]])


def test_ppm_errors(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(FormatError, match="offset 0"):
        renderer.load_image(p)
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(11))
    with pytest.raises(FormatError, match="payload"):
        renderer.load_image(p)
    p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError, match="maxval"):
        renderer.load_image(p)


def test_rendered_views_have_foreground(rng):
    from tap import dataset

    pts = dataset.gen_shape("capsule", 256, 0).points
    for R in geometry.sample_poses(12):
        mask = renderer.render(pts, R, 32, 32).fg_mask
        assert 0.05 < mask.mean() < 0.95
