import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthcomp.errors import DepthRangeError, DimensionError, HeaderError, MissingFileError, PayloadLengthError
from depthcomp.fileio import (
    encode_depth_pgm,
    read_calibration,
    read_depth_pgm,
    read_point_cloud,
    read_rgb_ppm,
    write_calibration,
    write_depth_pgm,
    write_point_cloud,
    write_rgb_ppm,
)
from depthcomp.geometry import (
    CameraIntrinsics,
    DepthImage,
    PointCloud,
    project_zbuffer,
    subsample,
    unproject,
)

K = CameraIntrinsics(fx=100.0, fy=90.0, cx=60.0, cy=40.0, width=120, height=80)


def random_sparse(rng, h=80, w=120, density=0.05, z_max=80.0):
    vals = np.where(rng.random((h, w)) < density, rng.uniform(0.5, z_max, (h, w)), 0.0)
    return DepthImage(vals)


# --- unproject --------------------------------------------------------------


def test_principal_point_maps_to_optical_axis():
    d = DepthImage.empty(80, 120)
    d.values[40, 60] = 5.0
    np.testing.assert_array_equal(unproject(d, K).points, [[0.0, 0.0, 5.0]])


def test_unproject_hand_computed_x():
    d = DepthImage.empty(80, 120)
    d.values[40, 80] = 5.0
    assert unproject(d, K).points[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_unproject_empty_image():
    assert len(unproject(DepthImage.empty(80, 120), K)) == 0


def test_unproject_extent_mismatch():
    with pytest.raises(DimensionError, match="120x80"):
        unproject(DepthImage.empty(64, 96), K)


def test_unproject_is_row_major():
    d = DepthImage.empty(80, 120)
    d.values[3, 7] = 1.0
    d.values[2, 50] = 2.0
    d.values[3, 1] = 3.0
    np.testing.assert_array_equal(unproject(d, K).points[:, 2], [2.0, 3.0, 1.0])


# --- project_zbuffer -------------------------------------------------------


def test_zbuffer_keeps_nearest():
    cloud = PointCloud([[0.0, 0.0, 7.0], [0.0, 0.0, 3.0]])
    proj = project_zbuffer(cloud, K)
    assert proj.depth.values[40, 60] == 3.0
    assert proj.depth.valid_count == 1


def test_point_behind_camera_dropped():
    proj = project_zbuffer(PointCloud([[0.0, 0.0, -1.0], [0.0, 0.0, 2.0]]), K)
    assert proj.dropped_behind == 1
    assert proj.depth.valid_count == 1


def test_out_of_bounds_dropped():
    proj = project_zbuffer(PointCloud([[100.0, 0.0, 1.0]]), K)
    assert proj.dropped_outside == 1
    assert proj.depth.valid_count == 0


def test_empty_cloud_projects_to_empty_image():
    proj = project_zbuffer(PointCloud(np.zeros((0, 3))), K)
    assert proj.depth.valid_count == 0


@pytest.mark.parametrize("seed", range(50))
def test_round_trip_exact(seed):
    sparse = random_sparse(np.random.default_rng(seed))
    back = project_zbuffer(unproject(sparse, K), K).depth
    np.testing.assert_array_equal(back.values, sparse.values)


def zbuffer_oracle(pts, K):
    out = np.zeros((K.height, K.width))
    for x, y, z in pts:
        if z <= 0:
            continue
        u = int(np.floor(K.fx * x / z + K.cx + 0.5))
        v = int(np.floor(K.fy * y / z + K.cy + 0.5))
        if 0 <= u < K.width and 0 <= v < K.height and (out[v, u] == 0 or z < out[v, u]):
            out[v, u] = z
    return out


def test_zbuffer_matches_bruteforce():
    small = CameraIntrinsics(fx=8.0, fy=7.0, cx=4.5, cy=3.5, width=10, height=8)
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = rng.integers(0, 60)
        pts = np.column_stack([rng.uniform(-4, 4, n), rng.uniform(-4, 4, n), rng.uniform(-1, 6, n)])
        got = project_zbuffer(PointCloud(pts), small).depth.values
        np.testing.assert_array_equal(got, zbuffer_oracle(pts, small))


# --- subsample -------------------------------------------------------------


def test_subsample_paper_count():
    rng = np.random.default_rng(0)
    vals = np.zeros(352 * 1216)
    vals[rng.choice(vals.size, 17000, replace=False)] = rng.uniform(1, 80, 17000)
    d = DepthImage(vals.reshape(352, 1216))
    assert subsample(d, 1 / 4, seed=1).valid_count == 4250


def test_subsample_identity_and_determinism():
    d = random_sparse(np.random.default_rng(3))
    np.testing.assert_array_equal(subsample(d, 1, seed=9).values, d.values)
    a, b = subsample(d, 1 / 16, seed=5), subsample(d, 1 / 16, seed=5)
    np.testing.assert_array_equal(a.values, b.values)


@given(st.integers(0, 2000), st.sampled_from([1, 4, 16, 64, 256]), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_subsample_keeps_values_of_a_subset(n_valid, denom, seed):
    rng = np.random.default_rng(seed)
    vals = np.zeros(64 * 96)
    vals[rng.choice(vals.size, n_valid, replace=False)] = rng.uniform(1, 50, n_valid)
    d = DepthImage(vals.reshape(64, 96))
    out = subsample(d, 1 / denom, seed)
    assert out.valid_count == int(np.floor(n_valid / denom + 0.5))
    kept = out.valid
    np.testing.assert_array_equal(out.values[kept], d.values[kept])


@pytest.mark.parametrize("ratio", [0, -0.5, 1.5])
def test_subsample_bad_ratio(ratio):
    with pytest.raises(ValueError):
        subsample(DepthImage.empty(4, 4), ratio, 0)


# --- file formats ------------------------------------------------------------


def test_depth_pgm_layout(tmp_path):
    d = DepthImage(np.array([[0.0, 1.0], [65.535, 0.0015]]))
    data = encode_depth_pgm(d)
    assert data.startswith(b"P5\n2 2\n65535\n")
    np.testing.assert_array_equal(np.frombuffer(data[-8:], ">u2"), [0, 1000, 65535, 2])


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_depth_round_trip_within_half_mm(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("d") / "x.pgm"
    d = random_sparse(np.random.default_rng(seed), 16, 32, 0.3, z_max=65.5)
    write_depth_pgm(path, d)
    back = read_depth_pgm(path)
    assert np.max(np.abs(back.values - d.values)) <= 0.0005 + 1e-12
    np.testing.assert_array_equal(back.valid, d.values >= 0.0005)


def test_depth_out_of_range(tmp_path):
    with pytest.raises(DepthRangeError):
        write_depth_pgm(tmp_path / "x.pgm", DepthImage(np.full((2, 2), 65.536)))


def test_truncated_depth(tmp_path):
    path = tmp_path / "x.pgm"
    write_depth_pgm(path, DepthImage(np.ones((4, 4))))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(PayloadLengthError, match="x.pgm"):
        read_depth_pgm(path)


def test_bad_header(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P2\n2 2\n65535\n" + bytes(8))
    with pytest.raises(HeaderError):
        read_depth_pgm(path)


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        read_depth_pgm(tmp_path / "nope.pgm")


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P5\n# made by hand\n1 1\n65535\n" + np.array([1234], ">u2").tobytes())
    assert read_depth_pgm(path).values[0, 0] == pytest.approx(1.234)


def test_rgb_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (3, 16, 32)) / 255.0
    write_rgb_ppm(tmp_path / "c.ppm", rgb)
    raw = (tmp_path / "c.ppm").read_bytes()
    assert raw.startswith(b"P6\n32 16\n255\n")
    assert len(raw) == len(b"P6\n32 16\n255\n") + 16 * 32 * 3
    np.testing.assert_array_equal(read_rgb_ppm(tmp_path / "c.ppm"), rgb)


def test_calibration_round_trip(tmp_path):
    write_calibration(tmp_path / "calib.txt", K)
    assert read_calibration(tmp_path / "calib.txt") == K


def test_point_cloud_round_trip(tmp_path):
    pts = np.random.default_rng(1).normal(size=(50, 3))
    write_point_cloud(tmp_path / "p.xyz", PointCloud(pts))
    np.testing.assert_array_equal(read_point_cloud(tmp_path / "p.xyz").points, pts)
