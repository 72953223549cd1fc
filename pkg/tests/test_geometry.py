"""Backprojection, surface normals (both kernel backends), gravity, HDHA."""
import numpy as np
import pytest

from depthkit import (
    CameraIntrinsics,
    DepthMap,
    depth_to_pointcloud,
    estimate_gravity,
    hdha_encode,
    surface_normals,
)
from depthkit import _kernels
from depthkit.geometry import backproject_grid, cloud_to_grid, normals_grid

CAM = CameraIntrinsics(fx=100.0, fy=100.0, cx=39.5, cy=29.5, baseline=0.075)


def _floor_wall_scene(h=60, w=80, cam_height=1.2, wall_z=6.0, cam=CAM):
    """Horizontal floor below the camera meeting a frontal wall."""
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    ys = (vs - cam.cy) / cam.fy
    depth = np.full((h, w), wall_z)
    floor = ys > cam_height / wall_z
    depth[floor] = cam_height / ys[floor]
    return DepthMap(depth), floor


# ----------------------------------------------------------- backprojection

def test_backprojection_hand_case():
    cam = CameraIntrinsics(fx=500.0, fy=400.0, cx=1.0, cy=1.0)
    depth = DepthMap(np.array([[2.0, 0.0], [4.0, 1.0]]))
    pts = backproject_grid(depth, cam)
    # x = (u - cx) / fx * z, y = (v - cy) / fy * z, z = depth
    np.testing.assert_allclose(pts[0, 0], [-1.0 / 500.0 * 2.0, -1.0 / 400.0 * 2.0, 2.0])
    np.testing.assert_allclose(pts[1, 1], [0.0, 0.0, 1.0])


def test_pointcloud_keeps_only_valid_pixels():
    depth = DepthMap(np.array([[1.0, 0.0], [np.nan, 3.0]]))
    cloud = depth_to_pointcloud(depth, CAM)
    assert cloud.points.shape == (2, 3)
    grid, valid = cloud_to_grid(cloud)
    assert valid.sum() == 2
    assert grid.shape == (2, 2, 3)
    assert not valid[0, 1] and not valid[1, 0]


# ----------------------------------------------------------------- normals

@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_plane_normals_both_backends(backend, monkeypatch):
    monkeypatch.setenv("DEPTHKIT_NUMBA", "1" if backend == "numba" else "0")
    if backend == "numba" and not _kernels.using_numba():
        pytest.skip("numba unavailable")
    assert _kernels.backend_name() == backend
    depth, floor = _floor_wall_scene()
    normals, valid = normals_grid(depth, CAM, k_neighbors=25)
    # squarely inside each region the normal is exact; pixels whose
    # windows straddle the floor/wall crease (rows 50-54) are excluded
    wall_core = ~floor
    wall_core[20:, :] = False
    floor_core = floor.copy()
    floor_core[:55, :] = False
    for region, expected in ((wall_core, [0.0, 0.0, -1.0]), (floor_core, [0.0, -1.0, 0.0])):
        region = region & valid
        assert region.sum() > 100
        errs = np.linalg.norm(normals[region] - expected, axis=1)
        assert errs.max() < 1e-6


def test_backends_agree_on_curved_scene():
    if not _kernels.using_numba():
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(4)
    depth_vals = 3.0 + 0.5 * rng.standard_normal((40, 50)).cumsum(axis=1) / 10
    depth_vals[rng.random((40, 50)) < 0.07] = 0.0
    depth = DepthMap(np.abs(depth_vals))
    cloud_pts = backproject_grid(depth, CAM)
    na, va = _kernels.normals_from_points(cloud_pts, depth.valid, 25)
    import os
    os.environ["DEPTHKIT_NUMBA"] = "0"
    try:
        nb, vb = _kernels.normals_from_points(cloud_pts, depth.valid, 25)
    finally:
        os.environ.pop("DEPTHKIT_NUMBA")
    np.testing.assert_array_equal(va, vb)
    diff = np.linalg.norm(na[va] - nb[vb], axis=1)
    assert diff.max() < 1e-6


def test_normals_face_the_camera():
    depth, _ = _floor_wall_scene()
    cloud = depth_to_pointcloud(depth, CAM)
    normals, ok = surface_normals(cloud, k_neighbors=25)
    assert normals.shape == cloud.points.shape
    dots = np.einsum("ij,ij->i", normals[ok], cloud.points[ok])
    assert (dots <= 1e-12).all()


def test_isolated_points_get_no_normal():
    vals = np.zeros((9, 9))
    vals[4, 4] = 2.0
    vals[0, 0] = 3.0
    depth = DepthMap(vals)
    normals, valid = normals_grid(depth, CAM, k_neighbors=9)
    # two points can never span a plane
    assert not valid.any()


def test_window_grows_until_enough_points():
    # a sparse checkerboard forces windows to widen past the base radius
    vals = np.zeros((21, 21))
    us, vs = np.meshgrid(np.arange(21), np.arange(21))
    keep = (us + vs) % 4 == 0
    ys = (vs - 10.0) / 100.0
    vals[keep] = 5.0 - ys[keep]  # gently sloped sheet, full rank
    depth = DepthMap(vals)
    normals, valid = normals_grid(depth, CAM, k_neighbors=25)
    interior = np.zeros_like(valid)
    interior[6:15, 6:15] = True
    assert (valid & interior & keep).sum() > 10


# ----------------------------------------------------------------- gravity

def test_gravity_recovers_from_tilted_start():
    depth, _ = _floor_wall_scene()
    normals, valid = normals_grid(depth, CAM, k_neighbors=25)
    tilt = np.deg2rad(10.0)
    initial = np.array([np.sin(tilt), np.cos(tilt), 0.0])
    est = estimate_gravity(normals, valid, initial=initial)
    angle = np.rad2deg(np.arccos(abs(float(est.direction @ [0.0, 1.0, 0.0]))))
    assert angle < 1.0
    assert est.converged


def test_gravity_default_seed_is_camera_down():
    depth, _ = _floor_wall_scene()
    normals, valid = normals_grid(depth, CAM, k_neighbors=25)
    est = estimate_gravity(normals, valid)
    assert est.direction @ [0.0, 1.0, 0.0] > 0.99


def test_gravity_needs_normals():
    with pytest.raises(ValueError):
        estimate_gravity(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        estimate_gravity(np.ones((4, 3)), initial=np.zeros(3))


# -------------------------------------------------------------------- hdha

def test_hdha_channels_on_floor_wall_scene():
    depth, floor = _floor_wall_scene()
    enc = hdha_encode(depth, CAM)
    # disparity: fx * baseline / z, exact on the wall
    wall = ~floor & enc.valid
    np.testing.assert_allclose(enc.hd[wall], 100.0 * 0.075 / 6.0, rtol=1e-12)
    # height is shifted so the lowest valid point sits exactly at 0
    assert enc.height[enc.valid].min() == 0.0
    # floor normals oppose gravity (180 degrees), wall normals are orthogonal
    floor_core = floor.copy()
    floor_core[:55, :] = False
    wall_core = ~floor
    wall_core[20:, :] = False
    assert np.abs(enc.angle[floor_core & enc.valid] - 180.0).max() < 0.5
    assert np.abs(enc.angle[wall_core & enc.valid] - 90.0).max() < 0.5


def test_hdha_fixed_gravity_skips_estimation():
    depth, _ = _floor_wall_scene()
    g = np.array([0.0, 1.0, 0.0])
    enc = hdha_encode(depth, CAM, gravity=g)
    enc2 = hdha_encode(depth, CAM)
    np.testing.assert_allclose(enc.angle[enc.valid], enc2.angle[enc2.valid], atol=0.5)


def test_hdha_height_spans_scene_extent():
    depth, _ = _floor_wall_scene(cam_height=1.2)
    enc = hdha_encode(depth, CAM)
    # scene spans from the floor to the top of the wall
    top = enc.height[enc.valid].max()
    # wall top at y = (0 - cy)/fy * 6 = -1.77m, floor at +1.2m below camera
    assert top == pytest.approx(1.2 + 29.5 / 100.0 * 6.0, rel=0.05)
