import numpy as np

from cover.bvh import build_bvh
from cover.geom import pixel_to_dir, upright_pose
from cover.render import (ErpImage, pixel_dirs_camera, render_erp, unproject,
                          warp_cloud)
from cover.scene import RoomSpec, TriMesh, gen_room_scene


def _cube_bvh(side=2.0):
    mesh = gen_room_scene(RoomSpec(side, side, side), 0)
    return build_bvh(mesh)


def test_cube_centre_depth_range():
    side = 2.0
    bvh = _cube_bvh(side)
    pose = upright_pose(np.array([1.0, 1.0, 1.0]))
    depth, _ = render_erp(bvh, pose, 128, 64)
    d = depth.payload
    assert np.all(d > 0)
    assert d.min() >= 1.0 - 1e-6
    assert d.max() <= np.sqrt(3.0) + 1e-6
    # equator row looks at walls 1 m away at its nearest pixels
    assert abs(d[32].min() - 1.0) < 0.01


def test_depth_matches_brute_force_at_64x32():
    mesh = gen_room_scene(RoomSpec(4.0, 3.0, 2.5, n_random_furniture=3), 5)
    bvh = build_bvh(mesh)
    pose = upright_pose(np.array([2.0, 1.3, 1.5]))
    d_bvh, _ = render_erp(bvh, pose, 64, 32)
    d_ref, _ = render_erp(bvh, pose, 64, 32, brute_force=True)
    assert np.max(np.abs(d_bvh.payload - d_ref.payload)) <= 1e-6


def test_outside_camera_away_hemisphere_is_zero():
    # ERP covers the full sphere, so an outside camera still sees the scene
    # in some directions; the hemisphere facing away must be all zeros.
    mesh = gen_room_scene(RoomSpec(2.0, 2.0, 2.0), 0)
    bvh = build_bvh(mesh)
    pose = upright_pose(np.array([1.0, 1.0, 5.0]))  # outside, on the +z side
    depth, _ = render_erp(bvh, pose, 128, 64)
    dirs = pixel_dirs_camera(128, 64) @ pose.rotation.to_matrix()
    away = dirs[..., 2] > 0.1  # pointing further along +z, away from the room
    assert np.all(depth.payload[away] == 0.0)
    assert np.any(depth.payload > 0)


def test_rgb_shading_uses_face_color():
    mesh = gen_room_scene(RoomSpec(2.0, 2.0, 2.0), 0)
    bvh = build_bvh(mesh)
    _, rgb = render_erp(bvh, upright_pose(np.array([1.0, 1.0, 1.0])), 64, 32)
    assert rgb.payload.shape == (32, 64, 3)
    assert rgb.payload.max() > 0


def test_unproject_empty_depth():
    pose = upright_pose(np.zeros(3))
    pts = unproject(ErpImage(np.zeros((8, 16), np.float32)), pose, 1)
    assert pts.shape == (0, 3)


def test_unproject_points_lie_on_room_shell():
    bvh = _cube_bvh(2.0)
    pose = upright_pose(np.array([1.0, 0.8, 1.2]))
    depth, _ = render_erp(bvh, pose, 256, 128)
    pts = unproject(depth, pose, 2)
    dist_to_planes = np.minimum(np.abs(pts), np.abs(pts - 2.0)).min(axis=1)
    assert np.max(dist_to_planes) <= 1e-4
    assert np.all((pts >= -1e-4) & (pts <= 2.0 + 1e-4))


def test_unproject_stride_quarters_points():
    bvh = _cube_bvh(2.0)
    pose = upright_pose(np.array([1.0, 1.0, 1.0]))
    depth, _ = render_erp(bvh, pose, 128, 64)
    n1 = len(unproject(depth, pose, 1))
    n2 = len(unproject(depth, pose, 2))
    assert abs(n2 - n1 / 4) <= 0.05 * n1 / 4 + 1


def test_warp_empty_cloud():
    res = warp_cloud(np.empty((0, 3)), upright_pose(np.zeros(3)), 32, 16)
    assert not res.mask.any()


def test_warp_single_forward_point():
    w, h = 64, 32
    C = np.array([1.0, 1.0, 1.0])
    pose = upright_pose(C)
    # camera forward (+z in camera frame) is world -z for the upright pose
    pt = C + np.array([0.0, 0.0, -2.0])
    res = warp_cloud(pt[None, :], pose, w, h, splat_radius=1)
    assert res.mask[h // 2, w // 2]
    assert np.isclose(res.depth.payload[h // 2, w // 2], 2.0, atol=1e-6)
    assert res.mask.sum() == 9  # (2r+1)^2 neighborhood


def test_warp_point_order_invariant():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(5000, 3))
    pose = upright_pose(np.zeros(3))
    a = warp_cloud(pts, pose, 128, 64)
    b = warp_cloud(pts[rng.permutation(len(pts))], pose, 128, 64)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.depth.payload, b.depth.payload)


def test_range_depth_on_analytic_plane():
    # Single huge floor quad; camera h above it: depth = h / (-dir.y).
    verts = np.array([[-50, 0, -50], [50, 0, -50], [50, 0, 50], [-50, 0, 50]],
                     float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    mesh = TriMesh(verts, tris, np.full((2, 3), 180, np.uint8))
    bvh = build_bvh(mesh)
    h_cam = 1.7
    pose = upright_pose(np.array([0.0, h_cam, 0.0]))
    depth, _ = render_erp(bvh, pose, 128, 64)
    dirs = pixel_dirs_camera(128, 64) @ pose.rotation.to_matrix()
    down = dirs[..., 1] < -0.05  # steep enough to stay inside the quad
    expect = h_cam / (-dirs[..., 1][down])
    got = depth.payload[down]
    hit = got > 0
    assert hit.mean() > 0.95
    assert np.allclose(got[hit], expect[hit], rtol=1e-5)


def test_self_warp_consistency(cluttered_room):
    _, bvh = cluttered_room
    # Splat bleeding scales with pixel solid angle, so the agreement bound
    # is checked at the full render resolution.
    pose = upright_pose(np.array([2.5, 1.2, 2.0]))
    w, h = 2048, 1024
    depth, _ = render_erp(bvh, pose, w, h)
    cloud = unproject(depth, pose, 1)
    res = warp_cloud(cloud, pose, w, h)
    valid = depth.payload > 0
    assert res.mask[valid].mean() >= 0.95
    masked = valid & res.mask
    err = np.abs(res.depth.payload[masked] - depth.payload[masked])
    delta = 0.035  # 0.5% of this room's AABB diagonal
    assert (err <= delta).mean() >= 0.99
