"""Data layer: KITTI parsing/projection, completion, synthetic scenes."""

import numpy as np
import pytest
import torch
from PIL import Image

from densevo.data import (
    CameraIntrinsics,
    ClassicalFill,
    DepthCompletionError,
    ExternalCompletion,
    PrecomputedDepth,
    SyntheticSceneConfig,
    complete_depth,
    generate_synthetic_sequence,
    load_kitti_sequence,
    project_lidar,
    rigid_flow,
)
from densevo.data.kitti import DATA_ROOT_ENV, load_poses, read_depth_png, write_depth_png
from densevo.flow import DepthMap, warp
from densevo.geometry import Pose, compose, relative


def write_kitti_tree(root, n_frames=4, image_hw=(100, 330), fx=100.0, cx=165.0, cy=50.0):
    """Minimal KITTI odometry layout with straight-line forward motion."""
    seq = root / "sequences" / "03"
    (seq / "image_2").mkdir(parents=True)
    (seq / "velodyne").mkdir()
    (root / "poses").mkdir()
    h, w = image_hw
    rng = np.random.default_rng(0)
    base = (rng.random((h, w, 3)) * 255).astype(np.uint8)
    for i in range(n_frames):
        Image.fromarray(np.roll(base, i, axis=1)).save(seq / "image_2" / f"{i:06d}.png")
        pts = rng.uniform(-1, 1, size=(50, 4)).astype(np.float32)
        pts[:, 2] = rng.uniform(5, 20, size=50)  # z forward after Tr
        pts.tofile(seq / "velodyne" / f"{i:06d}.bin")
    calib = [
        f"P2: {fx} 0 {cx} 0 0 {fx} {cy} 0 0 0 1 0",
        "Tr: 1 0 0 0 0 1 0 0 0 0 1 0",
    ]
    (seq / "calib.txt").write_text("\n".join(calib) + "\n")
    lines = []
    for i in range(n_frames):
        lines.append(f"1 0 0 0 0 1 0 0 0 0 1 {0.5 * i}")
    (root / "poses" / "03.txt").write_text("\n".join(lines) + "\n")
    return root


class TestPoseFile:
    def test_identity_line(self, tmp_path):
        p = tmp_path / "00.txt"
        p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        poses = load_poses(p)
        assert len(poses) == 1
        assert poses[0].is_close(Pose.identity())

    def test_malformed_line_rejected(self, tmp_path):
        p = tmp_path / "00.txt"
        p.write_text("1 0 0\n")
        with pytest.raises(ValueError):
            load_poses(p)


class TestProjectLidar:
    def _intr(self):
        return CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48)

    def test_optical_axis_point(self):
        dm = project_lidar(np.array([[0.0, 0.0, 10.0]]), np.eye(4), self._intr())
        assert dm.valid[24, 32]
        assert dm.depth[24, 32] == pytest.approx(10.0)
        assert dm.valid.sum() == 1

    def test_point_behind_camera_culled(self):
        dm = project_lidar(np.array([[0.0, 0.0, -5.0]]), np.eye(4), self._intr())
        assert not dm.valid.any()

    def test_no_points_is_empty_not_error(self):
        dm = project_lidar(np.zeros((0, 3)), np.eye(4), self._intr())
        assert not dm.valid.any()

    def test_matches_brute_force_zbuffer_oracle(self):
        rng = np.random.default_rng(1)
        intr = self._intr()
        pts = np.column_stack(
            [rng.uniform(-3, 3, 500), rng.uniform(-2, 2, 500), rng.uniform(-2, 15, 500)]
        )
        transform = Pose(np.array([0.9, 0.1, -0.05, 0.2]), np.array([0.1, -0.2, 0.3])).matrix()
        dm = project_lidar(pts, transform, intr)

        expect = np.full((48, 64), np.inf)
        for p in pts:
            c = transform[:3, :3] @ p + transform[:3, 3]
            if c[2] <= 1e-9:
                continue
            u = int(np.rint(intr.fx * c[0] / c[2] + intr.cx))
            v = int(np.rint(intr.fy * c[1] / c[2] + intr.cy))
            if 0 <= u < 64 and 0 <= v < 48:
                expect[v, u] = min(expect[v, u], c[2])
        valid = np.isfinite(expect)
        assert np.array_equal(dm.valid, valid)
        assert np.abs(dm.depth[valid] - expect[valid]).max() < 1e-12


class TestDepthPng:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        valid = rng.random((20, 30)) > 0.5
        depth = np.where(valid, np.round(rng.uniform(1, 60, (20, 30)) * 256) / 256, 0.0)
        dm = DepthMap(depth, valid)
        write_depth_png(tmp_path / "d.png", dm)
        back = read_depth_png(tmp_path / "d.png")
        assert np.array_equal(back.valid, dm.valid)
        assert np.abs(back.depth - dm.depth).max() < 1e-9


class TestKittiSequence:
    def test_pairs_and_relative_poses(self, tmp_path):
        root = write_kitti_tree(tmp_path)
        pairs = list(load_kitti_sequence(root, "03", target_hw=(96, 320)))
        assert len(pairs) == 3  # 4 pose lines -> 3 pairs
        poses = load_poses(root / "poses" / "03.txt")
        for i, pair in enumerate(pairs):
            assert compose(poses[i], pair.gt_relative).is_close(poses[i + 1], atol=1e-9)
            assert pair.rgb_a.shape == (3, 96, 320)
            assert pair.height % 16 == 0 and pair.width % 16 == 0

    def test_crop_adjusts_intrinsics(self, tmp_path):
        root = write_kitti_tree(tmp_path)
        pair = next(iter(load_kitti_sequence(root, "03", target_hw=(96, 320))))
        # bottom-center crop of a 100x330 frame: x0 = 5, y0 = 4
        assert pair.intrinsics.cx == pytest.approx(165.0 - 5)
        assert pair.intrinsics.cy == pytest.approx(50.0 - 4)

    def test_sparse_depth_projected(self, tmp_path):
        root = write_kitti_tree(tmp_path)
        pair = next(iter(load_kitti_sequence(root, "03", target_hw=(96, 320))))
        assert pair.sparse_depth_a.valid.any()
        assert pair.sparse_depth_a.depth[pair.sparse_depth_a.valid].min() > 0

    def test_missing_sequence_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list(load_kitti_sequence(tmp_path, "99"))

    def test_env_var_overrides_root(self, tmp_path, monkeypatch):
        root = write_kitti_tree(tmp_path)
        monkeypatch.setenv(DATA_ROOT_ENV, str(root))
        pairs = list(load_kitti_sequence("/nonexistent", "03", target_hw=(96, 320)))
        assert len(pairs) == 3


class TestCompletion:
    def test_dense_input_passes_through_unchanged(self):
        rng = np.random.default_rng(3)
        dense = DepthMap.dense(rng.uniform(2, 10, (24, 32)))
        out = complete_depth(dense, None, ClassicalFill())
        assert np.array_equal(out.depth, dense.depth)

    def test_single_valid_pixel_fills_constant(self):
        depth = np.zeros((16, 16))
        valid = np.zeros((16, 16), dtype=bool)
        depth[5, 7], valid[5, 7] = 4.25, True
        out = complete_depth(DepthMap(depth, valid), None, ClassicalFill())
        assert out.valid.all()
        assert np.abs(out.depth - 4.25).max() < 1e-12

    def test_no_valid_pixels_rejected(self):
        with pytest.raises(DepthCompletionError):
            complete_depth(DepthMap.empty(8, 8), None, ClassicalFill())

    def test_fallback_error_vs_synthetic_ground_truth_diagnostic(self, capsys):
        config = SyntheticSceneConfig(width=64, height=48, frame_count=2, sparse_fraction=0.12)
        pair = generate_synthetic_sequence(config, seed=5)[0]
        out = complete_depth(pair.sparse_depth_a, pair.rgb_a, ClassicalFill())
        mae = np.abs(out.depth - pair.dense_depth_a.depth).mean()
        print(f"classical-fill MAE vs exact depth: {mae:.4f} m")
        assert np.isfinite(mae)

    def test_precomputed_backend(self, tmp_path):
        rng = np.random.default_rng(4)
        dense = DepthMap.dense(np.round(rng.uniform(1, 30, (16, 16)) * 256) / 256)
        write_depth_png(tmp_path / "000002.png", dense)
        backend = PrecomputedDepth(tmp_path)
        out = complete_depth(DepthMap.empty(16, 16), None, backend, frame_index=2)
        assert np.abs(out.depth - dense.depth).max() < 1e-9
        with pytest.raises(DepthCompletionError):
            complete_depth(DepthMap.empty(16, 16), None, backend, frame_index=9)

    def test_external_backend_contract(self):
        good = ExternalCompletion(lambda d, v, rgb: np.full_like(d, 3.0))
        out = complete_depth(DepthMap.empty(8, 8), None, good)
        assert out.valid.all() and (out.depth == 3.0).all()
        bad = ExternalCompletion(lambda d, v, rgb: np.full_like(d, -1.0))
        with pytest.raises(DepthCompletionError):
            complete_depth(DepthMap.empty(8, 8), None, bad)


class TestSyntheticScenes:
    def test_static_camera_identity_and_zero_flow(self):
        config = SyntheticSceneConfig(width=64, height=48, frame_count=3, path_kind="static")
        pairs = generate_synthetic_sequence(config, seed=0)
        for pair in pairs:
            assert pair.gt_relative.is_close(Pose.identity())
            flow, valid = rigid_flow(pair.dense_depth_a, pair.gt_relative, pair.intrinsics)
            assert valid.all()
            assert np.abs(flow).max() < 1e-9
            assert np.array_equal(pair.rgb_a, pair.rgb_b)

    def test_lateral_motion_matches_analytic_flow(self):
        d, dx, fx = 6.0, 0.12, 100.0
        config = SyntheticSceneConfig(
            width=64,
            height=48,
            frame_count=3,
            focal=fx,
            path_kind="lateral",
            layout="wall",
            base_speed=dx,
            speed_jitter=0.0,
            wall_distance=d,
        )
        pairs = generate_synthetic_sequence(config, seed=1)
        for pair in pairs:
            assert np.abs(pair.dense_depth_a.depth - d).max() < 1e-9
            flow, valid = rigid_flow(pair.dense_depth_a, pair.gt_relative, pair.intrinsics)
            assert valid.all()
            magnitude = np.hypot(flow[0], flow[1])
            assert np.abs(magnitude - fx * dx / d).max() < 0.1
            assert np.all(flow[0] < 0)  # camera moves +x, content moves -x

    def test_same_seed_is_bit_identical(self):
        config = SyntheticSceneConfig(width=48, height=32, frame_count=4)
        a = generate_synthetic_sequence(config, seed=7)
        b = generate_synthetic_sequence(config, seed=7)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.rgb_a, pb.rgb_a)
            assert np.array_equal(pa.sparse_depth_a.depth, pb.sparse_depth_a.depth)
            assert np.array_equal(pa.dense_depth_b.depth, pb.dense_depth_b.depth)
            assert pa.gt_relative.is_close(pb.gt_relative, atol=0)

    def test_different_seed_differs(self):
        config = SyntheticSceneConfig(width=48, height=32, frame_count=4)
        a = generate_synthetic_sequence(config, seed=7)
        b = generate_synthetic_sequence(config, seed=8)
        assert not a[0].gt_relative.is_close(b[0].gt_relative, atol=1e-12)

    def test_projection_round_trip_reproduces_depth(self):
        # sample 3-D points from the exact depth, reproject, compare
        config = SyntheticSceneConfig(width=64, height=48, frame_count=2)
        pair = generate_synthetic_sequence(config, seed=2)[0]
        cam = pair.intrinsics
        depth = pair.dense_depth_a.depth
        rng = np.random.default_rng(3)
        vs = rng.integers(0, cam.height, 300)
        us = rng.integers(0, cam.width, 300)
        z = depth[vs, us]
        pts = np.column_stack([(us - cam.cx) / cam.fx * z, (vs - cam.cy) / cam.fy * z, z])
        dm = project_lidar(pts, np.eye(4), cam)
        hit = dm.valid
        assert hit.sum() > 0
        assert np.abs(dm.depth[hit] - depth[hit]).max() < 1e-6

    def test_degenerate_path_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSceneConfig(frame_count=1)
        with pytest.raises(ValueError):
            SyntheticSceneConfig(width=50)

    def test_warp_by_exact_flow_aligns_frames(self):
        config = SyntheticSceneConfig(width=64, height=48, frame_count=2, base_speed=0.1)
        pair = generate_synthetic_sequence(config, seed=4)[0]
        flow, valid = rigid_flow(pair.dense_depth_a, pair.gt_relative, pair.intrinsics)
        rgb_b = torch.from_numpy(pair.rgb_b[None])
        flow_t = torch.from_numpy(flow[None])
        warped = warp(rgb_b, flow_t)[0].numpy()
        # keep pixels whose sample stays inside frame b and away from
        # depth discontinuities (occlusion edges are not photoconsistent)
        h, w = valid.shape
        us, vs = np.meshgrid(np.arange(w), np.arange(h))
        inside = (
            valid
            & (us + flow[0] >= 1)
            & (us + flow[0] <= w - 2)
            & (vs + flow[1] >= 1)
            & (vs + flow[1] <= h - 2)
        )
        gy, gx = np.gradient(pair.dense_depth_a.depth)
        inside &= (np.abs(gy) < 0.05) & (np.abs(gx) < 0.05)
        err = np.abs(warped - pair.rgb_a)[:, inside]
        # bilinear resampling blurs the finest texture octave (~5 px
        # wavelength), so the residual is small but clearly nonzero
        assert inside.sum() > 500
        assert err.mean() < 0.03
        assert np.percentile(err, 99) < 0.1
