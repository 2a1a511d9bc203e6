"""Tests for dense-cloud construction and exact neighborhood queries."""

import numpy as np
import pytest

from lidar_ensemble.errors import FileFormatError
from lidar_ensemble.geometry import PointCloud, RigidTransform
from lidar_ensemble.neighbors import (
    Neighborhoods,
    SpatialIndex,
    build_dense_cloud,
    knn_epsilon,
    precompute_neighborhoods,
    read_neighborhoods,
    write_neighborhoods,
)
from lidar_ensemble.subsample import PredictionMatrix


def brute_force_neighbors(points, query, k, eps=None):
    """O(N*M) oracle: sort by (distance, index), truncate, epsilon-filter."""
    d = np.sqrt(((points - query) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(len(points)), d))[:k]
    dd = d[order]
    if eps is not None:
        keep = dd <= eps
        order, dd = order[keep], dd[keep]
    return order, dd


def uniform_pred(n, k_classes, rng):
    raw = rng.uniform(0.05, 1.0, size=(n, k_classes))
    return PredictionMatrix(probs=raw / raw.sum(1, keepdims=True), point_index=np.arange(n))


def translation(x, y, z):
    return RigidTransform(np.eye(3), [x, y, z])


class TestBuildDenseCloud:
    def test_window_zero_is_reference_scan(self):
        rng = np.random.default_rng(0)
        scans = []
        poses = []
        for i in range(3):
            cloud = PointCloud(points=rng.normal(size=(20, 3)), frame_id=i)
            scans.append((cloud, uniform_pred(20, 3, rng)))
            poses.append(translation(float(i), 0.0, 0.0))
        dense = build_dense_cloud(scans, poses, t=1, window=0)
        assert len(dense) == 20
        assert np.abs(dense.points - scans[1][0].points).max() < 1e-12
        assert np.all(dense.temporal_offset == 0)
        assert np.all(dense.source_frame == 1)

    def test_relative_translation_between_frames(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(10, 3))
        scans = [
            (PointCloud(points=pts, frame_id=0), uniform_pred(10, 2, rng)),
            (PointCloud(points=pts, frame_id=1), uniform_pred(10, 2, rng)),
        ]
        # frame 1 sits one meter ahead in the world: its points land shifted
        # by +1 x when expressed in frame 0
        poses = [translation(0, 0, 0), translation(1, 0, 0)]
        dense = build_dense_cloud(scans, poses, t=0, window=1)
        from_frame1 = dense.points[dense.source_frame == 1]
        expected = pts + np.array([1.0, 0.0, 0.0])
        assert np.abs(from_frame1 - expected).max() < 1e-9
        assert np.all(dense.temporal_offset[dense.source_frame == 1] == 1)

    def test_per_point_transform_oracle(self):
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        poses = [RigidTransform(q, rng.normal(size=3)), translation(2.0, -1.0, 0.5)]
        pts = rng.normal(size=(15, 3))
        scans = [
            (PointCloud(points=rng.normal(size=(5, 3)), frame_id=0), uniform_pred(5, 2, rng)),
            (PointCloud(points=pts, frame_id=1), uniform_pred(15, 2, rng)),
        ]
        dense = build_dense_cloud(scans, poses, t=0, window=1)
        got = dense.points[dense.source_frame == 1]
        inv_rot = poses[0].rotation.T
        for i in range(15):
            world = poses[1].rotation @ pts[i] + poses[1].translation
            expected = inv_rot @ (world - poses[0].translation)
            assert np.abs(got[i] - expected).max() < 1e-9

    def test_stride_and_bounds(self):
        rng = np.random.default_rng(3)
        scans = [(PointCloud(points=rng.normal(size=(4, 3)), frame_id=i), uniform_pred(4, 2, rng))
                 for i in range(10)]
        poses = [translation(i, 0, 0) for i in range(10)]
        dense = build_dense_cloud(scans, poses, t=5, window=4, stride=2)
        assert sorted(set(dense.source_frame.tolist())) == [1, 3, 5, 7, 9]
        assert len(dense) == 5 * 4

    def test_point_count_is_sum_of_selected_scans(self):
        rng = np.random.default_rng(4)
        sizes = [7, 13, 5]
        scans = [(PointCloud(points=rng.normal(size=(n, 3)), frame_id=i), uniform_pred(n, 2, rng))
                 for i, n in enumerate(sizes)]
        poses = [translation(i, 0, 0) for i in range(3)]
        dense = build_dense_cloud(scans, poses, t=1, window=5)
        assert len(dense) == sum(sizes)

    def test_sensor_distance_is_pre_transform(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(30, 3)) + np.array([5.0, 0.0, 0.0])
        scans = [
            (PointCloud(points=rng.normal(size=(5, 3)), frame_id=0), uniform_pred(5, 2, rng)),
            (PointCloud(points=pts, frame_id=1), uniform_pred(30, 2, rng)),
        ]
        poses = [translation(0, 0, 0), translation(100.0, 0, 0)]
        dense = build_dense_cloud(scans, poses, t=0, window=1)
        got = dense.sensor_distance[dense.source_frame == 1]
        assert np.abs(got - np.linalg.norm(pts, axis=1)).max() < 1e-9

    def test_missing_pose_or_prediction(self):
        rng = np.random.default_rng(6)
        cloud = PointCloud(points=rng.normal(size=(4, 3)))
        scans = [(cloud, uniform_pred(4, 2, rng)), (cloud, None)]
        poses = [translation(0, 0, 0), translation(1, 0, 0)]
        with pytest.raises(ValueError, match="missing prediction"):
            build_dense_cloud(scans, poses, t=0, window=1)
        scans = [(cloud, uniform_pred(4, 2, rng)), (cloud, uniform_pred(4, 2, rng))]
        with pytest.raises(ValueError, match="missing pose"):
            build_dense_cloud(scans, poses[:1], t=0, window=1)

    def test_prediction_reordered_by_point_index(self):
        rng = np.random.default_rng(7)
        cloud = PointCloud(points=rng.normal(size=(6, 3)))
        perm = rng.permutation(6)
        raw = rng.uniform(0.1, 1.0, size=(6, 2))
        probs = raw / raw.sum(1, keepdims=True)
        pred = PredictionMatrix(probs=probs, point_index=perm)
        dense = build_dense_cloud([(cloud, pred)], [translation(0, 0, 0)], t=0, window=0)
        # dense probs must follow cloud order, not matrix row order
        assert np.abs(dense.probs[perm] - probs).max() < 1e-12


class TestKnnEpsilon:
    def test_coincident_point_at_distance_zero(self):
        pts = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
        index = SpatialIndex(pts)
        nb = knn_epsilon(index, [0.0, 0.0, 0.0], k=1)
        assert nb.valid_count == 1
        assert nb.indices[0] == 0
        assert nb.distances[0] == 0.0

    def test_everything_outside_epsilon(self):
        pts = np.array([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
        index = SpatialIndex(pts)
        nb = knn_epsilon(index, [0.0, 0.0, 0.0], k=2, eps=0.5)
        assert nb.valid_count == 0
        assert np.all(nb.indices == 0)
        assert np.all(nb.distances == 0.0)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-5, 5, size=(1000, 3))
        queries = rng.uniform(-5, 5, size=(100, 3))
        index = SpatialIndex(pts)
        nbh = precompute_neighborhoods(index, queries, k=60, eps=0.2)
        for qi in range(len(queries)):
            oi, od = brute_force_neighbors(pts, queries[qi], 60, eps=0.2)
            n = int(nbh.valid_count[qi])
            assert n == len(oi)
            assert np.array_equal(nbh.indices[qi, :n], oi)
            assert np.array_equal(nbh.distances[qi, :n], od)

    def test_no_epsilon_matches_brute_force(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(500, 3))
        queries = rng.normal(size=(40, 3))
        index = SpatialIndex(pts)
        nbh = precompute_neighborhoods(index, queries, k=10)
        for qi in range(len(queries)):
            oi, od = brute_force_neighbors(pts, queries[qi], 10)
            assert np.array_equal(nbh.indices[qi], oi)
            assert np.array_equal(nbh.distances[qi], od)

    def test_duplicate_points_tie_break_by_index(self):
        pts = np.array([[0.0, 0.0, 0.0]] * 5 + [[1.0, 0.0, 0.0]] * 5)
        index = SpatialIndex(pts)
        nb = knn_epsilon(index, [0.0, 0.0, 0.0], k=7)
        assert np.array_equal(nb.indices[:5], [0, 1, 2, 3, 4])
        assert np.array_equal(nb.indices[5:7], [5, 6])

    def test_grid_ties_match_brute_force(self):
        # integer grid: massive exact distance ties at every shell
        xs = np.arange(5)
        grid = np.array([[x, y, z] for x in xs for y in xs for z in xs], dtype=np.float64)
        index = SpatialIndex(grid)
        rng = np.random.default_rng(10)
        for _ in range(30):
            q = grid[rng.integers(0, len(grid))]
            nb = knn_epsilon(index, q, k=9)
            oi, od = brute_force_neighbors(grid, q, 9)
            assert np.array_equal(nb.indices[:nb.valid_count], oi)
            assert np.array_equal(nb.distances[:nb.valid_count], od)

    def test_fewer_points_than_k(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        index = SpatialIndex(pts)
        nb = knn_epsilon(index, [0.0, 0.0, 0.0], k=10)
        assert nb.valid_count == 2
        assert nb.capacity == 10
        assert np.all(nb.indices[2:] == 0)

    def test_distances_nondecreasing(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(300, 3))
        index = SpatialIndex(pts)
        nbh = precompute_neighborhoods(index, rng.normal(size=(20, 3)), k=15)
        for qi in range(20):
            n = int(nbh.valid_count[qi])
            assert np.all(np.diff(nbh.distances[qi, :n]) >= 0)

    def test_empty_index_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            SpatialIndex(np.zeros((0, 3)))

    def test_k_must_be_positive(self):
        index = SpatialIndex(np.ones((3, 3)))
        with pytest.raises(ValueError, match="k"):
            knn_epsilon(index, [0.0, 0.0, 0.0], k=0)


class TestNeighborFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(200, 3)).astype(np.float32).astype(np.float64)
        index = SpatialIndex(pts)
        queries = pts[:17]
        nbh = precompute_neighborhoods(index, queries, k=8, eps=1.0)
        # distances are stored as float32; quantize before comparing
        path = tmp_path / "nb.lnbr"
        write_neighborhoods(nbh, path)
        back = read_neighborhoods(path)
        assert np.array_equal(back.indices, nbh.indices)
        assert np.array_equal(back.valid_count, nbh.valid_count)
        assert np.array_equal(back.distances, nbh.distances.astype(np.float32).astype(np.float64))

    def test_header_and_record_layout(self, tmp_path):
        nbh = Neighborhoods(indices=[[3, 0]], distances=[[0.5, 0.0]], valid_count=[1])
        path = tmp_path / "nb.lnbr"
        write_neighborhoods(nbh, path)
        blob = path.read_bytes()
        assert blob[:4] == b"LNBR"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:12], "little") == 2
        assert int.from_bytes(blob[12:14], "little") == 1  # valid_count u16
        # padding slots are bit-exact zeros
        assert blob[14 + 4:14 + 8] == b"\x00" * 4
        assert blob[14 + 8 + 4:14 + 16] == b"\x00" * 4

    def test_truncated_file_reports_offset(self, tmp_path):
        nbh = Neighborhoods(indices=[[3, 0]], distances=[[0.5, 0.0]], valid_count=[1])
        path = tmp_path / "nb.lnbr"
        write_neighborhoods(nbh, path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FileFormatError, match="byte offset"):
            read_neighborhoods(path)
