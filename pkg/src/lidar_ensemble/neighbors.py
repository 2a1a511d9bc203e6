"""Multi-scan dense cloud construction and exact k-NN / epsilon-ball queries.

A dense cloud is the union of pose-aligned scans over a temporal window,
expressed in the reference scan's frame. Neighborhood queries are exact:
the returned sets match a brute-force distance scan, with ties broken by
lower dense-cloud index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FileFormatError
from .geometry import PointCloud, RigidTransform, compose, invert
from .subsample import PredictionMatrix

NEIGHBOR_MAGIC = b"LNBR"
_TIE_PAD = 8


@dataclass(frozen=True)
class DenseCloud:
    """Pose-aligned aggregation of several scans around a reference frame.

    points are in the reference scan's frame; probs carries each point's
    single-scan pseudo-label row; sensor_distance is the range to the
    originating sensor, computed in the point's own scan frame before
    alignment; temporal_offset is source frame index minus reference index.
    """

    points: np.ndarray
    probs: np.ndarray
    temporal_offset: np.ndarray
    sensor_distance: np.ndarray
    source_frame: np.ndarray
    window: int

    def __post_init__(self):
        m = len(self.points)
        for name in ("probs", "temporal_offset", "sensor_distance", "source_frame"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} must have length {m}")
        if m and np.abs(self.temporal_offset).max() > self.window:
            raise ValueError("temporal offsets exceed the window")
        if m and (self.probs.min() < 0.0 or np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-5):
            raise ValueError("probability rows must lie on the simplex")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class NeighborSet:
    """Fixed-capacity zero-padded neighborhood of one query point.

    The first valid_count slots hold neighbor indices into the dense cloud
    and their distances, sorted ascending; padding slots are index 0,
    distance 0.0.
    """

    capacity: int
    valid_count: int
    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        if self.valid_count > self.capacity:
            raise ValueError("valid_count exceeds capacity")
        if len(self.indices) != self.capacity or len(self.distances) != self.capacity:
            raise ValueError("indices and distances must have capacity slots")


class Neighborhoods:
    """Precomputed neighbor sets for every query point of one scan."""

    def __init__(self, indices: np.ndarray, distances: np.ndarray, valid_count: np.ndarray):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.distances = np.asarray(distances, dtype=np.float64)
        self.valid_count = np.asarray(valid_count, dtype=np.int64)
        if self.indices.shape != self.distances.shape or self.indices.ndim != 2:
            raise ValueError("indices and distances must both be (N, k)")
        if self.valid_count.shape != (self.indices.shape[0],):
            raise ValueError("valid_count must have one entry per query")

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def capacity(self) -> int:
        return self.indices.shape[1]

    def __getitem__(self, i: int) -> NeighborSet:
        return NeighborSet(
            capacity=self.capacity,
            valid_count=int(self.valid_count[i]),
            indices=self.indices[i],
            distances=self.distances[i],
        )

    def mask(self) -> np.ndarray:
        """Boolean (N, k) validity mask."""
        return np.arange(self.capacity)[None, :] < self.valid_count[:, None]


def build_dense_cloud(scans, poses, t: int, window: int, stride: int = 1) -> DenseCloud:
    """Aggregate scans at frames {t-window, t-window+stride, ...} <= t+window.

    scans is a list of (PointCloud, PredictionMatrix) pairs covering the
    sequence; poses maps each frame into the shared global frame. Every
    selected scan is re-expressed in frame t via inv(pose_t) . pose_i.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not (0 <= t < len(scans)):
        raise ValueError(f"reference frame {t} outside sequence of length {len(scans)}")
    frames = [i for i in range(t - window, t + window + 1, stride) if 0 <= i < len(scans)]
    to_ref = invert(_pose_at(poses, t, t))

    pts_parts, prob_parts, off_parts, dist_parts, frame_parts = [], [], [], [], []
    for i in frames:
        cloud, pred = scans[i]
        if pred is None:
            raise ValueError(f"missing prediction for frame {i}")
        probs = _aligned_probs(cloud, pred, i)
        align = compose(to_ref, _pose_at(poses, i, t))
        own = cloud.points
        dist_parts.append(np.sqrt(own[:, 0] ** 2 + own[:, 1] ** 2 + own[:, 2] ** 2))
        pts_parts.append(align.apply(own))
        prob_parts.append(probs)
        off_parts.append(np.full(len(cloud), i - t, dtype=np.int64))
        frame_parts.append(np.full(len(cloud), i, dtype=np.int64))

    return DenseCloud(
        points=np.concatenate(pts_parts, axis=0),
        probs=np.concatenate(prob_parts, axis=0),
        temporal_offset=np.concatenate(off_parts),
        sensor_distance=np.concatenate(dist_parts),
        source_frame=np.concatenate(frame_parts),
        window=window,
    )


def _pose_at(poses, i: int, t: int) -> RigidTransform:
    if i >= len(poses) or poses[i] is None:
        raise ValueError(f"missing pose for frame {i} (reference {t})")
    return poses[i]


def _aligned_probs(cloud: PointCloud, pred: PredictionMatrix, frame: int) -> np.ndarray:
    if len(pred) != len(cloud):
        raise ValueError(f"frame {frame}: prediction covers {len(pred)} of {len(cloud)} points")
    idx = pred.point_index
    if not np.array_equal(np.sort(idx), np.arange(len(cloud))):
        raise ValueError(f"frame {frame}: prediction does not cover every point exactly once")
    out = np.empty_like(pred.probs)
    out[idx] = pred.probs
    return out


class SpatialIndex:
    """Exact nearest-neighbor index over the points of a dense cloud.

    Backed by a kd-tree for the candidate search, with distances recomputed
    canonically (sqrt(dx^2 + dy^2 + dz^2)) and ties resolved by lower point
    index, so query results equal a brute-force scan exactly.
    """

    def __init__(self, points: np.ndarray):
        points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValueError("index requires a nonempty (M, 3) point array")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query_batch(self, queries: np.ndarray, k: int, eps: float | None = None):
        """k nearest neighbors per query, then epsilon filtering.

        Returns (indices (N, k), distances (N, k), valid_count (N,)); for
        each query the valid prefix is sorted by (distance, index) and the
        remaining slots are zeroed.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(queries)
        m = len(self.points)
        kq = min(k + _TIE_PAD, m)

        _, cand = self._tree.query(queries, k=kq)
        cand = cand.reshape(n, kq)
        diff = self.points[cand] - queries[:, None, :]
        dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2 + diff[..., 2] ** 2)
        order = np.lexsort((cand, dist), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        take = min(k, kq)
        sel_idx = cand[:, :take]
        sel_dist = dist[:, :take]
        if kq > k:
            # a tie spanning the candidate window may hide better-indexed
            # duplicates beyond it; redo those rows exhaustively
            ambiguous = np.flatnonzero(dist[:, k - 1] >= dist[:, kq - 1])
            for row in ambiguous:
                idx_r, dist_r = self._query_ties(queries[row], dist[row, k - 1], k)
                sel_idx[row] = idx_r
                sel_dist[row] = dist_r

        out_idx = np.zeros((n, k), dtype=np.int64)
        out_dist = np.zeros((n, k))
        out_idx[:, :take] = sel_idx
        out_dist[:, :take] = sel_dist
        if eps is not None:
            # distances are sorted, so the epsilon ball is a prefix
            valid = (sel_dist <= eps).sum(axis=1)
        else:
            valid = np.full(n, take, dtype=np.int64)
        pad = np.arange(k)[None, :] >= valid[:, None]
        out_idx[pad] = 0
        out_dist[pad] = 0.0
        return out_idx, out_dist, valid

    def _query_ties(self, query: np.ndarray, radius: float, k: int):
        cand = np.asarray(self._tree.query_ball_point(query, r=radius * (1.0 + 1e-12) + 1e-300), dtype=np.int64)
        diff = self.points[cand] - query
        dist = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
        order = np.lexsort((cand, dist))[:k]
        return cand[order], dist[order]


def knn_epsilon(index: SpatialIndex, query: np.ndarray, k: int, eps: float | None = None) -> NeighborSet:
    """Neighborhood of a single query point; see SpatialIndex.query_batch."""
    idx, dist, valid = index.query_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), k, eps)
    return NeighborSet(capacity=k, valid_count=int(valid[0]), indices=idx[0], distances=dist[0])


def precompute_neighborhoods(index: SpatialIndex, queries: np.ndarray, k: int, eps: float | None = None) -> Neighborhoods:
    """One-pass neighborhood precomputation for all query points of a scan."""
    idx, dist, valid = index.query_batch(queries, k, eps)
    return Neighborhoods(idx, dist, valid)


# ---------------------------------------------------------------------------
# Precomputed neighbor file format
# ---------------------------------------------------------------------------
# Header: magic "LNBR", u32 N_queries, u32 k. Then per query: u16
# valid_count, k u32 indices, k float32 distances. Padding slots are
# bit-exact zeros. All little-endian.

def write_neighborhoods(nbh: Neighborhoods, path) -> None:
    k = nbh.capacity
    with open(path, "wb") as fh:
        fh.write(NEIGHBOR_MAGIC)
        fh.write(struct.pack("<II", len(nbh), k))
        for i in range(len(nbh)):
            fh.write(struct.pack("<H", int(nbh.valid_count[i])))
            fh.write(nbh.indices[i].astype("<u4").tobytes())
            fh.write(nbh.distances[i].astype("<f4").tobytes())


def read_neighborhoods(path) -> Neighborhoods:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise FileFormatError(f"{path}: truncated header at byte offset {len(blob)}")
    if blob[:4] != NEIGHBOR_MAGIC:
        raise FileFormatError(f"{path}: bad magic at byte offset 0")
    n, k = struct.unpack_from("<II", blob, 4)
    rec = 2 + 8 * k
    need = 12 + n * rec
    if len(blob) != need:
        raise FileFormatError(f"{path}: expected {need} bytes, file ends at byte offset {len(blob)}")
    indices = np.zeros((n, k), dtype=np.int64)
    distances = np.zeros((n, k))
    valid = np.zeros(n, dtype=np.int64)
    off = 12
    for i in range(n):
        (valid[i],) = struct.unpack_from("<H", blob, off)
        indices[i] = np.frombuffer(blob, dtype="<u4", count=k, offset=off + 2)
        distances[i] = np.frombuffer(blob, dtype="<f4", count=k, offset=off + 2 + 4 * k)
        off += rec
    return Neighborhoods(indices, distances, valid)
