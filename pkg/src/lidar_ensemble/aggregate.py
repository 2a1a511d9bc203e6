"""Cross-frame label refinement: kernel-weighted averaging of neighbor labels.

Each query point's refined probability row is a normalized weighted sum of
its dense-cloud neighbors' single-scan pseudo labels. The kernel is either
uniform (plain k-NN averaging) or the learned aggregation model, which
scores each pair from its feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import phi_layout
from .lam import LamParams, eval_scores, lam_forward
from .neighbors import DenseCloud, Neighborhoods
from .subsample import PredictionMatrix


@dataclass(frozen=True)
class UniformKernel:
    """Constant positive score: refinement reduces to k-NN averaging."""


@dataclass(frozen=True)
class LamKernel:
    """exp of the learned aggregation model's score."""

    params: LamParams

    def __post_init__(self):
        if self.params.mode != "eval":
            raise ValueError("LAM kernel requires params in eval mode")


@dataclass(frozen=True)
class AggregationSpec:
    """Cross-frame refinement parameters: kernel, k, epsilon, window, stride."""

    kernel: object
    k: int = 60
    epsilon: float | None = 0.2
    window: int = 90
    stride: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive or None")
        if self.window < 0 or self.stride < 1:
            raise ValueError("window must be >= 0 and stride >= 1")

    @property
    def kernel_name(self) -> str:
        return "lam" if isinstance(self.kernel, LamKernel) else "uniform"


def phi(point: np.ndarray, v_point: np.ndarray, dense: DenseCloud, neighbor_index: int) -> np.ndarray:
    """Feature vector of one (query, neighbor) pair; see phi_layout."""
    point = np.asarray(point, dtype=np.float64)
    v_point = np.asarray(v_point, dtype=np.float64)
    other = dense.points[neighbor_index]
    dx, dy, dz = point - other
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    offset = float(dense.temporal_offset[neighbor_index])
    norm_offset = offset / dense.window if dense.window >= 1 else 0.0
    return np.concatenate([
        [dist],
        v_point,
        dense.probs[neighbor_index],
        [norm_offset, dense.sensor_distance[neighbor_index]],
    ])


def phi_pairs(points: np.ndarray, v: np.ndarray, dense: DenseCloud, nbh: Neighborhoods):
    """Feature rows for every valid (query, neighbor) pair of a scan.

    Returns (phi_rows (R, D), row_query (R,), neighbor_probs (R, K)) where
    row_query maps each row back to its query index; rows appear query by
    query in slot order, so stored neighbor distances transfer directly.
    """
    mask = nbh.mask()
    row_query = np.repeat(np.arange(len(nbh)), nbh.valid_count)
    flat_idx = nbh.indices[mask]
    dists = nbh.distances[mask]
    k = dense.num_classes
    norm = 1.0 / dense.window if dense.window >= 1 else 0.0
    rows = np.empty((len(flat_idx), phi_layout.feature_dim(k)))
    rows[:, phi_layout.DISTANCE_COLUMN] = dists
    rows[:, phi_layout.query_label_columns(k)] = v[row_query]
    rows[:, phi_layout.neighbor_label_columns(k)] = dense.probs[flat_idx]
    rows[:, phi_layout.temporal_column(k)] = dense.temporal_offset[flat_idx] * norm
    rows[:, phi_layout.sensor_distance_column(k)] = dense.sensor_distance[flat_idx]
    return rows, row_query, dense.probs[flat_idx]


def kernel_score(kernel, feature: np.ndarray) -> float:
    """Positive score of one pair. Uniform is 1.0; LAM is exp(g(phi))."""
    feature = np.asarray(feature, dtype=np.float64)
    if not np.isfinite(feature).all():
        raise ValueError("feature vector contains non-finite entries")
    if isinstance(kernel, UniformKernel):
        return 1.0
    scores, _ = lam_forward(kernel.params, feature.reshape(1, -1))
    return float(np.exp(scores[0]))


def refine_labels(points: np.ndarray, probs: np.ndarray, dense: DenseCloud,
                  nbh: Neighborhoods, kernel) -> PredictionMatrix:
    """Kernel-weighted average of neighbor labels for every query point.

    Queries with an empty neighborhood keep their unrefined row. LAM scores
    are shifted by the per-neighborhood maximum before exponentiation,
    which leaves the normalized weights unchanged and cannot overflow.
    """
    points = np.asarray(points, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if len(points) != len(probs) or len(points) != len(nbh):
        raise ValueError("points, probs, and neighborhoods must align")

    out = probs.copy()
    if isinstance(kernel, UniformKernel):
        for q in range(len(points)):
            n = int(nbh.valid_count[q])
            if n == 0:
                continue
            rows = dense.probs[nbh.indices[q, :n]]
            out[q] = rows.sum(axis=0) / n
    else:
        phi_rows, row_query, neighbor_probs = phi_pairs(points, probs, dense, nbh)
        if len(phi_rows):
            scores = eval_scores(kernel.params, phi_rows)
            # phi_pairs emits rows grouped by query, so the per-neighborhood
            # softmax and label sums are contiguous-segment reductions
            touched = nbh.valid_count > 0
            starts = np.concatenate([[0], np.cumsum(nbh.valid_count)])[:-1][touched]
            segment = np.cumsum(touched) - 1
            shift = np.maximum.reduceat(scores, starts)
            w = np.exp(scores - shift[segment[row_query]])
            z = np.add.reduceat(w, starts)
            sums = np.add.reduceat(w[:, None] * neighbor_probs, starts, axis=0)
            out[touched] = sums / z[:, None]
    return PredictionMatrix(probs=out, point_index=np.arange(len(points)))


def write_refinement_manifest(path, spec: AggregationSpec) -> None:
    """Sidecar record of how a refined prediction file was produced."""
    lines = [
        f"kernel = {spec.kernel_name}",
        f"k = {spec.k}",
        f"epsilon = {'none' if spec.epsilon is None else repr(spec.epsilon)}",
        f"window = {spec.window}",
        f"stride = {spec.stride}",
        f"phi_layout_version = {phi_layout.PHI_LAYOUT_VERSION}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")
