"""Two-stage self-training orchestration.

Pseudo labels for a target sequence are produced by running the teacher on
a subsample ensemble of every scan (within-frame), refining each scan
against its pose-aligned temporal window (cross-frame), then selecting the
most confident fraction per class (CBST). The segmentation network itself
is external: anything implementing Predictor plugs in, and deterministic
mock predictors ship for testing.
"""

from __future__ import annotations

import abc
import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import AggregationSpec, refine_labels
from .errors import FileFormatError
from .geometry import AugmentationSpec, PointCloud, SensorConfig
from .lam import LamTrainingSet
from .neighbors import SpatialIndex, build_dense_cloud, precompute_neighborhoods
from .subsample import PredictionMatrix, SubsampleSpec, make_ensemble, within_frame_ensemble
from . import aggregate as _aggregate

INTENSITY_POLICIES = ("drop_first_iteration_then_use",)


class AdaptationError(RuntimeError):
    """Raised when the student trainer hook fails; carries the iteration."""


class Predictor(abc.ABC):
    """External segmentation model contract: cloud in, probability rows out.

    Implementations declare their class count and whether they consume
    per-point intensity; returned rows must lie on the simplex with one row
    per input point, indexed by point_index.
    """

    num_classes: int
    uses_intensity: bool

    @abc.abstractmethod
    def __call__(self, cloud: PointCloud) -> PredictionMatrix:
        ...


@dataclass(frozen=True)
class PseudoLabelSet:
    """Per-point hard labels, confidences, and the post-CBST selection flags."""

    labels: np.ndarray
    confidence: np.ndarray
    selected: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "confidence", np.asarray(self.confidence, dtype=np.float64))
        object.__setattr__(self, "selected", np.asarray(self.selected, dtype=bool))
        n = len(self.labels)
        if len(self.confidence) != n or len(self.selected) != n:
            raise ValueError("labels, confidence, and selected must align")
        if n and (self.confidence.min() < 0 or self.confidence.max() > 1):
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class CbstConfig:
    """Fraction of pseudo labels kept per class, in (0, 1]."""

    portion: float

    def __post_init__(self):
        if not (0.0 < self.portion <= 1.0):
            raise ValueError("portion must be in (0, 1]")


@dataclass(frozen=True)
class AdaptationConfig:
    """Everything one adaptation run needs besides the data and predictors."""

    sensor: SensorConfig
    subsample: SubsampleSpec
    aggregation: AggregationSpec
    student_augmentation: AugmentationSpec | None = None
    cbst: CbstConfig | None = None
    iterations: int = 1
    intensity_policy: str = "drop_first_iteration_then_use"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.intensity_policy not in INTENSITY_POLICIES:
            raise ValueError(f"unknown intensity policy {self.intensity_policy!r}")

    def intensity_allowed(self, iteration: int) -> bool:
        return iteration > 0


# ---------------------------------------------------------------------------
# Pseudo-label generation
# ---------------------------------------------------------------------------

def _scan_rng(seed: int, scan: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, scan)))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def generate_refined_predictions(scans, poses, predictor: Predictor, config: AdaptationConfig,
                                 seed: int = 0, use_intensity: bool = True, threads: int = 1):
    """Within-frame then cross-frame ensembling over a whole sequence.

    Returns (within, refined): per-scan prediction matrices after the
    subsample-ensemble average and after kernel refinement. A zero-width
    window disables cross-frame refinement entirely, so the pipeline with
    one identity trial and window 0 reduces to the raw predictor.
    Deterministic given the seed, independent of thread count.
    """
    agg = config.aggregation

    def stage_within(t: int) -> PredictionMatrix:
        cloud = scans[t] if use_intensity else scans[t].without_intensity()
        ensemble = make_ensemble(cloud, config.sensor, config.subsample, _scan_rng(seed, t))
        trials = []
        for sub, idx_map in ensemble:
            pred = predictor(sub)
            if len(pred) != len(sub) or pred.num_classes != predictor.num_classes:
                raise ValueError(
                    f"predictor output shape mismatch on frame {cloud.frame_id}: "
                    f"{len(pred)}x{pred.num_classes} for {len(sub)} points"
                )
            trials.append(PredictionMatrix(pred.probs, idx_map[pred.point_index]))
        return within_frame_ensemble(trials, len(cloud))

    within = _map(stage_within, range(len(scans)), threads)
    if agg.window == 0:
        return within, within
    pairs = list(zip(scans, within))

    def stage_refine(t: int) -> PredictionMatrix:
        dense = build_dense_cloud(pairs, poses, t, agg.window, agg.stride)
        index = SpatialIndex(dense.points)
        nbh = precompute_neighborhoods(index, scans[t].points, agg.k, agg.epsilon)
        return refine_labels(scans[t].points, within[t].probs, dense, nbh, agg.kernel)

    refined = _map(stage_refine, range(len(scans)), threads)
    return within, refined


def generate_pseudo_labels(scans, poses, predictor: Predictor, config: AdaptationConfig,
                           seed: int = 0, use_intensity: bool = True, threads: int = 1):
    """Per-scan pseudo labels: argmax and max of the refined probabilities."""
    _, refined = generate_refined_predictions(
        scans, poses, predictor, config, seed=seed, use_intensity=use_intensity, threads=threads)
    return [
        PseudoLabelSet(
            labels=pred.probs.argmax(axis=1),
            confidence=pred.probs.max(axis=1),
            selected=np.ones(len(pred), dtype=bool),
        )
        for pred in refined
    ]


def cbst_select(labels: np.ndarray, confidence: np.ndarray, config: CbstConfig) -> np.ndarray:
    """Class-balanced selection mask.

    For each class with n points the threshold is the ceil(portion * n)-th
    highest confidence; a point is selected iff its confidence reaches its
    class threshold, so ties at the threshold are all kept.
    """
    labels = np.asarray(labels, dtype=np.int64)
    confidence = np.asarray(confidence, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("cbst_select requires at least one labeled point")
    selected = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        members = labels == c
        conf_c = np.sort(confidence[members])[::-1]
        rank = max(1, int(np.ceil(config.portion * len(conf_c) - 1e-9)))
        threshold = conf_c[rank - 1]
        selected |= members & (confidence >= threshold)
    return selected


def apply_cbst(label_sets, config: CbstConfig | None):
    """Pool all scans, select per class across the pool, and unpool."""
    if config is None:
        return label_sets
    sizes = [len(ls.labels) for ls in label_sets]
    all_labels = np.concatenate([ls.labels for ls in label_sets])
    all_conf = np.concatenate([ls.confidence for ls in label_sets])
    mask = cbst_select(all_labels, all_conf, config)
    out = []
    start = 0
    for ls, n in zip(label_sets, sizes):
        out.append(PseudoLabelSet(ls.labels, ls.confidence, mask[start:start + n]))
        start += n
    return out


# ---------------------------------------------------------------------------
# Adaptation loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LidarSequence:
    """One drive: scans plus their frame-to-global poses."""

    name: str
    scans: list
    poses: list

    def __post_init__(self):
        if len(self.scans) != len(self.poses):
            raise ValueError("scans and poses must have equal length")


def run_adaptation(sequences, teacher: Predictor, student_hook, config: AdaptationConfig,
                   out_dir, threads: int = 1):
    """Iterate label generation and student training.

    Iteration 0 uses the teacher with intensity dropped; later iterations
    use the predictor returned by student_hook with intensity enabled.
    Labels, masks, and the manifest are persisted (atomically) before the
    hook runs, so a crashed student never loses its inputs. student_hook
    is called as hook(iteration, {sequence: [PseudoLabelSet]}) and returns
    the next predictor (or None to keep the current one).

    Returns the per-iteration list of {sequence name: [PseudoLabelSet]}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictor = teacher
    results = []
    manifest_items = [("iterations", str(config.iterations)), ("seed", str(config.seed))]
    for iteration in range(config.iterations):
        use_intensity = config.intensity_allowed(iteration)
        manifest_items.append((f"iteration_{iteration:02d}.intensity_used", str(use_intensity).lower()))
        iter_labels = {}
        for seq_index, seq in enumerate(sequences):
            label_sets = generate_pseudo_labels(
                seq.scans, seq.poses, predictor, config,
                seed=_iteration_seed(config.seed, iteration, seq_index),
                use_intensity=use_intensity, threads=threads,
            )
            label_sets = apply_cbst(label_sets, config.cbst)
            iter_labels[seq.name] = label_sets
            seq_dir = out_dir / f"iteration_{iteration:02d}" / seq.name
            seq_dir.mkdir(parents=True, exist_ok=True)
            for frame, ls in enumerate(label_sets):
                save_labels(ls.labels, seq_dir / f"{frame:06d}.label")
                save_selection_mask(ls.selected, seq_dir / f"{frame:06d}.mask")
        results.append(iter_labels)
        write_manifest(out_dir / "run_manifest.txt", manifest_items)
        try:
            next_predictor = student_hook(iteration, iter_labels)
        except Exception as exc:
            raise AdaptationError(f"student hook failed at iteration {iteration}") from exc
        if next_predictor is not None:
            predictor = next_predictor
    return results


def _iteration_seed(seed: int, iteration: int, seq_index: int) -> int:
    mix = np.random.SeedSequence(entropy=(seed, iteration, seq_index))
    return int(mix.generate_state(1, dtype=np.uint64)[0])


def noop_student_hook(iteration, label_sets):
    """Keeps the current predictor; useful for label-generation-only runs."""
    return None


# ---------------------------------------------------------------------------
# Mock predictors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightThresholdRule:
    """Class = number of z thresholds at or below the point's height."""

    thresholds: tuple

    @property
    def num_classes(self) -> int:
        return len(self.thresholds) + 1

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.thresholds), points[:, 2], side="right")


@dataclass(frozen=True)
class RadialBandsRule:
    """Class cycles with horizontal distance in bands of band_width meters."""

    band_width: float
    num_classes: int

    def __call__(self, points: np.ndarray) -> np.ndarray:
        radius = np.sqrt(points[:, 0] ** 2 + points[:, 1] ** 2)
        return (np.floor(radius / self.band_width).astype(np.int64)) % self.num_classes


class MockPredictor(Predictor):
    """Deterministic geometric labeler emitting one-hot (or softened) rows."""

    uses_intensity = False

    def __init__(self, rule, num_classes: int | None = None, smoothing: float = 0.0):
        self.rule = rule
        self.num_classes = num_classes if num_classes is not None else rule.num_classes
        if not (0.0 <= smoothing < 1.0):
            raise ValueError("smoothing must be in [0, 1)")
        self.smoothing = smoothing

    def __call__(self, cloud: PointCloud) -> PredictionMatrix:
        labels = np.asarray(self.rule(cloud.points), dtype=np.int64)
        return PredictionMatrix(_one_hot(labels, self.num_classes, self.smoothing),
                                np.arange(len(cloud)))


class NoisyPredictor(Predictor):
    """Flips the base predictor's labels i.i.d. at flip_rate.

    The flip pattern is a pure function of (seed, frame id, point
    coordinates), so repeated calls on identical clouds agree regardless of
    call order.
    """

    def __init__(self, base: Predictor, flip_rate: float, seed: int = 0):
        if not (0.0 <= flip_rate <= 1.0):
            raise ValueError("flip_rate must be in [0, 1]")
        self.base = base
        self.flip_rate = flip_rate
        self.seed = seed
        self.num_classes = base.num_classes
        self.uses_intensity = base.uses_intensity

    def _flip_rates(self, cloud: PointCloud) -> np.ndarray:
        return np.full(len(cloud), self.flip_rate)

    def __call__(self, cloud: PointCloud) -> PredictionMatrix:
        pred = self.base(cloud)
        labels = pred.probs.argmax(axis=1)
        rng = _cloud_rng(self.seed, cloud)
        flip = rng.random(len(cloud)) < self._flip_rates(cloud)
        offsets = rng.integers(1, self.num_classes, size=len(cloud))
        labels = np.where(flip, (labels + offsets) % self.num_classes, labels)
        return PredictionMatrix(_one_hot(labels, self.num_classes), pred.point_index)


class RangeGatedNoisyPredictor(NoisyPredictor):
    """Noise gated on sensor range: near_rate inside range_threshold, far_rate beyond."""

    def __init__(self, base: Predictor, near_rate: float, far_rate: float,
                 range_threshold: float, seed: int = 0):
        super().__init__(base, near_rate, seed)
        if not (0.0 <= far_rate <= 1.0):
            raise ValueError("far_rate must be in [0, 1]")
        self.far_rate = far_rate
        self.range_threshold = range_threshold

    def _flip_rates(self, cloud: PointCloud) -> np.ndarray:
        pts = cloud.points
        ranges = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2 + pts[:, 2] ** 2)
        return np.where(ranges <= self.range_threshold, self.flip_rate, self.far_rate)


class PrecomputedPredictor(Predictor):
    """Serves stored prediction files by frame id; the integration path for
    external networks that export their probabilities."""

    uses_intensity = False

    def __init__(self, directory, num_classes: int, pattern: str = "{frame:06d}.lprb"):
        self.directory = Path(directory)
        self.num_classes = num_classes
        self.pattern = pattern

    def __call__(self, cloud: PointCloud) -> PredictionMatrix:
        from .subsample import read_prediction_matrix

        pred = read_prediction_matrix(self.directory / self.pattern.format(frame=cloud.frame_id))
        if len(pred) != len(cloud):
            raise ValueError(
                f"stored prediction for frame {cloud.frame_id} covers {len(pred)} points, scan has {len(cloud)}"
            )
        return pred


def _one_hot(labels: np.ndarray, num_classes: int, smoothing: float = 0.0) -> np.ndarray:
    probs = np.full((len(labels), num_classes), smoothing / max(1, num_classes - 1))
    probs[np.arange(len(labels)), labels] = 1.0 - smoothing
    return probs


def _cloud_rng(seed: int, cloud: PointCloud) -> np.random.Generator:
    digest = hashlib.sha256()
    digest.update(struct.pack("<qq", seed, cloud.frame_id))
    digest.update(np.ascontiguousarray(cloud.points).tobytes())
    return np.random.default_rng(int.from_bytes(digest.digest()[:16], "little"))


def mock_predictor(kind: str, **kwargs) -> Predictor:
    """Factory for the test predictors: height_threshold, radial_bands, and
    their noisy/range-gated wrappers."""
    if kind == "height_threshold":
        base = MockPredictor(HeightThresholdRule(tuple(kwargs.pop("thresholds"))), **kwargs)
        return base
    if kind == "radial_bands":
        return MockPredictor(
            RadialBandsRule(kwargs.pop("band_width"), kwargs.pop("num_classes")), **kwargs)
    if kind == "noisy":
        return NoisyPredictor(kwargs.pop("base"), kwargs.pop("flip_rate"), kwargs.pop("seed", 0))
    if kind == "range_gated_noisy":
        return RangeGatedNoisyPredictor(
            kwargs.pop("base"), kwargs.pop("near_rate"), kwargs.pop("far_rate"),
            kwargs.pop("range_threshold"), kwargs.pop("seed", 0))
    raise ValueError(f"unknown mock predictor kind {kind!r}")


# ---------------------------------------------------------------------------
# LAM training-set assembly
# ---------------------------------------------------------------------------

def build_lam_training_set(scans, poses, predictions, truth_labels, agg: AggregationSpec,
                           ignore_label: int | None = None) -> LamTrainingSet:
    """Collect per-query neighborhoods (features, neighbor labels, truth)
    from a labeled sequence; queries with no neighbors or ignored truth are
    dropped."""
    pairs = list(zip(scans, predictions))
    num_classes = predictions[0].num_classes
    phis, probs, labels = [], [], []
    for t in range(len(scans)):
        dense = build_dense_cloud(pairs, poses, t, agg.window, agg.stride)
        index = SpatialIndex(dense.points)
        nbh = precompute_neighborhoods(index, scans[t].points, agg.k, agg.epsilon)
        phi_rows, _, neighbor_probs = _aggregate.phi_pairs(
            scans[t].points, predictions[t].probs, dense, nbh)
        bounds = np.concatenate([[0], np.cumsum(nbh.valid_count)])
        truth = np.asarray(truth_labels[t], dtype=np.int64)
        for q in range(len(nbh)):
            lo, hi = bounds[q], bounds[q + 1]
            if hi == lo or (ignore_label is not None and truth[q] == ignore_label):
                continue
            phis.append(phi_rows[lo:hi])
            probs.append(neighbor_probs[lo:hi])
            labels.append(truth[q])
    return LamTrainingSet(phis=phis, neighbor_probs=probs,
                          labels=np.asarray(labels, dtype=np.int64), num_classes=num_classes)


# ---------------------------------------------------------------------------
# Label, mask, and manifest files
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    """Write-temp-then-rename so a crash never leaves a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_labels(labels: np.ndarray, path) -> None:
    """KITTI-style label file: u32 per point, class in the low 16 bits."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= 1 << 16):
        raise ValueError("labels must fit in 16 bits")
    atomic_write_bytes(path, labels.astype("<u4").tobytes())


def load_labels(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u4")
    return (raw & 0xFFFF).astype(np.int64)


def save_selection_mask(mask: np.ndarray, path) -> None:
    """Packed bitset with a u32 count header, LSB-first within each byte."""
    mask = np.asarray(mask, dtype=bool)
    packed = np.packbits(mask, bitorder="little")
    atomic_write_bytes(path, struct.pack("<I", len(mask)) + packed.tobytes())


def load_selection_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FileFormatError(f"{path}: truncated header at byte offset {len(blob)}")
    (count,) = struct.unpack_from("<I", blob, 0)
    need = 4 + (count + 7) // 8
    if len(blob) != need:
        raise FileFormatError(f"{path}: expected {need} bytes, file ends at byte offset {len(blob)}")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=4), bitorder="little")
    return bits[:count].astype(bool)


def write_manifest(path, items) -> None:
    """Human-readable key-value run record; values must already be strings."""
    text = "".join(f"{key} = {value}\n" for key, value in items)
    atomic_write_bytes(path, text.encode())


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
