"""The learned aggregation model: a small scoring network trained end to end
through the label-refinement weighted average.

Architecture: input standardization, three dense layers (32/64/128 by
default) each followed by batch normalization and ReLU, and a scalar head.
Gradients are derived analytically for this fixed architecture; training
uses Adam under a cross-entropy + Lovasz-Softmax objective, with the
softmax-weighted neighbor average differentiated exactly (all scores of a
neighborhood are coupled).
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import phi_layout
from .errors import FileFormatError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
HIDDEN_SIZES = (32, 64, 128)
PROB_FLOOR = 1e-12
VAR_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"LAMW"
CHECKPOINT_VERSION = 1

HISTOGRAM_SLICES = ("temporal", "sensor_distance", "center_distance")


class LamTrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class DenseBnLayer:
    """One hidden block: bias-free dense layer plus batch-norm affine/state."""

    weight: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray

    def copy(self) -> "DenseBnLayer":
        return DenseBnLayer(*(x.copy() for x in (self.weight, self.gamma, self.beta, self.run_mean, self.run_var)))


@dataclass
class LamParams:
    """Full parameter set of the aggregation model.

    mode selects batch statistics ("train", running stats updated on each
    forward) or running statistics ("eval", a pure function of the input).
    """

    std_mean: np.ndarray
    std_var: np.ndarray
    layers: list
    head_weight: np.ndarray
    head_bias: float
    mode: str = "eval"

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        if np.any(self.std_var <= 0):
            raise ValueError("standardization variances must be positive")
        for i, layer in enumerate(self.layers):
            if np.any(layer.run_var <= 0):
                raise ValueError(f"layer {i} running variance must be positive")

    @property
    def feature_dim(self) -> int:
        return len(self.std_mean)

    def copy(self) -> "LamParams":
        return LamParams(
            std_mean=self.std_mean.copy(),
            std_var=self.std_var.copy(),
            layers=[layer.copy() for layer in self.layers],
            head_weight=self.head_weight.copy(),
            head_bias=float(self.head_bias),
            mode=self.mode,
        )

    def named_parameters(self):
        """Trainable tensors in a fixed order (running/standardization stats excluded)."""
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"layer{i}.weight", layer.weight))
            out.append((f"layer{i}.gamma", layer.gamma))
            out.append((f"layer{i}.beta", layer.beta))
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", np.atleast_1d(np.float64(self.head_bias))))
        return out


def initialize_lam_params(feature_dim: int, hidden_sizes=HIDDEN_SIZES, seed: int = 0) -> LamParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, identity norms."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = feature_dim
    for size in hidden_sizes:
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(DenseBnLayer(
            weight=rng.uniform(-bound, bound, size=(size, fan_in)),
            gamma=np.ones(size),
            beta=np.zeros(size),
            run_mean=np.zeros(size),
            run_var=np.ones(size),
        ))
        fan_in = size
    bound = 1.0 / np.sqrt(fan_in)
    return LamParams(
        std_mean=np.zeros(feature_dim),
        std_var=np.ones(feature_dim),
        layers=layers,
        head_weight=rng.uniform(-bound, bound, size=fan_in),
        head_bias=0.0,
        mode="eval",
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def lam_forward(params: LamParams, feats: np.ndarray, update_running: bool = True):
    """Score a batch of feature vectors.

    Returns (scores (R,), cache). In train mode batch statistics normalize
    each block and, unless update_running is False, the running statistics
    are advanced with momentum 0.1; eval mode is deterministic.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.feature_dim:
        raise ValueError(f"expected (R, {params.feature_dim}) features, got {feats.shape}")
    if not np.isfinite(feats).all():
        raise ValueError("feature batch contains non-finite values")

    train = params.mode == "train"
    act = (feats - params.std_mean) / np.sqrt(params.std_var)
    cache = {"x0": act, "train": train, "layers": []}
    rows = len(feats)
    for layer in params.layers:
        z = act @ layer.weight.T
        if train:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            if update_running:
                run_var_update = var * rows / (rows - 1) if rows > 1 else var
                layer.run_mean += BN_MOMENTUM * (mean - layer.run_mean)
                layer.run_var += BN_MOMENTUM * (run_var_update - layer.run_var)
        else:
            mean = layer.run_mean
            var = layer.run_var
        ivar = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * ivar
        y = layer.gamma * xhat + layer.beta
        cache["layers"].append({"a_prev": act, "xhat": xhat, "y": y, "ivar": ivar})
        act = np.maximum(y, 0.0)
    cache["a_last"] = act
    scores = act @ params.head_weight + params.head_bias
    return scores, cache


def eval_scores(params: LamParams, feats: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Eval-mode scores without activation caches.

    Rows are independent in eval mode, so the batch is processed in
    cache-friendly chunks; large monolithic batches thrash memory.
    """
    if params.mode != "eval":
        raise ValueError("eval_scores requires eval mode")
    feats = np.asarray(feats, dtype=np.float64)
    if len(feats) <= chunk:
        return lam_forward(params, feats)[0]
    return np.concatenate([
        lam_forward(params, feats[i:i + chunk])[0] for i in range(0, len(feats), chunk)
    ])


def lam_backward(params: LamParams, cache: dict, dscores: np.ndarray) -> dict:
    """Gradients of a scalar objective w.r.t. every trainable tensor,
    given its gradient w.r.t. the scores."""
    grads = {}
    a_last = cache["a_last"]
    grads["head.weight"] = a_last.T @ dscores
    grads["head.bias"] = np.atleast_1d(dscores.sum())
    d_act = np.outer(dscores, params.head_weight)
    rows = len(dscores)
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        lc = cache["layers"][i]
        dy = d_act * (lc["y"] > 0)
        grads[f"layer{i}.gamma"] = (dy * lc["xhat"]).sum(axis=0)
        grads[f"layer{i}.beta"] = dy.sum(axis=0)
        dxhat = dy * layer.gamma
        if cache["train"]:
            dz = (lc["ivar"] / rows) * (
                rows * dxhat - dxhat.sum(axis=0) - lc["xhat"] * (dxhat * lc["xhat"]).sum(axis=0)
            )
        else:
            dz = dxhat * lc["ivar"]
        grads[f"layer{i}.weight"] = dz.T @ lc["a_prev"]
        d_act = dz @ layer.weight
    return grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _lovasz_extension_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard-loss Lovasz extension for one sorted class."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def _lovasz_softmax_with_grad(probs: np.ndarray, truth: np.ndarray):
    present = np.unique(truth)
    if len(probs) == 0:
        raise ValueError("lovasz_softmax requires at least one point")
    total = 0.0
    grad = np.zeros_like(probs)
    for c in present:
        fg = (truth == c).astype(np.float64)
        errors = np.where(fg > 0, 1.0 - probs[:, c], probs[:, c])
        perm = np.argsort(-errors, kind="stable")
        ext_grad = _lovasz_extension_grad(fg[perm])
        total += float(errors[perm] @ ext_grad)
        de = np.empty(len(errors))
        de[perm] = ext_grad
        grad[:, c] += np.where(fg > 0, -de, de)
    n = len(present)
    return total / n, grad / n


def lovasz_softmax(probs: np.ndarray, truth: np.ndarray) -> float:
    """Lovasz-Softmax loss: mean over present classes of the Lovasz extension
    of the Jaccard loss applied to the per-class probability errors.

    Zero exactly when predictions are one-hot correct for every present
    class; always in [0, 1].
    """
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    loss, _ = _lovasz_softmax_with_grad(probs, truth)
    return loss


def _cross_entropy_with_grad(probs: np.ndarray, truth: np.ndarray):
    n = len(truth)
    p_true = probs[np.arange(n), truth]
    clamped = np.maximum(p_true, PROB_FLOOR)
    loss = float(-np.log(clamped).mean())
    grad = np.zeros_like(probs)
    grad[np.arange(n), truth] = np.where(p_true > PROB_FLOOR, -1.0 / (clamped * n), 0.0)
    return loss, grad


def lam_loss(refined, truth: np.ndarray, ce_weight: float = 1.0, lovasz_weight: float = 1.0,
             ignore_label: int | None = None) -> float:
    """Weighted sum of multi-class cross-entropy and Lovasz-Softmax.

    Cross-entropy clamps probabilities at 1e-12; points whose truth equals
    ignore_label are excluded from both terms.
    """
    probs = np.asarray(getattr(refined, "probs", refined), dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if ignore_label is not None:
        keep = truth != ignore_label
        probs, truth = probs[keep], truth[keep]
    if len(truth) == 0:
        raise ValueError("all points ignored")
    ce, _ = _cross_entropy_with_grad(probs, truth)
    lov, _ = _lovasz_softmax_with_grad(probs, truth)
    return ce_weight * ce + lovasz_weight * lov


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Adam training hyperparameters (beta1 0.9, beta2 0.999, eps 1e-8)."""

    learning_rate: float = 1e-3
    epochs: int = 25
    batch: int = 256
    ce_weight: float = 1.0
    lovasz_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.ce_weight < 0 or self.lovasz_weight < 0 or (self.ce_weight == 0 and self.lovasz_weight == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_ce: float
    mean_lovasz: float
    total: float


@dataclass
class LamTrainingSet:
    """Per-neighborhood training instances.

    Each neighborhood holds the feature rows and pseudo-label rows of one
    query point's neighbors plus the query's ground-truth class. Empty
    neighborhoods are not representable: drop them when building the set.
    """

    phis: list
    neighbor_probs: list
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.phis) == len(self.neighbor_probs) == len(self.labels)):
            raise ValueError("phis, neighbor_probs, and labels must align")
        if any(len(p) == 0 for p in self.phis):
            raise ValueError("every training neighborhood needs at least one neighbor")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.phis[0].shape[1]

    def all_phis(self) -> np.ndarray:
        return np.concatenate(self.phis, axis=0)


def _softmax_refine(scores: np.ndarray, row_query: np.ndarray, neighbor_probs: np.ndarray, n: int):
    shift = np.full(n, -np.inf)
    np.maximum.at(shift, row_query, scores)
    w = np.exp(scores - shift[row_query])
    z = np.zeros(n)
    np.add.at(z, row_query, w)
    w = w / z[row_query]
    refined = np.zeros((n, neighbor_probs.shape[1]))
    np.add.at(refined, row_query, w[:, None] * neighbor_probs)
    return w, refined


def training_loss_and_grads(params: LamParams, phis: np.ndarray, row_query: np.ndarray,
                            neighbor_probs: np.ndarray, labels: np.ndarray,
                            ce_weight: float = 1.0, lovasz_weight: float = 1.0,
                            update_running: bool = False):
    """Loss and analytic parameter gradients for one batch of neighborhoods.

    The refinement weights are the softmax of the scores within each
    neighborhood, so every neighbor's score receives gradient through the
    normalizer. Returns (total, ce, lovasz, grads).
    """
    n = len(labels)
    scores, cache = lam_forward(params, phis, update_running=update_running)
    weights, refined = _softmax_refine(scores, row_query, neighbor_probs, n)
    ce, g_ce = _cross_entropy_with_grad(refined, labels)
    lov, g_lov = _lovasz_softmax_with_grad(refined, labels)
    g_refined = ce_weight * g_ce + lovasz_weight * g_lov
    per_query = np.einsum("qk,qk->q", refined, g_refined)
    per_row = np.einsum("rk,rk->r", neighbor_probs, g_refined[row_query])
    dscores = weights * (per_row - per_query[row_query])
    grads = lam_backward(params, cache, dscores)
    total = ce_weight * ce + lovasz_weight * lov
    return total, ce, lov, grads


class _Adam:
    def __init__(self, names, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {name: None for name in names}
        self.v = {name: None for name in names}

    def step(self, params: LamParams, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        tensors = dict(params.named_parameters())
        for name in self.m:
            g = grads[name]
            if self.m[name] is None:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1 ** t)
            vhat = self.v[name] / (1 - self.beta2 ** t)
            update = self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if name == "head.bias":
                params.head_bias = float(params.head_bias - update[0])
            else:
                tensors[name] -= update


def train_lam(data: LamTrainingSet, config: TrainConfig, params: LamParams | None = None):
    """Train the aggregation model on precomputed source neighborhoods.

    Fresh parameters are initialized from config.seed and standardization
    statistics fit to the training features unless params is given.
    Returns (params in eval mode, per-epoch EpochStats list).
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if params is None:
        params = initialize_lam_params(data.feature_dim, seed=config.seed)
        params = modulate_statistics(params, data.all_phis())
    params.mode = "train"
    rng = np.random.default_rng(config.seed)
    adam = _Adam([name for name, _ in params.named_parameters()], config.learning_rate)
    sizes = np.array([len(p) for p in data.phis])
    trace = []
    global_step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        ce_sum = lov_sum = 0.0
        seen = 0
        for start in range(0, len(perm), config.batch):
            sel = perm[start:start + config.batch]
            phis = np.concatenate([data.phis[i] for i in sel], axis=0)
            probs = np.concatenate([data.neighbor_probs[i] for i in sel], axis=0)
            row_query = np.repeat(np.arange(len(sel)), sizes[sel])
            total, ce, lov, grads = training_loss_and_grads(
                params, phis, row_query, probs, data.labels[sel],
                config.ce_weight, config.lovasz_weight, update_running=True,
            )
            if not np.isfinite(total):
                raise LamTrainingError(f"non-finite loss at step {global_step}")
            adam.step(params, grads)
            ce_sum += ce * len(sel)
            lov_sum += lov * len(sel)
            seen += len(sel)
            global_step += 1
        mean_ce, mean_lov = ce_sum / seen, lov_sum / seen
        trace.append(EpochStats(epoch, mean_ce, mean_lov,
                                config.ce_weight * mean_ce + config.lovasz_weight * mean_lov))
    params.mode = "eval"
    return params, trace


# ---------------------------------------------------------------------------
# Target-domain statistics modulation
# ---------------------------------------------------------------------------

def modulate_statistics(params: LamParams, stream) -> LamParams:
    """Replace the standardization statistics with the stream's mean/variance.

    stream is a (R, D) array or an iterable of such chunks; every other
    parameter is untouched. Features with variance below 1e-8 are floored
    there, with a warning naming the columns.
    """
    if isinstance(stream, np.ndarray):
        chunks = [stream]
    else:
        chunks = list(stream)
    if not chunks or sum(len(c) for c in chunks) == 0:
        raise ValueError("statistics stream is empty")
    if len(chunks) == 1:
        arr = np.asarray(chunks[0], dtype=np.float64)
        mean = arr.mean(axis=0)
        var = arr.var(axis=0)
    else:
        count, mean, m2 = 0, None, None
        for chunk in chunks:
            chunk = np.asarray(chunk, dtype=np.float64)
            if len(chunk) == 0:
                continue
            c_n, c_mean, c_m2 = len(chunk), chunk.mean(axis=0), chunk.var(axis=0) * len(chunk)
            if mean is None:
                count, mean, m2 = c_n, c_mean, c_m2
                continue
            delta = c_mean - mean
            new_count = count + c_n
            mean = mean + delta * (c_n / new_count)
            m2 = m2 + c_m2 + delta * delta * (count * c_n / new_count)
            count = new_count
        var = m2 / count
    floored = var < VAR_FLOOR
    if floored.any():
        warnings.warn(
            f"variance floored at {VAR_FLOOR} for feature columns {np.flatnonzero(floored).tolist()}",
            RuntimeWarning,
            stacklevel=2,
        )
        var = np.where(floored, VAR_FLOOR, var)
    out = params.copy()
    out.std_mean = mean
    out.std_var = var
    return out


# ---------------------------------------------------------------------------
# Weight-distribution analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistogramSlice:
    edges: np.ndarray
    counts: np.ndarray
    mean_weight: np.ndarray


@dataclass(frozen=True)
class HistogramReport:
    """Normalized kernel weights binned along one feature per slice."""

    slices: dict


def weight_histograms(params: LamParams | None, phis: np.ndarray, row_query: np.ndarray,
                      num_queries: int, slices=HISTOGRAM_SLICES, bins: int = 20) -> HistogramReport:
    """Distribution of normalized aggregation weights over feature slices.

    params None substitutes the uniform kernel (every neighborhood weight
    is 1/valid_count). Each slice bins all contributing pairs by one
    feature column, so per-slice counts sum to the number of pairs.
    """
    phis = np.asarray(phis, dtype=np.float64)
    if len(phis) == 0:
        raise ValueError("no neighbor pairs to analyze")
    if params is None:
        scores = np.zeros(len(phis))
    else:
        if params.mode != "eval":
            raise ValueError("weight analysis requires eval mode")
        scores = eval_scores(params, phis)
    weights, _ = _softmax_refine(scores, row_query, np.zeros((len(phis), 1)), num_queries)

    k = phi_layout.num_classes_of(phis.shape[1])
    columns = {
        "temporal": phi_layout.temporal_column(k),
        "sensor_distance": phi_layout.sensor_distance_column(k),
        "center_distance": phi_layout.DISTANCE_COLUMN,
    }
    report = {}
    for name in slices:
        values = phis[:, columns[name]]
        edges = np.histogram_bin_edges(values, bins=bins)
        counts, _ = np.histogram(values, bins=edges)
        weight_sum, _ = np.histogram(values, bins=edges, weights=weights)
        mean_weight = np.divide(weight_sum, counts, out=np.zeros(len(counts)), where=counts > 0)
        report[name] = HistogramSlice(edges=edges, counts=counts, mean_weight=mean_weight)
    return HistogramReport(slices=report)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _named_tensors(params: LamParams):
    out = [("std_mean", params.std_mean), ("std_var", params.std_var)]
    for i, layer in enumerate(params.layers):
        out += [
            (f"layer{i}.weight", layer.weight),
            (f"layer{i}.gamma", layer.gamma),
            (f"layer{i}.beta", layer.beta),
            (f"layer{i}.run_mean", layer.run_mean),
            (f"layer{i}.run_var", layer.run_var),
        ]
    out += [("head.weight", params.head_weight), ("head.bias", np.float64(params.head_bias))]
    return out


def save_lam_params(params: LamParams, path) -> None:
    """Versioned binary checkpoint; see README for the exact layout."""
    d = params.feature_dim
    k = phi_layout.num_classes_of(d)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, d, k))
        for name, tensor in _named_tensors(params):
            raw = name.encode()
            arr = np.asarray(tensor, dtype=np.float64)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_lam_params(path) -> LamParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: bad magic at byte offset 0")
    version, d, k = struct.unpack_from("<III", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version} at byte offset 4")
    if phi_layout.feature_dim(k) != d:
        raise FileFormatError(f"{path}: inconsistent D={d}, K={k} at byte offset 8")
    tensors = {}
    off = 16
    while off < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode()
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims).copy()
            off += 8 * count
        except (struct.error, ValueError) as exc:
            raise FileFormatError(f"{path}: malformed tensor record at byte offset {off}") from exc

    try:
        layers = []
        for i in range(3):
            layers.append(DenseBnLayer(
                weight=tensors[f"layer{i}.weight"],
                gamma=tensors[f"layer{i}.gamma"],
                beta=tensors[f"layer{i}.beta"],
                run_mean=tensors[f"layer{i}.run_mean"],
                run_var=tensors[f"layer{i}.run_var"],
            ))
        params = LamParams(
            std_mean=tensors["std_mean"],
            std_var=tensors["std_var"],
            layers=layers,
            head_weight=tensors["head.weight"],
            head_bias=float(tensors["head.bias"]),
            mode="eval",
        )
    except KeyError as exc:
        raise FileFormatError(f"{path}: checkpoint missing tensor {exc}") from exc
    if params.feature_dim != d:
        raise FileFormatError(f"{path}: std_mean length disagrees with header D")
    return params


def write_loss_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_ce", "mean_lovasz", "total"])
        for rec in trace:
            writer.writerow([rec.epoch, repr(rec.mean_ce), repr(rec.mean_lovasz), repr(rec.total)])


def write_histogram_csv(report: HistogramReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "bin_left", "bin_right", "count", "normalized_weight_mean"])
        for name, hs in report.slices.items():
            for b in range(len(hs.counts)):
                writer.writerow([name, repr(float(hs.edges[b])), repr(float(hs.edges[b + 1])),
                                 int(hs.counts[b]), repr(float(hs.mean_weight[b]))])
