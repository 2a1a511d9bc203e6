"""Tests for the learned aggregation model: forward/backward, losses,
training, statistics modulation, weight analysis, serialization."""

import numpy as np
import pytest

from lidar_ensemble.errors import FileFormatError
from lidar_ensemble.lam import (
    EpochStats,
    LamTrainingError,
    LamTrainingSet,
    TrainConfig,
    initialize_lam_params,
    lam_forward,
    lam_loss,
    load_lam_params,
    lovasz_softmax,
    modulate_statistics,
    save_lam_params,
    train_lam,
    training_loss_and_grads,
    weight_histograms,
    write_histogram_csv,
    write_loss_trace_csv,
)
from lidar_ensemble.lam import _lovasz_softmax_with_grad


def random_simplex(rng, n, k):
    raw = rng.uniform(0.05, 1.0, size=(n, k))
    return raw / raw.sum(axis=1, keepdims=True)


def miniature_params(rng, d=7, hidden=(4, 4, 4)):
    params = initialize_lam_params(d, hidden_sizes=hidden, seed=int(rng.integers(1 << 30)))
    params.std_mean = rng.normal(size=d) * 0.1
    params.std_var = rng.uniform(0.5, 2.0, size=d)
    return params


class TestForward:
    def test_zero_network_scores_zero(self):
        params = initialize_lam_params(7, hidden_sizes=(4, 4, 4), seed=0)
        for layer in params.layers:
            layer.weight[:] = 0.0
        params.head_weight[:] = 0.0
        params.head_bias = 0.0
        feats = np.random.default_rng(0).normal(size=(10, 7))
        for mode in ("eval", "train"):
            params.mode = mode
            scores, _ = lam_forward(params, feats, update_running=False)
            assert np.abs(scores).max() == 0.0

    def test_eval_mode_is_bit_deterministic(self):
        rng = np.random.default_rng(1)
        params = miniature_params(rng)
        feats = rng.normal(size=(32, 7))
        a, _ = lam_forward(params, feats)
        b, _ = lam_forward(params, feats)
        assert np.array_equal(a, b)

    def test_train_mode_uses_batch_statistics(self):
        rng = np.random.default_rng(2)
        params = miniature_params(rng)
        params.mode = "train"
        feats = rng.normal(size=(64, 7))
        _, cache = lam_forward(params, feats, update_running=False)
        for entry in cache["layers"]:
            # batch-normalized pre-activations are standardized
            assert np.abs(entry["xhat"].mean(axis=0)).max() < 1e-12
            assert np.abs(entry["xhat"].var(axis=0) - 1.0).max() < 1e-3

    def test_running_statistics_momentum(self):
        rng = np.random.default_rng(3)
        params = miniature_params(rng)
        params.mode = "train"
        feats = rng.normal(size=(50, 7))
        before = [(l.run_mean.copy(), l.run_var.copy()) for l in params.layers]
        _, cache = lam_forward(params, feats, update_running=True)
        z0 = cache["layers"][0]["a_prev"] @ params.layers[0].weight.T
        expected_mean = before[0][0] * 0.9 + 0.1 * z0.mean(axis=0)
        assert np.abs(params.layers[0].run_mean - expected_mean).max() < 1e-12
        expected_var = before[0][1] * 0.9 + 0.1 * z0.var(axis=0) * 50 / 49
        assert np.abs(params.layers[0].run_var - expected_var).max() < 1e-12

    def test_dimension_mismatch_rejected(self):
        params = initialize_lam_params(7, seed=0)
        with pytest.raises(ValueError, match="expected"):
            lam_forward(params, np.zeros((3, 5)))

    def test_non_finite_input_rejected(self):
        params = initialize_lam_params(7, seed=0)
        feats = np.zeros((2, 7))
        feats[1, 3] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            lam_forward(params, feats)


def prefix_jaccard_oracle(probs, truth):
    """Lovasz extension by its interpolation definition: sorted errors dotted
    with differences of prefix-set Jaccard losses, averaged over present
    classes. Set intersections are recounted explicitly per prefix."""
    present = sorted(set(int(t) for t in truth))
    total = 0.0
    for c in present:
        fg = set(i for i in range(len(truth)) if truth[i] == c)
        errors = [1.0 - probs[i, c] if i in fg else probs[i, c] for i in range(len(truth))]
        order = sorted(range(len(errors)), key=lambda i: (-errors[i], i))
        prev = 0.0
        value = 0.0
        prefix = set()
        for i in order:
            prefix.add(i)
            inter = len(fg - prefix)
            union = len(fg | prefix)
            jac = 1.0 - inter / union
            value += errors[i] * (jac - prev)
            prev = jac
        total += value
    return total / len(present)


class TestLovaszSoftmax:
    def test_perfect_predictions_are_exactly_zero(self):
        truth = np.array([0, 1, 2, 1, 0])
        probs = np.zeros((5, 3))
        probs[np.arange(5), truth] = 1.0
        assert lovasz_softmax(probs, truth) == 0.0

    def test_single_point_reduces_to_error(self):
        for e in (0.0, 0.25, 0.6, 1.0):
            probs = np.array([[1.0 - e, e]])
            assert lovasz_softmax(probs, np.array([0])) == pytest.approx(e, abs=1e-12)

    def test_matches_prefix_jaccard_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            probs = random_simplex(rng, n, 3)
            truth = rng.integers(0, 3, size=n)
            got = lovasz_softmax(probs, truth)
            want = prefix_jaccard_oracle(probs, truth)
            assert abs(got - want) < 1e-9

    def test_value_range_and_positivity(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            probs = random_simplex(rng, n, 4)
            truth = rng.integers(0, 4, size=n)
            val = lovasz_softmax(probs, truth)
            assert 0.0 <= val <= 1.0
            assert val > 0.0  # random simplex rows are never exactly one-hot

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            lovasz_softmax(np.zeros((0, 3)), np.zeros(0, dtype=int))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        probs = random_simplex(rng, 5, 3)
        truth = np.array([0, 1, 2, 0, 1])
        _, grad = _lovasz_softmax_with_grad(probs, truth)
        h = 1e-6
        for i in range(5):
            for c in range(3):
                up, down = probs.copy(), probs.copy()
                up[i, c] += h
                down[i, c] -= h
                fd = (lovasz_softmax(up, truth) - lovasz_softmax(down, truth)) / (2 * h)
                assert abs(grad[i, c] - fd) < 1e-6


class TestLamLoss:
    def test_perfect_one_hot_gives_zero(self):
        truth = np.array([0, 2, 1])
        probs = np.zeros((3, 3))
        probs[np.arange(3), truth] = 1.0
        assert lam_loss(probs, truth) == 0.0

    def test_uniform_binary_cross_entropy_is_ln2(self):
        probs = np.array([[0.5, 0.5], [0.5, 0.5]])
        truth = np.array([0, 1])
        assert lam_loss(probs, truth, ce_weight=1.0, lovasz_weight=0.0) == pytest.approx(np.log(2), abs=1e-12)

    def test_combined_matches_independent_reference(self):
        rng = np.random.default_rng(7)
        probs = random_simplex(rng, 6, 3)
        truth = rng.integers(0, 3, size=6)
        ce_ref = -np.mean([np.log(probs[i, truth[i]]) for i in range(6)])
        lov_ref = prefix_jaccard_oracle(probs, truth)
        for w_ce, w_lov in ((1.0, 1.0), (0.5, 2.0)):
            got = lam_loss(probs, truth, ce_weight=w_ce, lovasz_weight=w_lov)
            assert abs(got - (w_ce * ce_ref + w_lov * lov_ref)) < 1e-6

    def test_ignore_label_excluded(self):
        probs = np.array([[0.5, 0.5], [1.0, 0.0]])
        truth = np.array([255, 0])
        assert lam_loss(probs, truth, lovasz_weight=0.0, ignore_label=255) == 0.0

    def test_all_ignored_is_an_error(self):
        with pytest.raises(ValueError, match="ignored"):
            lam_loss(np.array([[1.0, 0.0]]), np.array([255]), ignore_label=255)

    def test_probability_clamp(self):
        probs = np.array([[1.0, 0.0]])
        val = lam_loss(probs, np.array([1]), lovasz_weight=0.0)
        assert val == pytest.approx(-np.log(1e-12), rel=1e-9)


def miniature_batch(rng, k=2, sizes=(4, 5, 3)):
    d = 2 * k + 3
    row_query = np.repeat(np.arange(len(sizes)), sizes)
    phis = rng.normal(size=(sum(sizes), d))
    probs = random_simplex(rng, sum(sizes), k)
    labels = rng.integers(0, k, size=len(sizes))
    return phis, row_query, probs, labels


class TestGradients:
    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(42)
        params = miniature_params(rng)
        params.mode = "train"
        phis, row_query, probs, labels = miniature_batch(rng)

        def loss_at(p):
            total, _, _, _ = training_loss_and_grads(
                p, phis, row_query, probs, labels, 1.0, 1.0, update_running=False)
            return total

        _, _, _, grads = training_loss_and_grads(
            params, phis, row_query, probs, labels, 1.0, 1.0, update_running=False)
        h = 1e-4
        for name, tensor in params.named_parameters():
            analytic = np.atleast_1d(grads[name])
            fd = np.zeros_like(analytic)
            flat = np.atleast_1d(tensor)
            for idx in np.ndindex(flat.shape):
                up, down = params.copy(), params.copy()
                if name == "head.bias":
                    up.head_bias += h
                    down.head_bias -= h
                else:
                    dict(up.named_parameters())[name][idx] += h
                    dict(down.named_parameters())[name][idx] -= h
                fd[idx] = (loss_at(up) - loss_at(down)) / (2 * h)
            scale = np.maximum(np.abs(analytic), np.abs(fd))
            rel = np.abs(analytic - fd) / np.maximum(scale, 1e-8)
            rel[scale < 1e-7] = 0.0
            assert rel.max() < 1e-4, f"{name}: max rel {rel.max():.2e}"

    def test_score_shift_gradient_sums_to_zero(self):
        # adding a constant to all scores of a neighborhood changes nothing,
        # so the score gradient must sum to zero per neighborhood
        rng = np.random.default_rng(8)
        params = miniature_params(rng)
        params.mode = "train"
        phis, row_query, probs, labels = miniature_batch(rng)
        _, _, _, grads = training_loss_and_grads(
            params, phis, row_query, probs, labels, 1.0, 1.0)
        assert abs(grads["head.bias"][0]) < 1e-12


def separable_task(rng, n_hoods, neighbors=8):
    """Sensor-distance column perfectly separates reliable neighbors."""
    phis, probs, labels, reliable_masks = [], [], [], []
    for _ in range(n_hoods):
        y = int(rng.integers(0, 2))
        reliable = rng.random(neighbors) < 0.5
        reliable[0] = True
        reliable[1] = False
        phi = np.zeros((neighbors, 7))
        phi[:, 0] = rng.uniform(0.0, 0.2, neighbors)
        phi[:, 1:3] = random_simplex(rng, neighbors, 2)
        v_n = np.where(reliable[:, None], [[0.9, 0.1]], [[0.1, 0.9]])
        if y == 1:
            v_n = v_n[:, ::-1]
        phi[:, 3:5] = v_n
        phi[:, 5] = rng.uniform(-1.0, 1.0, neighbors)
        phi[:, 6] = np.where(reliable, rng.uniform(2, 10, neighbors), rng.uniform(20, 40, neighbors))
        phis.append(phi)
        probs.append(np.ascontiguousarray(v_n, dtype=np.float64))
        labels.append(y)
        reliable_masks.append(reliable)
    data = LamTrainingSet(phis=phis, neighbor_probs=probs,
                          labels=np.asarray(labels), num_classes=2)
    return data, reliable_masks


class TestTraining:
    def test_zero_learning_rate_leaves_parameters_unchanged(self):
        rng = np.random.default_rng(9)
        data, _ = separable_task(rng, 50)
        init = initialize_lam_params(7, seed=5)
        init = modulate_statistics(init, data.all_phis())
        before = {name: t.copy() for name, t in init.named_parameters()}
        params, _ = train_lam(data, TrainConfig(learning_rate=0.0, epochs=3, batch=16, seed=5),
                              params=init)
        for name, tensor in params.named_parameters():
            assert np.array_equal(tensor, before[name]), name

    def test_learns_separable_reliability_feature(self):
        rng = np.random.default_rng(10)
        train_data, _ = separable_task(rng, 600)
        test_data, reliable = separable_task(rng, 200)
        params, trace = train_lam(
            train_data, TrainConfig(learning_rate=1e-3, epochs=25, batch=64, seed=1))
        assert trace[-1].total < trace[0].total
        wins = 0
        for i in range(len(test_data)):
            scores, _ = lam_forward(params, test_data.phis[i])
            r = reliable[i]
            if scores[r].mean() > scores[~r].mean():
                wins += 1
        assert wins / len(test_data) >= 0.95

    def test_reproducible_given_seed(self):
        rng = np.random.default_rng(11)
        data, _ = separable_task(rng, 40)
        cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch=16, seed=7)
        a, trace_a = train_lam(data, cfg)
        b, trace_b = train_lam(data, cfg)
        for (name, ta), (_, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(ta, tb), name
        assert trace_a == trace_b

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_loss_aborts_with_step(self):
        rng = np.random.default_rng(12)
        data, _ = separable_task(rng, 20)
        bad = initialize_lam_params(7, seed=0)
        bad.head_weight[0] = np.nan
        with pytest.raises(LamTrainingError, match="step 0"):
            train_lam(data, TrainConfig(epochs=1, batch=8), params=bad)

    def test_trace_has_one_record_per_epoch(self):
        rng = np.random.default_rng(13)
        data, _ = separable_task(rng, 30)
        _, trace = train_lam(data, TrainConfig(epochs=4, batch=16, seed=2))
        assert [rec.epoch for rec in trace] == [0, 1, 2, 3]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(ce_weight=0.0, lovasz_weight=0.0)


class TestModulateStatistics:
    def test_matching_stream_is_a_fixed_point(self):
        rng = np.random.default_rng(14)
        stream = rng.normal(loc=3.0, scale=2.0, size=(500, 7))
        params = initialize_lam_params(7, seed=0)
        once = modulate_statistics(params, stream)
        twice = modulate_statistics(once, stream)
        assert np.abs(once.std_mean - twice.std_mean).max() < 1e-9
        assert np.abs(once.std_var - twice.std_var).max() < 1e-9

    def test_constant_feature_floored_with_warning(self):
        stream = np.ones((100, 7)) * 4.0
        params = initialize_lam_params(7, seed=0)
        with pytest.warns(RuntimeWarning, match="floored"):
            out = modulate_statistics(params, stream)
        assert np.abs(out.std_mean - 4.0).max() == 0.0
        assert np.all(out.std_var == 1e-8)

    def test_standardized_stream_has_unit_statistics(self):
        rng = np.random.default_rng(15)
        stream = rng.normal(size=(2000, 7)) * rng.uniform(0.5, 8.0, 7) + rng.normal(size=7) * 50
        params = modulate_statistics(initialize_lam_params(7, seed=0), stream)
        standardized = (stream - params.std_mean) / np.sqrt(params.std_var)
        assert np.abs(standardized.mean(axis=0)).max() < 1e-6
        assert np.abs(standardized.var(axis=0) - 1.0).max() < 1e-6

    def test_other_parameters_untouched(self):
        rng = np.random.default_rng(16)
        params = initialize_lam_params(7, seed=3)
        out = modulate_statistics(params, rng.normal(size=(50, 7)))
        for (name, a), (_, b) in zip(params.named_parameters(), out.named_parameters()):
            assert np.array_equal(a, b), name

    def test_chunked_stream_matches_whole_array(self):
        rng = np.random.default_rng(17)
        stream = rng.normal(loc=2.0, size=(999, 7))
        params = initialize_lam_params(7, seed=0)
        whole = modulate_statistics(params, stream)
        chunked = modulate_statistics(params, [stream[:100], stream[100:350], stream[350:]])
        assert np.abs(whole.std_mean - chunked.std_mean).max() < 1e-9
        assert np.abs(whole.std_var - chunked.std_var).max() < 1e-9

    def test_empty_stream_rejected(self):
        params = initialize_lam_params(7, seed=0)
        with pytest.raises(ValueError, match="empty"):
            modulate_statistics(params, np.zeros((0, 7)))


class TestWeightHistograms:
    def test_uniform_kernel_gives_reciprocal_counts(self):
        rng = np.random.default_rng(18)
        phis = rng.normal(size=(5, 7))
        row_query = np.zeros(5, dtype=np.int64)
        report = weight_histograms(None, phis, row_query, 1, bins=4)
        for hs in report.slices.values():
            assert hs.counts.sum() == 5
            nonzero = hs.counts > 0
            assert np.abs(hs.mean_weight[nonzero] - 0.2).max() < 1e-12

    def test_counts_conserved_across_slices(self):
        rng = np.random.default_rng(19)
        sizes = [3, 7, 5, 1]
        row_query = np.repeat(np.arange(4), sizes)
        phis = rng.normal(size=(sum(sizes), 7))
        params = initialize_lam_params(7, seed=1)
        report = weight_histograms(params, phis, row_query, 4, bins=6)
        for hs in report.slices.values():
            assert hs.counts.sum() == sum(sizes)

    def test_temporal_slice_covers_normalized_offsets(self):
        rng = np.random.default_rng(20)
        phis = rng.normal(size=(50, 7))
        phis[:, 5] = rng.uniform(-1.0, 1.0, 50)
        phis[0, 5], phis[1, 5] = -1.0, 1.0
        report = weight_histograms(None, phis, np.zeros(50, dtype=np.int64), 1, bins=10)
        edges = report.slices["temporal"].edges
        assert edges[0] == -1.0 and edges[-1] == 1.0

    def test_requires_eval_mode(self):
        params = initialize_lam_params(7, seed=0)
        params.mode = "train"
        with pytest.raises(ValueError, match="eval"):
            weight_histograms(params, np.zeros((2, 7)), np.zeros(2, dtype=np.int64), 1)

    def test_csv_rendering(self, tmp_path):
        rng = np.random.default_rng(21)
        report = weight_histograms(None, rng.normal(size=(10, 7)),
                                   np.zeros(10, dtype=np.int64), 1, bins=3)
        path = tmp_path / "hist.csv"
        write_histogram_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "slice,bin_left,bin_right,count,normalized_weight_mean"
        assert len(lines) == 1 + 3 * len(report.slices)


class TestSerialization:
    def test_checkpoint_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(22)
        params = initialize_lam_params(9, seed=4)  # K=3
        params.std_mean = rng.normal(size=9)
        params.std_var = rng.uniform(0.5, 2.0, 9)
        params.head_bias = 0.25
        for layer in params.layers:
            layer.run_mean = rng.normal(size=layer.run_mean.shape)
            layer.run_var = rng.uniform(0.5, 2.0, layer.run_var.shape)
        path = tmp_path / "model.ckpt"
        save_lam_params(params, path)
        back = load_lam_params(path)
        assert back.mode == "eval"
        assert np.array_equal(back.std_mean, params.std_mean)
        assert np.array_equal(back.std_var, params.std_var)
        assert back.head_bias == params.head_bias
        for a, b in zip(params.layers, back.layers):
            assert np.array_equal(a.weight, b.weight)
            assert np.array_equal(a.gamma, b.gamma)
            assert np.array_equal(a.beta, b.beta)
            assert np.array_equal(a.run_mean, b.run_mean)
            assert np.array_equal(a.run_var, b.run_var)

    def test_header_layout(self, tmp_path):
        params = initialize_lam_params(7, seed=0)
        path = tmp_path / "model.ckpt"
        save_lam_params(params, path)
        blob = path.read_bytes()
        assert blob[:4] == b"LAMW"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:12], "little") == 7
        assert int.from_bytes(blob[12:16], "little") == 2

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FileFormatError, match="magic"):
            load_lam_params(path)

    def test_truncated_tensor_reports_offset(self, tmp_path):
        params = initialize_lam_params(7, seed=0)
        path = tmp_path / "model.ckpt"
        save_lam_params(params, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(FileFormatError, match="byte offset"):
            load_lam_params(path)

    def test_loss_trace_csv(self, tmp_path):
        trace = [EpochStats(0, 0.5, 0.25, 0.75), EpochStats(1, 0.4, 0.2, 0.6)]
        path = tmp_path / "trace.csv"
        write_loss_trace_csv(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,mean_ce,mean_lovasz,total"
        assert lines[1].startswith("0,0.5,0.25,0.75")
        assert len(lines) == 3
