import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference_impl as ref
from sidenoise.errors import ConfigError, NumericalError, ValidationError
from sidenoise.trainer import (
    ClassifierModel,
    TrainConfig,
    evaluate,
    label_confidences,
    load_checkpoint,
    predict,
    predict_features,
    save_checkpoint,
    train,
    weighted_ce_loss,
)

from conftest import build_dataset


def onehot(labels, c):
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def random_case(rng, n=8, c=5, d=7, zero_weights=0):
    model = ClassifierModel(rng.normal(0, 1.0, (c, d)), rng.normal(0, 1.0, c))
    x = rng.normal(size=(n, d))
    targets = onehot(rng.integers(0, c, n), c)
    w = rng.uniform(0.1, 2.0, n)
    if zero_weights:
        w[rng.choice(n, zero_weights, replace=False)] = 0.0
    return model, x, targets, w


def finite_difference_grads(model, x, targets, w, h=1e-5):
    dw = np.zeros_like(model.weights)
    db = np.zeros_like(model.bias)

    def loss_at(weights, bias):
        return weighted_ce_loss(ClassifierModel(weights, bias), x, targets, w)[0]

    for idx in np.ndindex(model.weights.shape):
        bump = np.array(model.weights)
        bump[idx] += h
        up = loss_at(bump, model.bias)
        bump[idx] -= 2 * h
        down = loss_at(bump, model.bias)
        dw[idx] = (up - down) / (2 * h)
    for i in range(model.bias.shape[0]):
        bump = np.array(model.bias)
        bump[i] += h
        up = loss_at(model.weights, bump)
        bump[i] -= 2 * h
        down = loss_at(model.weights, bump)
        db[i] = (up - down) / (2 * h)
    return dw, db


class TestWeightedCeLoss:
    def test_all_zero_weights_give_zero_loss_and_gradient(self):
        rng = np.random.default_rng(0)
        model, x, targets, _ = random_case(rng)
        loss, (dw, db) = weighted_ce_loss(model, x, targets, np.zeros(x.shape[0]))
        assert loss == 0.0
        assert not dw.any() and not db.any()

    def test_single_sample_half_probability_is_ln2(self):
        model = ClassifierModel(np.zeros((2, 3)), np.zeros(2))
        x = np.array([[0.2, -0.1, 0.4]])
        loss, _ = weighted_ce_loss(model, x, onehot([0], 2), np.ones(1))
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_matches_pure_python_reference(self):
        rng = np.random.default_rng(7)
        model, x, targets, w = random_case(rng)
        loss, _ = weighted_ce_loss(model, x, targets, w)
        want = ref.weighted_ce_loss(
            [list(r) for r in model.weights],
            list(model.bias),
            [list(r) for r in x],
            [list(r) for r in targets],
            list(w),
        )
        assert loss == pytest.approx(want, rel=1e-12)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(42)
        model, x, targets, w = random_case(rng, zero_weights=2)
        loss, (dw, db) = weighted_ce_loss(model, x, targets, w)
        fdw, fdb = finite_difference_grads(model, x, targets, w)
        rel_w = np.abs(dw - fdw) / np.maximum(1e-6, np.maximum(np.abs(dw), np.abs(fdw)))
        rel_b = np.abs(db - fdb) / np.maximum(1e-6, np.maximum(np.abs(db), np.abs(fdb)))
        assert rel_w.max() < 1e-4
        assert rel_b.max() < 1e-4

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(3)
        model, x, targets, w = random_case(rng)
        loss1, (dw1, db1) = weighted_ce_loss(model, x, targets, w)
        loss2, (dw2, db2) = weighted_ce_loss(model, x, targets, 7.5 * w)
        assert loss1 == pytest.approx(loss2, rel=1e-12)
        np.testing.assert_allclose(dw1, dw2, rtol=1e-12)
        np.testing.assert_allclose(db1, db2, rtol=1e-12)

    def test_negative_weights_rejected(self):
        rng = np.random.default_rng(1)
        model, x, targets, w = random_case(rng)
        w[0] = -0.5
        with pytest.raises(ValidationError):
            weighted_ce_loss(model, x, targets, w)


def separable_dataset(n_per_class=20, seed=0, margin=4.0):
    rng = np.random.default_rng(seed)
    feats = np.vstack(
        [
            rng.normal(0, 0.3, (n_per_class, 2)) + [margin, 0.0],
            rng.normal(0, 0.3, (n_per_class, 2)) + [-margin, 0.0],
        ]
    )
    labels = [0] * n_per_class + [1] * n_per_class
    return build_dataset(feats, labels)


class TestTrain:
    def test_separable_reaches_perfect_training_accuracy(self):
        ds = separable_dataset()
        cfg = TrainConfig(epochs=200, batch_size=8, seed=1)
        result = train(ds, np.ones(40), cfg)
        assert evaluate(result.model, ds)["top1"] == 1.0

    def test_loss_trace_nonincreasing_on_separable_fixture(self):
        ds = separable_dataset()
        cfg = TrainConfig(learning_rate=0.05, epochs=60, batch_size=40, seed=2)
        trace = train(ds, np.ones(40), cfg).epoch_losses
        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-12)

    def test_single_weighted_class_dominates_predictions(self):
        # both clusters on the same side of the origin so the learned
        # direction cannot flip sign across them
        rng = np.random.default_rng(13)
        feats = np.vstack(
            [
                rng.normal(0, 0.2, (20, 2)) + [2.0, 0.0],
                rng.normal(0, 0.2, (20, 2)) + [4.0, 0.0],
            ]
        )
        ds = build_dataset(feats, [0] * 20 + [1] * 20)
        w = np.array([1.0] * 20 + [0.0] * 20)
        result = train(ds, w, TrainConfig(epochs=100, batch_size=8, seed=3))
        preds = predict(result.model, ds)
        assert np.all(preds.argmax(axis=1) == 0)

    def test_fixed_seed_is_bit_reproducible(self):
        ds = separable_dataset()
        cfg = TrainConfig(epochs=20, batch_size=8, seed=9)
        a = train(ds, np.ones(40), cfg)
        b = train(ds, np.ones(40), cfg)
        assert np.array_equal(a.model.weights, b.model.weights)
        assert np.array_equal(a.model.bias, b.model.bias)
        assert a.epoch_losses == b.epoch_losses

    def test_weight_scaling_leaves_trajectory_unchanged(self):
        ds = separable_dataset()
        cfg = TrainConfig(epochs=15, batch_size=8, seed=4)
        a = train(ds, np.ones(40), cfg)
        b = train(ds, np.full(40, 0.37), cfg)
        np.testing.assert_allclose(a.model.weights, b.model.weights, atol=1e-12)
        np.testing.assert_allclose(a.epoch_losses, b.epoch_losses, atol=1e-12)

    def test_matches_batch_gradient_descent_optimum(self):
        # with uniform weights and smoothing off this is ordinary softmax
        # regression; on an overlapping (convex, finite-optimum) fixture it
        # must land where an independent full-batch GD run converges
        rng = np.random.default_rng(5)
        feats = np.vstack(
            [
                rng.normal(0, 1.0, (10, 2)) + [0.2, 0.0],
                rng.normal(0, 1.0, (10, 2)) + [-0.2, 0.0],
            ]
        )
        ds = build_dataset(feats, [0] * 10 + [1] * 10)
        cfg = TrainConfig(
            learning_rate=0.5, lr_decay_at=(0.5, 0.8), epochs=4000,
            batch_size=20, seed=6,
        )
        ours = train(ds, np.ones(20), cfg).model

        x, labels = ds.features, ds.noisy_labels
        t = onehot(labels, 2)
        w_mat = np.zeros((2, 2))
        b = np.zeros(2)
        for _ in range(60000):
            logits = x @ w_mat.T + b
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            g = (p - t) / 20
            w_mat -= 0.5 * g.T @ x
            b -= 0.5 * g.sum(axis=0)

        # softmax has a gauge freedom (adding one vector to every class row);
        # compare the centered representatives of both optima
        def centered(weights, bias):
            return weights - weights.mean(axis=0), bias - bias.mean()

        got_w, got_b = centered(ours.weights, ours.bias)
        want_w, want_b = centered(w_mat, b)
        assert np.linalg.norm(got_w - want_w) < 1e-3
        assert np.linalg.norm(got_b - want_b) < 1e-3

    def test_divergence_aborts_with_diagnostic(self):
        # huge feature scale x huge learning rate overflows the parameters
        feats = 1e160 * np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
        ds = build_dataset(feats, [0, 0, 1, 1])
        cfg = TrainConfig(learning_rate=1e160, epochs=5, batch_size=2, seed=0)
        with pytest.raises(NumericalError, match="diverged"):
            train(ds, np.ones(4), cfg)

    def test_smoothing_requires_predictions(self):
        ds = separable_dataset()
        cfg = TrainConfig(epochs=1, smoothing=True)
        with pytest.raises(ConfigError, match="smoothing"):
            train(ds, np.ones(40), cfg)

    def test_smoothing_consumes_prediction_matrix(self):
        ds = separable_dataset()
        cfg = TrainConfig(epochs=5, smoothing=True, smoothing_topk=2, seed=1)
        preds = np.full((40, 2), 0.5)
        result = train(ds, np.ones(40), cfg, smoothing_predictions=preds)
        assert np.all(np.isfinite(result.model.weights))

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError, match="epochs"):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError, match="batch_size"):
            TrainConfig(batch_size=0)


class TestPredict:
    def test_zero_model_is_uniform(self):
        ds = separable_dataset()
        model = ClassifierModel(np.zeros((2, 2)), np.zeros(2))
        np.testing.assert_allclose(predict(model, ds), 0.5, atol=1e-15)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(6, 3))
        model = ClassifierModel(rng.normal(size=(4, 3)), rng.normal(size=4))
        shifted = ClassifierModel(model.weights, model.bias + 123.4)
        np.testing.assert_allclose(
            predict_features(model, x), predict_features(shifted, x), atol=1e-12
        )

    @settings(max_examples=40)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=5.0, size=(5, 4))
        model = ClassifierModel(rng.normal(scale=5.0, size=(3, 4)), rng.normal(size=3))
        probs = predict_features(model, x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs >= 0)

    def test_large_margin_argmax_matches_matrix_product_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(10, 4))
        x[0] = 50.0 * rng.normal(size=4)
        model = ClassifierModel(rng.normal(size=(6, 4)), rng.normal(size=6))
        probs = predict_features(model, x)
        direct = x @ model.weights.T + model.bias  # independent evaluation
        np.testing.assert_array_equal(probs.argmax(axis=1), direct.argmax(axis=1))

    def test_dimension_mismatch_rejected(self):
        model = ClassifierModel(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValidationError, match="dimension"):
            predict_features(model, np.zeros((4, 5)))

    def test_label_confidences_pick_own_label_probability(self):
        ds = separable_dataset(n_per_class=3)
        model = ClassifierModel(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
        conf = label_confidences(model, ds)
        probs = predict(model, ds)
        np.testing.assert_allclose(conf, probs[np.arange(6), ds.noisy_labels], atol=0)


class TestEvaluate:
    def test_perfect_predictor(self):
        ds = separable_dataset()
        model = ClassifierModel(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
        metrics = evaluate(model, ds)
        assert metrics["top1"] == 1.0
        assert metrics["top5"] == 1.0
        assert metrics["n"] == 40

    def test_uniform_predictor_near_chance_with_binomial_bound(self):
        # uniform probabilities tie-break to class 0, so top1 equals the
        # fraction of label-0 samples: binomial(n, 1/20) at n >= 10k
        rng = np.random.default_rng(123)
        n, c = 12000, 20
        labels = rng.integers(0, c, n)
        feats = rng.normal(size=(n, 2))
        ds = build_dataset(feats, labels, num_classes=c)
        model = ClassifierModel(np.zeros((c, 2)), np.zeros(c))
        top1 = evaluate(model, ds)["top1"]
        p = 1.0 / c
        half_width = 2.576 * math.sqrt(p * (1 - p) / n)  # 99% CI
        assert abs(top1 - p) <= half_width

    def test_top5_ties_break_to_lower_class_index(self):
        feats = [[1.0, 0.0]] * 6
        ds = build_dataset(feats, [4, 5, 0, 1, 2, 3], num_classes=6)
        model = ClassifierModel(np.zeros((6, 2)), np.zeros(6))
        metrics = evaluate(model, ds)
        # uniform scores: top-5 = classes 0..4, so only the label-5 sample misses
        assert metrics["top5"] == pytest.approx(5 / 6)

    def test_small_class_count_reports_top_min5(self):
        ds = separable_dataset()
        model = ClassifierModel(np.zeros((2, 2)), np.zeros(2))
        assert evaluate(model, ds)["top5"] == 1.0  # top-2 with C=2

    @settings(max_examples=30)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_top1_never_exceeds_top5(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 9))
        feats = rng.normal(size=(max(c, 12), 3))
        labels = rng.integers(0, c, feats.shape[0])
        labels[:c] = np.arange(c)  # every class occupied
        ds = build_dataset(feats, labels, num_classes=c)
        model = ClassifierModel(rng.normal(size=(c, 3)), rng.normal(size=c))
        metrics = evaluate(model, ds)
        assert metrics["top1"] <= metrics["top5"]

    def test_clean_label_field(self):
        ds = build_dataset(
            [[1.0, 0.0], [0.0, 1.0]], [0, 1], clean=[1, 1], num_classes=2
        )
        model = ClassifierModel(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))
        assert evaluate(model, ds, "noisy")["top1"] == 1.0
        assert evaluate(model, ds, "clean")["top1"] == 0.5

    def test_clean_field_requires_labels(self, two_class_dataset):
        model = ClassifierModel(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValidationError, match="clean"):
            evaluate(model, two_class_dataset, "clean")

    def test_unknown_field_rejected(self, two_class_dataset):
        model = ClassifierModel(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ConfigError):
            evaluate(model, two_class_dataset, "oracle")


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(77)
        model = ClassifierModel(rng.normal(size=(3, 5)), rng.normal(size=3))
        save_checkpoint(model, tmp_path / "m.tsv", extra_header=("epochs=100",))
        back = load_checkpoint(tmp_path / "m.tsv")
        np.testing.assert_array_equal(back.weights, model.weights)
        np.testing.assert_array_equal(back.bias, model.bias)

    def test_header_shape_mismatch_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("# C=2 d=2\n1\t2\n3\t4\n")
        with pytest.raises(Exception):
            load_checkpoint(path)
