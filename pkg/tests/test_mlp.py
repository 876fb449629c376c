"""Tests for the MLP, its gradient, synthetic datasets, and the training loop."""

import struct

import numpy as np
import pytest

from flatmin.errors import ContractViolationError
from flatmin.mlp import (
    Mlp,
    MlpSpec,
    accuracy,
    dataset_from_idx,
    forward_loss,
    inject_label_noise,
    load_idx,
    loss_and_grad,
    make_blobs,
    steps_per_epoch,
    train_classifier,
)
from flatmin.optim import AdamHyperParams, LrSchedule, MIAdamHyperParams, SgdParams


def reference_loss(model, inputs, labels):
    """Independent loss recomputation: explicit per-sample softmax CE."""
    a = inputs
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i != last:
            a = np.tanh(z) if model.spec.activation == "tanh" else np.maximum(z, 0.0)
        else:
            a = z
    total = 0.0
    for row, label in zip(a, labels):
        p = np.exp(row - row.max())
        p /= p.sum()
        total += -np.log(p[label])
    return total / len(labels)


SPEC = MlpSpec(layer_sizes=(5, 8, 3), activation="tanh", init_seed=1)


def toy_batch(n=6, seed=70):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal((n, 5))
    y = rng.integers(0, 3, size=n)
    return x, y


class TestForward:
    def test_uniform_logits_give_log_c(self):
        model = Mlp(SPEC)
        # zero all parameters: logits identically 0, softmax uniform over 3
        model.set_flat(np.zeros(model.num_params))
        x, y = toy_batch()
        loss, logits = forward_loss(model, x, y)
        assert loss == pytest.approx(np.log(3.0), rel=1e-14)
        assert np.all(logits == 0.0)

    def test_loss_matches_reference(self):
        model = Mlp(SPEC)
        x, y = toy_batch()
        loss, _ = forward_loss(model, x, y)
        assert loss == pytest.approx(reference_loss(model, x, y), rel=1e-12)

    def test_large_logits_stable(self):
        model = Mlp(SPEC)
        model.set_flat(model.get_flat() * 50.0)
        x, y = toy_batch()
        loss, _ = forward_loss(model, x, y)
        assert np.isfinite(loss)

    def test_empty_batch_rejected(self):
        model = Mlp(SPEC)
        with pytest.raises(ContractViolationError):
            forward_loss(model, np.empty((0, 5)), np.empty(0, dtype=int))

    def test_flat_roundtrip(self):
        model = Mlp(SPEC)
        flat = model.get_flat()
        other = Mlp(MlpSpec(layer_sizes=(5, 8, 3), activation="tanh", init_seed=99))
        other.set_flat(flat)
        assert np.array_equal(other.get_flat(), flat)

    def test_init_bounds_and_zero_biases(self):
        model = Mlp(MlpSpec(layer_sizes=(10, 4, 2), init_seed=3))
        limit0 = np.sqrt(6.0 / 14.0)
        assert np.all(np.abs(model.weights[0]) <= limit0)
        assert np.all(model.biases[0] == 0.0) and np.all(model.biases[1] == 0.0)

    def test_spec_validation(self):
        with pytest.raises(ContractViolationError):
            MlpSpec(layer_sizes=(5,))
        with pytest.raises(ContractViolationError):
            MlpSpec(layer_sizes=(5, 1))
        with pytest.raises(ContractViolationError):
            MlpSpec(layer_sizes=(5, 3), activation="gelu")


class TestGradient:
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_matches_finite_differences(self, activation):
        spec = MlpSpec(layer_sizes=(4, 6, 3), activation=activation, init_seed=2)
        model = Mlp(spec)
        rng = np.random.Generator(np.random.PCG64(71))
        x = rng.standard_normal((5, 4))
        y = rng.integers(0, 3, size=5)
        _, grad, _ = loss_and_grad(model, x, y)
        flat = model.get_flat()
        h = 1e-6
        idx = rng.choice(model.num_params, size=25, replace=False)
        probe = Mlp(spec)
        for i in idx:
            bumped = flat.copy()
            bumped[i] = flat[i] + h
            probe.set_flat(bumped)
            lp, _ = forward_loss(probe, x, y)
            bumped[i] = flat[i] - h
            probe.set_flat(bumped)
            lm, _ = forward_loss(probe, x, y)
            fd = (lp - lm) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_batch_permutation_invariance(self):
        model = Mlp(SPEC)
        x, y = toy_batch(n=8)
        _, g1, _ = loss_and_grad(model, x, y)
        perm = np.array([3, 1, 7, 0, 5, 2, 6, 4])
        _, g2, _ = loss_and_grad(model, x[perm], y[perm])
        assert np.max(np.abs(g1 - g2)) < 1e-14

    def test_duplicated_samples_average(self):
        model = Mlp(SPEC)
        x, y = toy_batch(n=4)
        _, g1, _ = loss_and_grad(model, x, y)
        x2 = np.vstack([x, x])
        y2 = np.concatenate([y, y])
        _, g2, _ = loss_and_grad(model, x2, y2)
        assert np.max(np.abs(g1 - g2)) < 1e-14

    def test_loss_consistent_with_forward(self):
        model = Mlp(SPEC)
        x, y = toy_batch()
        loss_f, _ = forward_loss(model, x, y)
        loss_b, _, _ = loss_and_grad(model, x, y)
        assert loss_b == loss_f


class TestBlobs:
    def test_shapes_and_counts(self):
        ds = make_blobs(classes=4, per_class=50, spread=1.0, seed=0)
        assert ds.inputs.shape == (200, 20)
        assert np.array_equal(np.bincount(ds.labels), [50, 50, 50, 50])
        assert len(ds.train_idx) == 160 and len(ds.test_idx) == 40
        assert len(np.intersect1d(ds.train_idx, ds.test_idx)) == 0

    def test_deterministic(self):
        a = make_blobs(3, 20, 0.5, seed=7)
        b = make_blobs(3, 20, 0.5, seed=7)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.train_idx, b.train_idx)

    def test_seed_changes_data(self):
        a = make_blobs(3, 20, 0.5, seed=7)
        b = make_blobs(3, 20, 0.5, seed=8)
        assert not np.array_equal(a.inputs, b.inputs)

    def test_validation(self):
        with pytest.raises(ContractViolationError):
            make_blobs(1, 10, 1.0, seed=0)
        with pytest.raises(ContractViolationError):
            make_blobs(3, 0, 1.0, seed=0)
        with pytest.raises(ContractViolationError):
            make_blobs(3, 10, 0.0, seed=0)


class TestLabelNoise:
    def test_exact_flip_count_train_only(self):
        ds = make_blobs(4, 100, 1.0, seed=1)
        noisy = inject_label_noise(ds, 0.25, seed=2)
        changed = np.nonzero(noisy.labels != ds.labels)[0]
        assert len(changed) == round(0.25 * len(ds.train_idx))
        assert set(changed).issubset(set(ds.train_idx.tolist()))
        assert np.array_equal(noisy.labels[ds.test_idx], ds.labels[ds.test_idx])

    def test_flips_change_class(self):
        ds = make_blobs(4, 100, 1.0, seed=1)
        noisy = inject_label_noise(ds, 0.5, seed=3)
        flipped = noisy.labels != ds.labels
        # every chosen victim ends up with a different label by construction
        assert np.sum(flipped) == round(0.5 * len(ds.train_idx))

    def test_zero_rate_identity(self):
        ds = make_blobs(3, 30, 1.0, seed=4)
        assert inject_label_noise(ds, 0.0, seed=5) is ds

    def test_deterministic(self):
        ds = make_blobs(4, 50, 1.0, seed=6)
        a = inject_label_noise(ds, 0.3, seed=9)
        b = inject_label_noise(ds, 0.3, seed=9)
        assert np.array_equal(a.labels, b.labels)

    def test_rate_bounds(self):
        ds = make_blobs(3, 10, 1.0, seed=0)
        with pytest.raises(ContractViolationError):
            inject_label_noise(ds, 1.0, seed=0)
        with pytest.raises(ContractViolationError):
            inject_label_noise(ds, -0.1, seed=0)


class TestIdx:
    def test_round_trip_synthetic_files(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(80))
        images = rng.integers(0, 256, size=(10, 4, 4), dtype=np.uint8)
        labels = rng.integers(0, 3, size=10, dtype=np.uint8)
        img_path = tmp_path / "img.idx"
        lab_path = tmp_path / "lab.idx"
        img_path.write_bytes(struct.pack(">IIII", 0x803, 10, 4, 4) + images.tobytes())
        lab_path.write_bytes(struct.pack(">II", 0x801, 10) + labels.tobytes())
        assert np.array_equal(load_idx(img_path), images)
        assert np.array_equal(load_idx(lab_path), labels)
        ds = dataset_from_idx(img_path, lab_path, seed=0)
        assert ds.inputs.shape == (10, 16)
        assert ds.inputs.max() <= 1.0 and ds.inputs.min() >= 0.0
        assert np.array_equal(ds.labels, labels.astype(np.int64))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">II", 0xDEAD, 1))
        with pytest.raises(ContractViolationError):
            load_idx(p)

    def test_mismatched_counts(self, tmp_path):
        img_path = tmp_path / "img.idx"
        lab_path = tmp_path / "lab.idx"
        img_path.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(8))
        lab_path.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
        with pytest.raises(ContractViolationError):
            dataset_from_idx(img_path, lab_path, seed=0)


class TestTraining:
    def test_steps_per_epoch_ceil(self):
        assert steps_per_epoch(100, 32) == 4
        assert steps_per_epoch(96, 32) == 3
        assert steps_per_epoch(1, 32) == 1

    def test_separable_blobs_high_test_accuracy(self):
        ds = make_blobs(3, 60, 1.0, seed=10)
        spec = MlpSpec(layer_sizes=(20, 16, 3), activation="tanh", init_seed=0)
        model, metrics = train_classifier(
            spec, ds, AdamHyperParams(alpha=1e-2, weight_decay=0.0),
            LrSchedule(), epochs=30, batch_size=32, seed=0,
        )
        assert metrics[-1]["test_acc"] > 0.95
        assert metrics[-1]["train_loss"] < metrics[0]["train_loss"]

    def test_deterministic(self):
        ds = make_blobs(3, 40, 1.0, seed=11)
        spec = MlpSpec(layer_sizes=(20, 8, 3), init_seed=1)
        hp = AdamHyperParams(alpha=1e-3)
        _, m1 = train_classifier(spec, ds, hp, LrSchedule(), 5, 16, seed=2)
        _, m2 = train_classifier(spec, ds, hp, LrSchedule(), 5, 16, seed=2)
        assert m1 == m2

    def test_shuffle_seed_matters(self):
        ds = make_blobs(3, 40, 1.0, seed=11)
        spec = MlpSpec(layer_sizes=(20, 8, 3), init_seed=1)
        hp = SgdParams(alpha=0.05)
        _, m1 = train_classifier(spec, ds, hp, LrSchedule(), 3, 16, seed=2)
        _, m2 = train_classifier(spec, ds, hp, LrSchedule(), 3, 16, seed=3)
        assert m1 != m2

    def test_metrics_one_row_per_epoch(self):
        ds = make_blobs(2, 20, 1.0, seed=12)
        spec = MlpSpec(layer_sizes=(20, 4, 2), init_seed=0)
        _, metrics = train_classifier(
            spec, ds, SgdParams(alpha=0.01), LrSchedule(), 7, 8, seed=0
        )
        assert [m["epoch"] for m in metrics] == list(range(1, 8))
        assert set(metrics[0]) == {"epoch", "train_loss", "train_acc", "test_loss", "test_acc"}

    def test_miadam_trains(self):
        ds = make_blobs(3, 60, 1.0, seed=13)
        spec = MlpSpec(layer_sizes=(20, 16, 3), activation="relu", init_seed=0)
        spe = steps_per_epoch(len(ds.train_idx), 32)
        hp = MIAdamHyperParams(
            adam=AdamHyperParams(alpha=1e-3, weight_decay=0.0),
            order_n=1, kappa=0.98, switch_step=5 * spe,
        )
        _, metrics = train_classifier(spec, ds, hp, LrSchedule(), 20, 32, seed=0)
        assert metrics[-1]["test_acc"] > 0.9

    def test_bad_args(self):
        ds = make_blobs(2, 10, 1.0, seed=0)
        spec = MlpSpec(layer_sizes=(20, 2), init_seed=0)
        with pytest.raises(ContractViolationError):
            train_classifier(spec, ds, SgdParams(alpha=0.1), LrSchedule(), 0, 8, seed=0)
        with pytest.raises(ContractViolationError):
            train_classifier(spec, ds, SgdParams(alpha=0.1), LrSchedule(), 1, 0, seed=0)

    def test_accuracy_bounds(self):
        model = Mlp(MlpSpec(layer_sizes=(5, 3), init_seed=0))
        x, y = toy_batch()
        acc = accuracy(model, x, y)
        assert 0.0 <= acc <= 1.0
