import math

import numpy as np
import pytest

from attnwalk.errors import BadConfig, IndexOutOfRange, NonFiniteLoss
from attnwalk.oracles import central_difference
from attnwalk.trainer import (
    ToyModel,
    TrainConfig,
    batch_indices,
    forward,
    synth_dataset,
    train,
    update_directions,
)


def small_config(**kw):
    base = dict(n=5, d=6, vocab=12, classes=3, batch_size=16, steps=20, n_samples=96)
    base.update(kw)
    return TrainConfig(**base)


def trained_model(cfg, steps=15):
    _, model = train(TrainConfig(**{**cfg.__dict__, "steps": steps}))
    return model


class TestDataset:
    def test_deterministic(self):
        a = synth_dataset(3, 8, 16, 32, 4, 200)
        b = synth_dataset(3, 8, 16, 32, 4, 200)
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_balanced(self):
        ds = synth_dataset(0, 8, 16, 32, 2, 100)
        assert np.bincount(ds.labels).tolist() == [50, 50]
        counts = np.bincount(synth_dataset(0, 8, 16, 32, 3, 100).labels)
        assert counts.max() - counts.min() <= 1

    def test_gold_probe_is_perfect(self):
        classes = 4
        ds = synth_dataset(5, 8, 16, 32, classes, 64)
        gold = np.eye(classes)[ds.cluster_of]  # each token at its cluster center
        pooled = gold[ds.ids].mean(axis=1)
        probe = np.eye(classes)  # linear probe: score per cluster
        assert np.mean(np.argmax(pooled @ probe.T, axis=1) == ds.labels) == 1.0

    def test_vocab_too_small(self):
        with pytest.raises(BadConfig):
            synth_dataset(0, 8, 16, 7, 4, 10)


class TestForward:
    def test_initial_loss_is_log_classes(self):
        cfg = TrainConfig(batch_size=256)
        ds = synth_dataset(cfg.seed, cfg.n, cfg.d, cfg.vocab, cfg.classes, 256)
        fp = forward(ToyModel.init(cfg), ds.ids, ds.labels)
        assert abs(fp.loss - math.log(cfg.classes)) <= 0.1

    def test_duplicate_samples(self):
        cfg = small_config()
        model = trained_model(cfg)
        ds = synth_dataset(0, cfg.n, cfg.d, cfg.vocab, cfg.classes, 4)
        ids = np.concatenate([ds.ids, ds.ids[:1]])
        labels = np.concatenate([ds.labels, ds.labels[:1]])
        losses = forward(model, ids, labels).per_sample_loss
        assert losses[0] == losses[-1]

    def test_head_gradient_finite_differences(self):
        cfg = small_config()
        model = trained_model(cfg)
        ds = synth_dataset(1, cfg.n, cfg.d, cfg.vocab, cfg.classes, 12)
        fp = forward(model, ds.ids, ds.labels)

        def loss(head):
            return forward(ToyModel(model.embedding, head, model.ln), ds.ids, ds.labels).loss

        numeric = central_difference(loss, model.head, 1e-6)
        assert np.max(np.abs(fp.grads["head"] - numeric)) / np.max(np.abs(numeric)) <= 1e-5

    def test_embedding_gradient_finite_differences(self):
        cfg = small_config()
        model = trained_model(cfg)
        ds = synth_dataset(2, cfg.n, cfg.d, cfg.vocab, cfg.classes, 6)
        fp = forward(model, ds.ids, ds.labels)

        def loss(emb):
            return forward(ToyModel(emb, model.head, model.ln), ds.ids, ds.labels).loss

        numeric = central_difference(loss, model.embedding, 1e-6)
        assert np.max(np.abs(fp.grads["embedding"] - numeric)) / np.max(np.abs(numeric)) <= 1e-5

    def test_captures_reconstruct_gradients(self):
        cfg = small_config()
        model = trained_model(cfg)
        ds = synth_dataset(3, cfg.n, cfg.d, cfg.vocab, cfg.classes, 10)
        fp = forward(model, ds.ids, ds.labels)
        a, g = fp.captures["head"]
        np.testing.assert_allclose(np.einsum("np,nm->pm", g, a) / len(a), fp.grads["head"], atol=1e-10)
        a, g = fp.captures["embedding"]
        np.testing.assert_allclose(np.einsum("nkp,nkm->pm", g, a) / len(a), fp.grads["embedding"].T, atol=1e-10)

    def test_bad_token(self):
        cfg = small_config()
        with pytest.raises(IndexOutOfRange):
            forward(ToyModel.init(cfg), np.array([[0, cfg.vocab]]), np.array([0]))


class TestTrain:
    def test_zero_steps(self):
        cfg = small_config(steps=0)
        curve, model = train(cfg)
        assert len(curve) == 0
        init = ToyModel.init(cfg)
        np.testing.assert_array_equal(model.embedding, init.embedding)
        np.testing.assert_array_equal(model.head, init.head)

    @pytest.mark.parametrize("optimizer", ["sgd", "cgfac"])
    def test_bit_identical(self, optimizer):
        cfg = small_config(optimizer=optimizer)
        a, ma = train(cfg)
        b, mb = train(cfg)
        assert a.deterministic_part() == b.deterministic_part()
        np.testing.assert_array_equal(ma.embedding, mb.embedding)

    @pytest.mark.parametrize("optimizer", ["sgd", "cgfac"])
    def test_loss_decreases(self, optimizer):
        curve, _ = train(small_config(optimizer=optimizer, steps=60))
        losses = curve.column("loss")
        assert np.all(np.isfinite(losses))
        assert losses[-5:].mean() < losses[0]

    def test_sgd_reports_no_cg_iterations(self):
        curve, _ = train(small_config(steps=3))
        assert curve.column("cg_iterations").tolist() == [0, 0, 0]
        curve, _ = train(small_config(steps=3, optimizer="cgfac"))
        assert curve.column("cg_iterations").min() > 0

    def test_large_damping_matches_sgd(self):
        gamma = 1e6
        sgd = small_config(eta=0.5)
        cg = small_config(optimizer="cgfac", gamma=gamma, eta=0.5 * gamma)
        model = trained_model(sgd, steps=10)
        ds = synth_dataset(0, sgd.n, sgd.d, sgd.vocab, sgd.classes, sgd.n_samples)
        idx = batch_indices(sgd, 0)
        fp = forward(model, ds.ids[idx], ds.labels[idx])
        d_sgd, _ = update_directions(model, fp, sgd)
        d_cg, _ = update_directions(model, fp, cg)
        a = np.concatenate([d_cg[k].ravel() for k in ("embedding", "head")])
        b = np.concatenate([d_sgd[k].ravel() for k in ("embedding", "head")])
        assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-3

    def test_non_finite_loss(self):
        with np.errstate(all="ignore"):
            with pytest.raises(NonFiniteLoss, match="step"):
                train(small_config(eta=1e300, steps=10))

    def test_config_validation(self):
        with pytest.raises(BadConfig):
            TrainConfig(optimizer="adam")
        with pytest.raises(BadConfig):
            TrainConfig(vocab=5, classes=4)
