import math

import numpy as np
import pytest

from pgfn import tensor as T
from pgfn.embed import (
    EmbedderConfig,
    GMCEmbedder,
    GMCModel,
    clip_loss,
    clip_loss_var,
    gmc_loss,
    gmc_loss_var,
    load_gmc,
    save_gmc,
    train_embedder,
    validation_correlation,
)
from pgfn.errors import DegenerateData, EmptyBatch
from tests.util import finite_diff_check


def small_config(**overrides):
    base = dict(struct_dim=12, morph_dim=6, latent_dim=8, intermediate_dim=16,
                temperature=0.4, batch_size=16, epochs=5, lr=1e-3, patience=2,
                pair_budget=5000, seed=0)
    base.update(overrides)
    return EmbedderConfig(**base)


def toy_dataset(n=64, struct_dim=12, morph_dim=6, noise=0.0, seed=3):
    """Structures are random binary vectors; morphology is a fixed linear map."""
    rng = np.random.default_rng(seed)
    X = (rng.random((n, struct_dim)) < 0.35).astype(np.float64)
    G = rng.normal(size=(struct_dim, morph_dim)) / np.sqrt(struct_dim)
    Y = np.tanh(X @ G) + noise * rng.normal(size=(n, morph_dim))
    return X, Y


class TestClipLoss:
    def test_single_pair_is_zero(self):
        z = np.array([[1.0, 0.0]])
        assert clip_loss(z, z, temperature=0.4) == 0.0

    def test_all_identical_two_pairs(self):
        u = np.array([1.0, 0.0, 0.0])
        z = np.stack([u, u])
        for tau in (0.2, 0.4, 1.0):
            assert abs(clip_loss(z, z, tau) - 2 * math.log(2)) < 1e-6

    def test_orthogonal_pairs_hand_value(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        expected = 2 * math.log(1 + math.exp(-1.0))
        assert abs(clip_loss(z, z, temperature=1.0) - expected) < 1e-6

    def test_symmetry_in_arguments(self, rng):
        z = rng.normal(size=(5, 4))
        w = rng.normal(size=(5, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        assert abs(clip_loss(z, w, 0.4) - clip_loss(w, z, 0.4)) < 1e-12

    def test_batch_permutation_invariance(self, rng):
        z = rng.normal(size=(6, 4))
        w = rng.normal(size=(6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        perm = rng.permutation(6)
        assert abs(clip_loss(z, w, 0.4) - clip_loss(z[perm], w[perm], 0.4)) < 1e-12

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            clip_loss(np.zeros((0, 3)), np.zeros((0, 3)), 0.4)


class TestGMCLoss:
    def test_collapse_value(self):
        # encoders that map everything to one point degenerate to uniform rows
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(0))
        for name, arr in model.store.params.items():
            if name.startswith(("f.", "h.", "fh.")):
                arr[:] = 0.0
        # zero weights give zero vectors before normalization; bias the last
        # projector layer so all latents equal one fixed point
        for prefix in ("f", "h", "fh"):
            model.store.params[f"{prefix}.proj.b1"][0] = 1.0
        n = 8
        X = np.random.default_rng(1).random((n, config.struct_dim))
        Y = np.random.default_rng(2).random((n, config.morph_dim))
        expected = 2 * (2 * math.log(n))
        assert abs(gmc_loss(model, X, Y) - expected) < 1e-9

    def test_loss_decreases_on_toy_set(self):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(5))
        X, Y = toy_dataset(n=64)
        first = gmc_loss(model, X, Y)
        for _ in range(50):
            tape = T.Tape()
            loss = gmc_loss_var(model, tape, X, Y)
            grads = T.backward(tape, 1.0, output=loss)
            grads.pop("norm.morph_mean", None)
            grads.pop("norm.morph_std", None)
            T.adam_step(model.store, grads, lr=1e-3)
        assert gmc_loss(model, X, Y) < first

    def test_gradient_check(self):
        config = small_config(struct_dim=5, morph_dim=4, latent_dim=3,
                              intermediate_dim=6)
        model = GMCModel(config, rng=np.random.default_rng(7))
        X, Y = toy_dataset(n=5, struct_dim=5, morph_dim=4)

        def loss(store):
            tape = T.Tape()
            var = gmc_loss_var(model, tape, X, Y)
            grads = T.backward(tape, 1.0, output=var)
            grads.pop("norm.morph_mean", None)
            grads.pop("norm.morph_std", None)
            return float(var.value), grads

        finite_diff_check(model.store, loss)


class TestEmbedOutputs:
    def test_unit_norm(self, rng):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(1))
        for _ in range(20):
            x = (rng.random(config.struct_dim) < 0.3).astype(float)
            y = rng.normal(size=config.morph_dim)
            for z in (model.embed_structure(x), model.embed_morphology(y),
                      model.embed_joint(x, y)):
                assert abs(np.linalg.norm(z) - 1.0) < 1e-9

    def test_determinism(self, rng):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(2))
        x = (rng.random(config.struct_dim) < 0.3).astype(float)
        assert np.array_equal(model.embed_structure(x), model.embed_structure(x))

    def test_joint_sensitive_to_morphology(self, rng):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(3))
        x = (rng.random(config.struct_dim) < 0.5).astype(float)
        y1 = rng.normal(size=config.morph_dim)
        y2 = rng.normal(size=config.morph_dim)
        j1, j2 = model.embed_joint(x, y1), model.embed_joint(x, y2)
        assert not np.allclose(j1, j2)
        assert not np.allclose(j1, model.embed_structure(x))


class TestValidationCorrelation:
    def test_identity_construction_gives_r_one(self):
        # hand-built encoders that reproduce the standardized morphology
        # through a +/- split, so latent cosine == morphology cosine exactly
        f_dim = 4
        config = EmbedderConfig(struct_dim=f_dim, morph_dim=f_dim, latent_dim=f_dim,
                                intermediate_dim=2 * f_dim, temperature=0.4)
        model = GMCModel(config, rng=np.random.default_rng(0))
        split = np.hstack([np.eye(f_dim), -np.eye(f_dim)])
        rebuild = np.vstack([np.eye(f_dim), -np.eye(f_dim)])
        for prefix in ("f", "h"):
            model.store.params[f"{prefix}.base.W0"][:] = split
            model.store.params[f"{prefix}.base.b0"][:] = 0.0
            model.store.params[f"{prefix}.proj.W0"][:] = np.eye(2 * f_dim)
            model.store.params[f"{prefix}.proj.b0"][:] = 0.0
            model.store.params[f"{prefix}.proj.W1"][:] = rebuild
            model.store.params[f"{prefix}.proj.b1"][:] = 0.0
        rng = np.random.default_rng(4)
        Y = rng.normal(size=(40, f_dim))
        model.set_morph_stats(Y.mean(axis=0), Y.std(axis=0))
        X = model.standardize_morph(Y)  # structures literally carry morphology
        r = validation_correlation(model, X, Y, pair_budget=5000,
                                   rng=np.random.default_rng(0))
        assert r > 0.999999

    def test_untrained_model_small_r(self):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(11))
        X, Y = toy_dataset(n=80)
        model.set_morph_stats(Y.mean(axis=0), Y.std(axis=0))
        r = validation_correlation(model, X, Y, pair_budget=5000,
                                   rng=np.random.default_rng(1))
        assert abs(r) < 0.2

    def test_constant_morphology_degenerate(self):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(12))
        X, _ = toy_dataset(n=10)
        Y = np.ones((10, config.morph_dim))
        with pytest.raises(DegenerateData):
            validation_correlation(model, X, Y, pair_budget=100,
                                   rng=np.random.default_rng(0))


class TestTrainEmbedder:
    def test_patience_zero_trains_one_epoch(self):
        X, Y = toy_dataset(n=48)
        config = small_config(patience=0, epochs=50)
        model, report = train_embedder(X[:40], Y[:40], X[40:], Y[40:], config,
                                       np.random.default_rng(0))
        assert len(report.epochs) == 1

    def test_best_so_far_monotone(self):
        X, Y = toy_dataset(n=80)
        config = small_config(epochs=8, patience=8)
        _, report = train_embedder(X[:64], Y[:64], X[64:], Y[64:], config,
                                   np.random.default_rng(0))
        best = [rec.best_so_far for rec in report.epochs]
        assert best == sorted(best)
        assert all(rec.best_so_far >= rec.val_correlation - 1e-12 for rec in report.epochs)

    def test_learns_linear_relation(self):
        X, Y = toy_dataset(n=300, seed=9)
        config = small_config(epochs=40, patience=10, lr=2e-3)
        model, report = train_embedder(X[:260], Y[:260], X[260:], Y[260:], config,
                                       np.random.default_rng(0))
        assert report.best_correlation > 0.5

    def test_degenerate_training_features(self):
        X, Y = toy_dataset(n=20)
        with pytest.raises(DegenerateData):
            train_embedder(X, np.zeros_like(Y), X, Y, small_config(),
                           np.random.default_rng(0))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        config = small_config()
        model = GMCModel(config, rng=np.random.default_rng(21))
        path = tmp_path / "gmc.ckpt"
        save_gmc(model, path)
        loaded = load_gmc(path)
        assert loaded.config == config
        x = np.zeros(config.struct_dim)
        x[1] = 1.0
        assert np.array_equal(loaded.embed_structure(x), model.embed_structure(x))


class TestEstimator:
    def test_fit_transform_and_params(self):
        X, Y = toy_dataset(n=60)
        est = GMCEmbedder(latent_dim=8, intermediate_dim=16, epochs=3,
                          patience=1, batch_size=16, seed=0)
        assert est.get_params()["latent_dim"] == 8
        est.fit(X, Y)
        Z = est.transform(X)
        assert Z.shape == (60, 8)
        assert np.allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-9)
