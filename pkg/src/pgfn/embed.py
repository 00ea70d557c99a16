"""Multimodal contrastive embedder: aligned structure, morphology, and joint
encoders trained with a temperature-scaled two-sided contrastive loss, with
early stopping on a cross-modality correlation metric.

Each encoder is a small ReLU base network plus a projector onto the unit
sphere, so cosine similarity between emitted latents is a plain dot product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import tensor as T
from .chemgraph import Fingerprint
from .errors import DegenerateData, EmptyBatch, ShapeMismatch
from .validation import as_float_matrix, as_float_vector, check_rng


@dataclass
class EmbedderConfig:
    struct_dim: int
    morph_dim: int
    latent_dim: int = 32
    intermediate_dim: int = 64
    temperature: float = 0.4
    batch_size: int = 128
    epochs: int = 200
    lr: float = 1e-3
    patience: int = 10
    pair_budget: int = 50_000
    morph_metric: str = "cosine_z"  # or "cosine_pca"
    pca_components: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("struct_dim", "morph_dim", "latent_dim", "intermediate_dim",
                     "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.temperature <= 0 or self.lr <= 0:
            raise ValueError("temperature and lr must be positive")
        if self.morph_metric not in ("cosine_z", "cosine_pca"):
            raise ValueError(f"unknown morph_metric {self.morph_metric!r}")


_ENCODERS = ("f", "h", "fh")


class GMCModel:
    """Three encoders (structure f, morphology h, joint fh) over one ParamStore."""

    def __init__(self, config: EmbedderConfig, store: T.ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if store is not None:
            self.store = store
            return
        rng = check_rng(rng if rng is not None else config.seed)
        self.store = T.ParamStore()
        for prefix in _ENCODERS:
            self.store.init_mlp(f"{prefix}.base", self._base_dims(prefix), rng)
            self.store.init_mlp(f"{prefix}.proj", self._proj_dims(), rng)
        # morphology standardization constants, fixed at fit time
        self.store.add("norm.morph_mean", np.zeros(config.morph_dim))
        self.store.add("norm.morph_std", np.ones(config.morph_dim))

    def _base_dims(self, prefix: str) -> list[int]:
        c = self.config
        inputs = {"f": c.struct_dim, "h": c.morph_dim, "fh": c.struct_dim + c.morph_dim}
        return [inputs[prefix], c.intermediate_dim]

    def _proj_dims(self) -> list[int]:
        c = self.config
        return [c.intermediate_dim, c.intermediate_dim, c.latent_dim]

    def set_morph_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.store.params["norm.morph_mean"][:] = mean
        self.store.params["norm.morph_std"][:] = std

    def standardize_morph(self, y: np.ndarray) -> np.ndarray:
        return (y - self.store["norm.morph_mean"]) / self.store["norm.morph_std"]

    # -- inference (tape-free; must agree with the training-path forward) ------

    def _encode(self, prefix: str, x: np.ndarray) -> np.ndarray:
        h = T.mlp_apply(self.store, f"{prefix}.base", self._base_dims(prefix), x,
                        final_relu=True)
        z = T.mlp_apply(self.store, f"{prefix}.proj", self._proj_dims(), h)
        return z / np.linalg.norm(z, axis=-1, keepdims=True)

    def _struct_input(self, structure) -> np.ndarray:
        if isinstance(structure, Fingerprint):
            structure = structure.to_dense()
        return as_float_vector(structure, self.config.struct_dim, "structure features")

    def embed_structure(self, structure) -> np.ndarray:
        return self._encode("f", self._struct_input(structure)[None, :])[0]

    def embed_morphology(self, morph) -> np.ndarray:
        y = as_float_vector(morph, self.config.morph_dim, "morphology features")
        return self._encode("h", self.standardize_morph(y)[None, :])[0]

    def embed_joint(self, structure, morph) -> np.ndarray:
        x = self._struct_input(structure)
        y = as_float_vector(morph, self.config.morph_dim, "morphology features")
        joint = np.concatenate([x, self.standardize_morph(y)])[None, :]
        return self._encode("fh", joint)[0]

    def embed_structure_batch(self, X: np.ndarray) -> np.ndarray:
        return self._encode("f", as_float_matrix(X, self.config.struct_dim))

    def embed_morphology_batch(self, Y: np.ndarray) -> np.ndarray:
        Y = as_float_matrix(Y, self.config.morph_dim)
        return self._encode("h", self.standardize_morph(Y))

    def embed_joint_batch(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X = as_float_matrix(X, self.config.struct_dim)
        Y = as_float_matrix(Y, self.config.morph_dim)
        return self._encode("fh", np.hstack([X, self.standardize_morph(Y)]))

    # -- training-path forward --------------------------------------------------

    def _encode_var(self, tape: T.Tape, prefix: str, x: T.Var) -> T.Var:
        h = T.mlp_apply_var(tape, self.store, f"{prefix}.base", self._base_dims(prefix),
                            x, final_relu=True)
        z = T.mlp_apply_var(tape, self.store, f"{prefix}.proj", self._proj_dims(), h)
        return T.l2_normalize_rows(tape, z)


def clip_loss_var(tape: T.Tape, z: T.Var, w: T.Var, temperature: float) -> T.Var:
    """Two-sided contrastive loss on the tape; z, w are unit-norm (N, s)."""
    n = z.value.shape[0]
    if n == 0:
        raise EmptyBatch("contrastive loss needs at least one pair")
    sims = T.scale(tape, T.matmul(tape, z, T.transpose(tape, w)), 1.0 / temperature)
    diag_idx = np.arange(n) * (n + 1)
    row_ls = T.log_softmax_op(tape, sims)
    col_ls = T.log_softmax_op(tape, T.transpose(tape, sims))
    row_diag = T.take(tape, T.reshape(tape, row_ls, (-1,)), diag_idx)
    col_diag = T.take(tape, T.reshape(tape, col_ls, (-1,)), diag_idx)
    return T.neg(tape, T.mean(tape, T.add(tape, row_diag, col_diag)))


def clip_loss(z: np.ndarray, w: np.ndarray, temperature: float) -> float:
    """Batch contrastive loss value for unit-norm latent matrices."""
    z = as_float_matrix(z, name="Z")
    w = as_float_matrix(w, name="W")
    if z.shape != w.shape:
        raise ShapeMismatch(f"latent shapes differ: {z.shape} vs {w.shape}")
    tape = T.Tape()
    return float(clip_loss_var(tape, T.constant(tape, z), T.constant(tape, w),
                               temperature).value)


def gmc_loss_var(model: GMCModel, tape: T.Tape, struct_feats: np.ndarray,
                 morph_feats: np.ndarray) -> T.Var:
    """Sum of both modality-to-joint contrastive terms, on the tape."""
    if len(struct_feats) == 0:
        raise EmptyBatch("empty batch")
    xs = T.constant(tape, struct_feats)
    ym = T.constant(tape, model.standardize_morph(morph_feats))
    joint = T.constant(tape, np.hstack([struct_feats, model.standardize_morph(morph_feats)]))
    zf = model._encode_var(tape, "f", xs)
    zh = model._encode_var(tape, "h", ym)
    zfh = model._encode_var(tape, "fh", joint)
    tau = model.config.temperature
    return T.add(tape, clip_loss_var(tape, zf, zfh, tau), clip_loss_var(tape, zh, zfh, tau))


def gmc_loss(model: GMCModel, struct_feats: np.ndarray, morph_feats: np.ndarray) -> float:
    tape = T.Tape()
    return float(gmc_loss_var(model, tape, np.asarray(struct_feats, dtype=np.float64),
                              np.asarray(morph_feats, dtype=np.float64)).value)


def _pca_basis(Y: np.ndarray, k: int) -> np.ndarray:
    centered = Y - Y.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[:k].T


def morph_similarity_pairs(Y: np.ndarray, pairs_i: np.ndarray, pairs_j: np.ndarray,
                           mean: np.ndarray, std: np.ndarray,
                           metric: str = "cosine_z", pca_basis: np.ndarray | None = None
                           ) -> np.ndarray:
    """Cosine similarity between morphology vectors after standardization
    (optionally projected onto a PCA basis from the training split)."""
    Z = (Y - mean) / std
    if metric == "cosine_pca":
        if pca_basis is None:
            raise DegenerateData("cosine_pca requires a PCA basis")
        Z = Z @ pca_basis
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise DegenerateData("zero-variance morphology features")
    U = Z / norms[:, None]
    return np.sum(U[pairs_i] * U[pairs_j], axis=1)


def sample_pairs(n: int, budget: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Ordered distinct pairs (i, j), exhaustively if they fit in the budget."""
    if n < 2:
        raise DegenerateData("need at least two items to sample pairs")
    total = n * (n - 1)
    if total <= budget:
        grid_i, grid_j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = grid_i != grid_j
        return grid_i[keep], grid_j[keep]
    i = rng.integers(n, size=budget)
    j = rng.integers(n - 1, size=budget)
    j = np.where(j >= i, j + 1, j)
    return i, j


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        raise DegenerateData("zero variance in correlation inputs")
    return float(np.corrcoef(a, b)[0, 1])


def validation_correlation(model: GMCModel, struct_feats: np.ndarray,
                           morph_feats: np.ndarray, pair_budget: int,
                           rng: np.random.Generator,
                           pca_basis: np.ndarray | None = None) -> float:
    """Pearson r between latent similarity cos(f(x_i), h(y_j)) and raw
    morphology similarity over sampled pairs."""
    X = as_float_matrix(struct_feats, model.config.struct_dim)
    Y = as_float_matrix(morph_feats, model.config.morph_dim)
    pairs_i, pairs_j = sample_pairs(len(X), pair_budget, rng)
    zf = model.embed_structure_batch(X)
    zh = model.embed_morphology_batch(Y)
    latent_sim = np.sum(zf[pairs_i] * zh[pairs_j], axis=1)
    morph_sim = morph_similarity_pairs(
        Y, pairs_i, pairs_j,
        model.store["norm.morph_mean"], model.store["norm.morph_std"],
        metric=model.config.morph_metric, pca_basis=pca_basis,
    )
    return _pearson(latent_sim, morph_sim)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_correlation: float
    best_so_far: float


@dataclass
class TrainingReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_correlation: float = float("-inf")


def train_embedder(train_struct: np.ndarray, train_morph: np.ndarray,
                   val_struct: np.ndarray, val_morph: np.ndarray,
                   config: EmbedderConfig, rng: np.random.Generator
                   ) -> tuple[GMCModel, TrainingReport]:
    """Fit the three encoders; keep the checkpoint with the best validation
    correlation and stop once `patience` epochs pass without improvement."""
    rng = check_rng(rng)
    Xt = as_float_matrix(train_struct, config.struct_dim)
    Yt = as_float_matrix(train_morph, config.morph_dim)
    Xv = as_float_matrix(val_struct, config.struct_dim)
    Yv = as_float_matrix(val_morph, config.morph_dim)
    std = Yt.std(axis=0)
    if np.any(std == 0):
        raise DegenerateData("training morphology features have zero variance")

    model = GMCModel(config, rng=rng)
    model.set_morph_stats(Yt.mean(axis=0), std)
    pca_basis = None
    if config.morph_metric == "cosine_pca":
        pca_basis = _pca_basis(model.standardize_morph(Yt), config.pca_components)

    report = TrainingReport()
    best_params = None
    wait = 0
    n = len(Xt)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            tape = T.Tape()
            loss = gmc_loss_var(model, tape, Xt[idx], Yt[idx])
            grads = T.backward(tape, 1.0, output=loss)
            grads.pop("norm.morph_mean", None)
            grads.pop("norm.morph_std", None)
            T.adam_step(model.store, grads, lr=config.lr)
            losses.append(float(loss.value))
        corr = validation_correlation(model, Xv, Yv, config.pair_budget,
                                      np.random.default_rng(config.seed + 1),
                                      pca_basis=pca_basis)
        if corr > report.best_correlation:
            report.best_correlation = corr
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.store.params.items()}
            wait = 0
        else:
            wait += 1
        report.epochs.append(EpochRecord(epoch, float(np.mean(losses)), corr,
                                         report.best_correlation))
        if wait >= config.patience:
            break
    if best_params is not None:
        for name, value in best_params.items():
            model.store.params[name][:] = value
    return model, report


# -- persistence ---------------------------------------------------------------

GMC_KIND = "gmc v1"


def save_gmc(model: GMCModel, path) -> None:
    c = model.config
    meta = {
        "struct_dim": c.struct_dim, "morph_dim": c.morph_dim,
        "latent_dim": c.latent_dim, "intermediate_dim": c.intermediate_dim,
        "temperature": c.temperature, "batch_size": c.batch_size,
        "epochs": c.epochs, "lr": c.lr, "patience": c.patience,
        "pair_budget": c.pair_budget, "morph_metric": c.morph_metric,
        "pca_components": c.pca_components, "seed": c.seed,
    }
    T.save_checkpoint(path, GMC_KIND, model.store, meta=meta)


def load_gmc(path) -> GMCModel:
    _, meta, store = T.load_checkpoint(path, expected_kind=GMC_KIND)
    return GMCModel(EmbedderConfig(**meta), store=store)


def export_latents(path, ids, latents: np.ndarray) -> None:
    """Delimited text: id, z_0..z_{s-1}."""
    with open(path, "w", encoding="ascii") as fh:
        for sample_id, z in zip(ids, latents):
            fh.write(str(sample_id) + "\t" + "\t".join(repr(v) for v in z) + "\n")


class GMCEmbedder(BaseEstimator):
    """Estimator facade: fit on (fingerprint matrix, morphology matrix) pairs,
    transform structures into unit-norm latents."""

    def __init__(self, latent_dim=32, intermediate_dim=64, temperature=0.4,
                 batch_size=128, epochs=200, lr=1e-3, patience=10,
                 pair_budget=50_000, morph_metric="cosine_z", pca_components=16,
                 seed=0, val_fraction=0.1):
        self.latent_dim = latent_dim
        self.intermediate_dim = intermediate_dim
        self.temperature = temperature
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.pair_budget = pair_budget
        self.morph_metric = morph_metric
        self.pca_components = pca_components
        self.seed = seed
        self.val_fraction = val_fraction

    def _config(self, struct_dim, morph_dim) -> EmbedderConfig:
        return EmbedderConfig(
            struct_dim=struct_dim, morph_dim=morph_dim,
            latent_dim=self.latent_dim, intermediate_dim=self.intermediate_dim,
            temperature=self.temperature, batch_size=self.batch_size,
            epochs=self.epochs, lr=self.lr, patience=self.patience,
            pair_budget=self.pair_budget, morph_metric=self.morph_metric,
            pca_components=self.pca_components, seed=self.seed,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = as_float_matrix(X)
        y = as_float_matrix(y)
        if X_val is None:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(X))
            n_val = max(2, int(len(X) * self.val_fraction))
            val_idx, train_idx = order[:n_val], order[n_val:]
            X, X_val = X[train_idx], X[val_idx]
            y, y_val = y[train_idx], y[val_idx]
        config = self._config(X.shape[1], y.shape[1])
        self.model_, self.report_ = train_embedder(
            X, y, X_val, y_val, config, np.random.default_rng(self.seed))
        return self

    def transform(self, X):
        return self.model_.embed_structure_batch(as_float_matrix(X))

    def score(self, X, y):
        """Validation correlation on held-out pairs."""
        return validation_correlation(
            self.model_, as_float_matrix(X), as_float_matrix(y),
            self.pair_budget, np.random.default_rng(self.seed))
