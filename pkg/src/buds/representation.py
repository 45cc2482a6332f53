"""Fused per-state representations from multimodal observations.

Each modality gets an affine Gaussian encoder (mean and diagonal log-variance
heads) and an affine decoder. Per-state experts are fused in closed form as a
product of Gaussians together with a unit-variance prior, and the model is
trained to reconstruct the current observations of every modality from a
reparameterized sample of the fused posterior, plus a KL penalty against the
unit prior.

Encoding for the segmentation pipeline is deterministic: it returns the fused
posterior mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DemoSet
from .errors import DivergenceError, EmptyInput, ShapeError
from .nets import descend, max_relative_gradient_error

_F32 = np.dtype("<f4")


@dataclass
class ReprConfig:
    latent_dim: int = 8
    epochs: int = 150
    learning_rate: float = 0.01
    batch_size: int = 256
    kl_weight: float = 1e-3
    seed: int = 0


@dataclass
class GaussianExpert:
    """Diagonal Gaussian over the latent space; arrays are (..., d)."""

    mean: np.ndarray
    log_var: np.ndarray


def poe_fuse(experts: list[GaussianExpert], include_prior: bool = True) -> GaussianExpert:
    """Product of diagonal Gaussians: precisions add, means combine
    precision-weighted. `include_prior` adds a unit-variance zero-mean expert.
    """
    if not experts:
        raise EmptyInput("poe_fuse needs at least one expert")
    shape = experts[0].mean.shape
    for e in experts:
        if e.mean.shape != shape or e.log_var.shape != shape:
            raise ShapeError(f"expert shapes differ: {e.mean.shape} vs {shape}")
    precision = np.zeros(shape) + (1.0 if include_prior else 0.0)
    weighted = np.zeros(shape)
    for e in experts:
        q = np.exp(-e.log_var)
        precision = precision + q
        weighted = weighted + e.mean * q
    var = 1.0 / precision
    return GaussianExpert(mean=weighted * var, log_var=np.log(var))


@dataclass
class ModalityCoder:
    """Affine encoder (mean + log-variance heads) and affine decoder."""

    w_mean: np.ndarray  # (d_h, dim)
    b_mean: np.ndarray  # (d_h,)
    w_logvar: np.ndarray
    b_logvar: np.ndarray
    w_dec: np.ndarray  # (dim, d_h)
    b_dec: np.ndarray  # (dim,)

    def param_list(self) -> list[np.ndarray]:
        return [self.w_mean, self.b_mean, self.w_logvar, self.b_logvar, self.w_dec, self.b_dec]


@dataclass
class ReprModel:
    modalities: list[tuple[str, int]]  # (name, dim) in fusion order
    latent_dim: int
    coders: dict[str, ModalityCoder]
    loss_history: list[float] = field(default_factory=list)

    def param_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for name, _ in self.modalities:
            out.extend(self.coders[name].param_list())
        return out

    def expert(self, name: str, x: np.ndarray) -> GaussianExpert:
        c = self.coders[name]
        return GaussianExpert(x @ c.w_mean.T + c.b_mean, x @ c.w_logvar.T + c.b_logvar)


def init_model(modalities: list[tuple[str, int]], cfg: ReprConfig) -> ReprModel:
    """Seeded initialization; each modality draws from its own child stream."""
    coders = {}
    for idx, (name, dim) in enumerate(modalities):
        rng = np.random.default_rng([cfg.seed, idx])
        d = cfg.latent_dim
        coders[name] = ModalityCoder(
            w_mean=rng.standard_normal((d, dim)) / np.sqrt(dim),
            b_mean=np.zeros(d),
            w_logvar=0.01 * rng.standard_normal((d, dim)),
            b_logvar=np.zeros(d),
            w_dec=rng.standard_normal((dim, d)) / np.sqrt(d),
            b_dec=np.zeros(dim),
        )
    return ReprModel(list(modalities), cfg.latent_dim, coders)


def _fuse_batch(model: ReprModel, batch: dict[str, np.ndarray]):
    """Fused posterior for a batch; returns per-modality caches for backward."""
    mus, qs = {}, {}
    first = next(iter(batch.values()))
    precision = np.ones((first.shape[0], model.latent_dim))
    weighted = np.zeros_like(precision)
    for name, _ in model.modalities:
        e = model.expert(name, batch[name])
        q = np.exp(-e.log_var)
        mus[name], qs[name] = e.mean, q
        precision += q
        weighted += e.mean * q
    var = 1.0 / precision
    mu = weighted * var
    return mu, var, mus, qs


def _loss_and_grads(
    model: ReprModel,
    batch: dict[str, np.ndarray],
    kl_weight: float,
    noise: np.ndarray | None,
    want_grads: bool = True,
):
    """Reconstruction + KL loss, and gradients for every coder parameter.

    `noise` is the fixed reparameterization draw (batch, d_h); pass None to
    decode from the posterior mean (the deterministic evaluation loss).
    """
    B = next(iter(batch.values())).shape[0]
    mu, var, mus, qs = _fuse_batch(model, batch)
    z = mu if noise is None else mu + np.sqrt(var) * noise

    loss = 0.0
    errs = {}
    for name, dim in model.modalities:
        c = model.coders[name]
        err = (z @ c.w_dec.T + c.b_dec) - batch[name]
        errs[name] = err
        loss += float(np.mean(err**2))
    kl = 0.5 * float(np.sum(var + mu**2 - 1.0 - np.log(var))) / B
    loss += kl_weight * kl
    if not want_grads:
        return loss, None

    grads: list[np.ndarray] = []
    dz = np.zeros_like(z)
    dec_grads = {}
    for name, dim in model.modalities:
        c = model.coders[name]
        derr = (2.0 / (B * dim)) * errs[name]
        dec_grads[name] = (derr.T @ z, derr.sum(axis=0))
        dz += derr @ c.w_dec

    # z = mu + sqrt(var) * noise; KL acts on the fused (mu, var) directly.
    g_mu = dz + kl_weight * mu / B
    g_var = kl_weight * 0.5 * (1.0 - 1.0 / var) / B
    if noise is not None:
        g_var = g_var + dz * noise / (2.0 * np.sqrt(var))
    # mu = var * weighted, var = 1 / precision.
    weighted = mu / var
    g_var = g_var + g_mu * weighted
    g_weighted = g_mu * var
    g_precision = -(var**2) * g_var

    for name, dim in model.modalities:
        x = batch[name]
        g_mu_m = g_weighted * qs[name]
        g_q = g_weighted * mus[name] + g_precision
        g_lv = -qs[name] * g_q
        grads.extend(
            [
                g_mu_m.T @ x,
                g_mu_m.sum(axis=0),
                g_lv.T @ x,
                g_lv.sum(axis=0),
                dec_grads[name][0],
                dec_grads[name][1],
            ]
        )
    return loss, grads


def _training_matrices(demos: DemoSet) -> dict[str, np.ndarray]:
    return {
        m.name: np.concatenate([t.obs[m.name] for t in demos.trajectories]).astype(float)
        for m in demos.modalities
    }


def train_repr(demos: DemoSet, cfg: ReprConfig, initial: ReprModel | None = None) -> ReprModel:
    """Train (or continue from `initial`); deterministic per `cfg.seed`.

    The recorded `loss_history` is the deterministic mean-decoding loss and
    is non-increasing: an epoch whose loss rises is undone and the learning
    rate halved.
    """
    data = _training_matrices(demos)
    n = next(iter(data.values())).shape[0]
    modalities = [(m.name, m.dim) for m in demos.modalities]
    model = initial if initial is not None else init_model(modalities, cfg)
    params = model.param_list()
    batch = max(1, min(cfg.batch_size, n))

    def run_epoch(epoch: int, adam, lr: float) -> None:
        rng = np.random.default_rng([cfg.seed, 1000 + epoch])
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            sub = {name: data[name][idx] for name in data}
            noise = rng.standard_normal((idx.size, cfg.latent_dim))
            _, grads = _loss_and_grads(model, sub, cfg.kl_weight, noise)
            adam.step(params, grads, lr)

    def eval_loss() -> float:
        loss, _ = _loss_and_grads(model, data, cfg.kl_weight, None, want_grads=False)
        return loss

    model.loss_history = descend(
        params, run_epoch, eval_loss, cfg.epochs, cfg.learning_rate, DivergenceError
    )
    return model


def encode(model: ReprModel, obs: dict[str, np.ndarray]) -> np.ndarray:
    """Fused posterior mean for one state (1-D inputs) or a batch (2-D)."""
    single = next(iter(obs.values())).ndim == 1
    batch = {}
    for name, dim in model.modalities:
        if name not in obs:
            raise ShapeError(f"missing modality {name!r}")
        x = np.asarray(obs[name], dtype=float)
        if single:
            x = x[None, :]
        if x.shape[1] != dim:
            raise ShapeError(f"modality {name!r} has dim {x.shape[1]}, expected {dim}")
        batch[name] = x
    mu, _, _, _ = _fuse_batch(model, batch)
    return mu[0] if single else mu


def encode_trajectory(model: ReprModel, traj_obs: dict[str, np.ndarray]) -> np.ndarray:
    """(T, d_h) latents for a whole trajectory."""
    return encode(model, traj_obs)


def grad_check(model: ReprModel, batch: dict[str, np.ndarray], eps: float) -> float:
    """Max relative error of analytic vs central-difference gradients over a
    random subset of >= 50 parameters; 0.0 for an empty batch by convention.
    """
    batch = {k: np.asarray(v, dtype=float) for k, v in batch.items()}
    B = next(iter(batch.values())).shape[0] if batch else 0
    if B == 0:
        return 0.0
    noise = np.random.default_rng(0xA11CE).standard_normal((B, model.latent_dim))
    params = model.param_list()
    _, grads = _loss_and_grads(model, batch, 1e-3, noise)

    def loss_fn() -> float:
        loss, _ = _loss_and_grads(model, batch, 1e-3, noise, want_grads=False)
        return loss

    return max_relative_gradient_error(loss_fn, params, grads, eps)


def save_repr(model: ReprModel, directory: str | Path) -> None:
    """Persist as repr.json (shapes, order) + repr.params.f32 (flat blob)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "latent_dim": model.latent_dim,
        "modalities": [{"name": n, "dim": d} for n, d in model.modalities],
    }
    (root / "repr.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    flat = np.concatenate([p.ravel() for p in model.param_list()])
    flat.astype(_F32).tofile(root / "repr.params.f32")


def load_repr(directory: str | Path) -> ReprModel:
    root = Path(directory)
    header = json.loads((root / "repr.json").read_text())
    modalities = [(m["name"], int(m["dim"])) for m in header["modalities"]]
    model = init_model(modalities, ReprConfig(latent_dim=int(header["latent_dim"])))
    flat = np.fromfile(root / "repr.params.f32", dtype=_F32).astype(float)
    offset = 0
    for p in model.param_list():
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    model.loss_history = []
    return model
