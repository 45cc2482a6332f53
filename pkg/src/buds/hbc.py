"""Hierarchical behavior cloning: goal-conditioned skills plus a per-task
cVAE meta controller.

Each skill pairs an action policy with a subgoal encoder that maps a future
observation into a compact subgoal vector; both are trained jointly on the
skill's goal-relabeled dataset. The meta controller is a conditional VAE
that, given the current observation, emits a categorical head over skill ids
and a subgoal vector; at rollout time it is consulted every `meta_period`
low-level steps and the selected skill acts in between.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import SkillDataset, SkillPartition, goal_index
from .data import DemoSet
from .errors import DivergenceError, EmptyDataset, ShapeError
from .nets import MLP, descend, max_relative_gradient_error

_F32 = np.dtype("<f4")


@dataclass
class HbcConfig:
    subgoal_dim: int = 4  # d_omega
    lookahead: int = 10  # H
    latent_dim: int = 4  # d_z of the meta cVAE
    policy_hidden: tuple[int, int] = (64, 64)
    encoder_hidden: tuple[int, int] = (32, 32)
    cvae_hidden: tuple[int, int] = (48, 48)
    epochs: int = 300
    learning_rate: float = 0.01
    batch_size: int = 1024
    kl_weight: float = 1.0
    meta_period: int = 5
    seed: int = 0


@dataclass
class Standardizer:
    """Per-dimension z-scoring; identity until fit. Keeps the regression
    scale-free so one optimizer setting works for any action/obs units.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray) -> "Standardizer":
        std = data.std(axis=0)
        return cls(data.mean(axis=0), np.maximum(std, 1e-6))

    @classmethod
    def fit_scalar(cls, data: np.ndarray) -> "Standardizer":
        """Center per dimension but scale by one shared factor, preserving
        the relative weighting of plain MSE across output dimensions.
        """
        scale = max(float(np.sqrt(data.var(axis=0).mean())), 1e-6)
        return cls(data.mean(axis=0), np.full(data.shape[1], scale))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class SkillPolicy:
    skill: int
    obs_dim: int
    action_dim: int
    subgoal_dim: int
    net: MLP  # (normalized obs + subgoal) -> normalized action
    encoder: MLP  # normalized goal obs -> subgoal
    obs_norm: Standardizer
    act_norm: Standardizer
    loss_history: list[float] = field(default_factory=list)

    def param_list(self) -> list[np.ndarray]:
        return self.net.params + self.encoder.params


@dataclass
class MetaController:
    task_id: str
    num_skills: int
    obs_dim: int
    subgoal_dim: int
    latent_dim: int
    meta_period: int
    enc: MLP | None  # (obs + onehot + subgoal) -> (mu, log var) of z
    dec: MLP  # (obs + z) -> (skill logits, subgoal)
    obs_norm: Standardizer
    omega_norm: Standardizer
    loss_history: list[float] = field(default_factory=list)

    def param_list(self) -> list[np.ndarray]:
        params = list(self.dec.params)
        if self.enc is not None:
            params = self.enc.params + params
        return params


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_skill_policy(
    skill: int, obs_dim: int, action_dim: int, cfg: HbcConfig
) -> SkillPolicy:
    rng = np.random.default_rng([cfg.seed, skill])
    net = MLP([obs_dim + cfg.subgoal_dim, *cfg.policy_hidden, action_dim], rng)
    encoder = MLP([obs_dim, *cfg.encoder_hidden, cfg.subgoal_dim], rng)
    return SkillPolicy(
        skill,
        obs_dim,
        action_dim,
        cfg.subgoal_dim,
        net,
        encoder,
        Standardizer.identity(obs_dim),
        Standardizer.identity(action_dim),
    )


def _skill_loss_and_grads(
    policy: SkillPolicy,
    states: np.ndarray,
    actions: np.ndarray,
    goals: np.ndarray,
    want_grads: bool = True,
):
    B, act_dim = actions.shape
    omega, enc_acts = policy.encoder.forward_cache(goals)
    x = np.concatenate([states, omega], axis=1)
    pred, net_acts = policy.net.forward_cache(x)
    err = pred - actions
    loss = float(np.mean(err**2))
    if not want_grads:
        return loss, None
    dpred = (2.0 / (B * act_dim)) * err
    net_grads, dx = policy.net.backward(net_acts, dpred)
    enc_grads, _ = policy.encoder.backward(enc_acts, dx[:, policy.obs_dim :])
    return loss, net_grads + enc_grads


def train_skill(dataset: SkillDataset, cfg: HbcConfig) -> SkillPolicy:
    """Jointly fit the action policy and subgoal encoder by squared action
    error (in standardized units); deterministic per seed, recorded loss
    non-increasing.
    """
    if len(dataset) == 0:
        raise EmptyDataset(f"skill {dataset.skill} has no tuples")
    policy = init_skill_policy(
        dataset.skill, dataset.states.shape[1], dataset.actions.shape[1], cfg
    )
    policy.obs_norm = Standardizer.fit(np.asarray(dataset.states, dtype=float))
    policy.act_norm = Standardizer.fit_scalar(np.asarray(dataset.actions, dtype=float))
    states = policy.obs_norm.apply(np.asarray(dataset.states, dtype=float))
    actions = policy.act_norm.apply(np.asarray(dataset.actions, dtype=float))
    goals = policy.obs_norm.apply(np.asarray(dataset.goals, dtype=float))
    params = policy.param_list()
    n = states.shape[0]
    batch = max(1, min(cfg.batch_size, n))

    def run_epoch(epoch: int, adam, lr: float) -> None:
        if batch >= n:
            order = np.arange(n)
        else:
            order = np.random.default_rng([cfg.seed, dataset.skill, 1000 + epoch]).permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            _, grads = _skill_loss_and_grads(policy, states[idx], actions[idx], goals[idx])
            adam.step(params, grads, lr)

    def eval_loss() -> float:
        loss, _ = _skill_loss_and_grads(policy, states, actions, goals, want_grads=False)
        return loss

    policy.loss_history = descend(
        params, run_epoch, eval_loss, cfg.epochs, cfg.learning_rate, DivergenceError
    )
    return policy


def encode_subgoal(policy: SkillPolicy, goal_state: np.ndarray) -> np.ndarray:
    """E_k: map a goal observation to its subgoal vector."""
    goal_state = policy.obs_norm.apply(np.asarray(goal_state, dtype=float))
    if goal_state.ndim == 1:
        return policy.encoder.forward(goal_state[None, :])[0]
    return policy.encoder.forward(goal_state)


def skill_act(policy: SkillPolicy, state: np.ndarray, subgoal: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of one skill."""
    state = np.asarray(state, dtype=float)
    subgoal = np.asarray(subgoal, dtype=float)
    if state.shape != (policy.obs_dim,) or subgoal.shape != (policy.subgoal_dim,):
        raise ShapeError(
            f"expected state ({policy.obs_dim},) and subgoal ({policy.subgoal_dim},), "
            f"got {state.shape} and {subgoal.shape}"
        )
    x = np.concatenate([policy.obs_norm.apply(state), subgoal])
    return policy.act_norm.invert(policy.net.forward(x[None, :])[0])


def grad_check_skill(policy: SkillPolicy, batch: SkillDataset, eps: float) -> float:
    """Finite-difference check of the skill training loss."""
    if len(batch) == 0:
        return 0.0
    states = policy.obs_norm.apply(np.asarray(batch.states, dtype=float))
    actions = policy.act_norm.apply(np.asarray(batch.actions, dtype=float))
    goals = policy.obs_norm.apply(np.asarray(batch.goals, dtype=float))
    params = policy.param_list()
    _, grads = _skill_loss_and_grads(policy, states, actions, goals)

    def loss_fn() -> float:
        loss, _ = _skill_loss_and_grads(policy, states, actions, goals, want_grads=False)
        return loss

    return max_relative_gradient_error(loss_fn, params, grads, eps)


def init_meta(task_id: str, num_skills: int, obs_dim: int, cfg: HbcConfig) -> MetaController:
    rng = np.random.default_rng([cfg.seed, 0x3E7A])
    enc = None
    if cfg.latent_dim > 0:
        # Zeroing the one-hot input columns keeps training equivariant under
        # permutations of the skill ids.
        enc = MLP(
            [obs_dim + num_skills + cfg.subgoal_dim, *cfg.cvae_hidden, 2 * cfg.latent_dim],
            rng,
            zero_input_cols=slice(obs_dim, obs_dim + num_skills),
        )
    dec = MLP([obs_dim + cfg.latent_dim, *cfg.cvae_hidden, num_skills + cfg.subgoal_dim], rng)
    return MetaController(
        task_id,
        num_skills,
        obs_dim,
        cfg.subgoal_dim,
        cfg.latent_dim,
        cfg.meta_period,
        enc,
        dec,
        Standardizer.identity(obs_dim),
        Standardizer.identity(cfg.subgoal_dim),
    )


def _meta_loss_and_grads(
    meta: MetaController,
    states: np.ndarray,
    labels: np.ndarray,
    omegas: np.ndarray,
    kl_weight: float,
    noise: np.ndarray | None,
    want_grads: bool = True,
):
    """cVAE loss: skill cross-entropy + subgoal MSE + KL(q(z) || N(0, I)).

    `noise` is the fixed reparameterization draw; None decodes from the
    posterior mean (the deterministic evaluation path).
    """
    B = states.shape[0]
    K, d_w, d_z = meta.num_skills, meta.subgoal_dim, meta.latent_dim
    onehot = np.zeros((B, K))
    onehot[np.arange(B), labels] = 1.0

    if meta.enc is not None:
        enc_out, enc_acts = meta.enc.forward_cache(
            np.concatenate([states, onehot, omegas], axis=1)
        )
        mu, logvar = enc_out[:, :d_z], enc_out[:, d_z:]
        sigma = np.exp(0.5 * logvar)
        z = mu if noise is None else mu + sigma * noise
        kl = 0.5 * float(np.sum(np.exp(logvar) + mu**2 - 1.0 - logvar)) / B
        dec_in = np.concatenate([states, z], axis=1)
    else:
        kl = 0.0
        dec_in = states

    dec_out, dec_acts = meta.dec.forward_cache(dec_in)
    logits, omega_pred = dec_out[:, :K], dec_out[:, K:]
    probs = _softmax(logits)
    ce = -float(np.mean(np.log(probs[np.arange(B), labels] + 1e-300)))
    mse = float(np.mean((omega_pred - omegas) ** 2))
    loss = ce + mse + kl_weight * kl
    if not want_grads:
        return loss, None

    dlogits = (probs - onehot) / B
    domega = (2.0 / (B * d_w)) * (omega_pred - omegas)
    dec_grads, d_dec_in = meta.dec.backward(dec_acts, np.concatenate([dlogits, domega], axis=1))
    if meta.enc is None:
        return loss, dec_grads
    dz = d_dec_in[:, meta.obs_dim :]
    dmu = dz + kl_weight * mu / B
    dlogvar = kl_weight * 0.5 * (np.exp(logvar) - 1.0) / B
    if noise is not None:
        dlogvar = dlogvar + dz * noise * 0.5 * sigma
    enc_grads, _ = meta.enc.backward(enc_acts, np.concatenate([dmu, dlogvar], axis=1))
    return loss, enc_grads + dec_grads


def assemble_meta_dataset(
    task_demos: DemoSet,
    partition: SkillPartition,
    skills: list[SkillPolicy],
    lookahead: int,
):
    """Per-frame (state, skill label, subgoal vector) supervision.

    Skill labels come from the cluster assignment of the frame's segment;
    subgoal vectors are computed by the frozen per-skill encoders on the
    lookahead state clamped to the segment end.
    """
    order = task_demos.modality_order()
    by_traj = partition.by_trajectory()
    all_states, all_labels, all_omegas = [], [], []
    for traj in task_demos.trajectories:
        obs = traj.stacked_obs(order).astype(float)
        pairs = by_traj.get(traj.id)
        if not pairs:
            continue
        for seg, lab in pairs:
            ts = np.arange(seg.start, seg.end)
            goals = np.minimum(ts + lookahead, seg.end - 1)
            all_states.append(obs[ts])
            all_labels.append(np.full(ts.size, lab, dtype=int))
            all_omegas.append(encode_subgoal(skills[lab], obs[goals]))
    if not all_states:
        raise EmptyDataset(f"no labeled demos for tasks {task_demos.tasks}")
    return (
        np.concatenate(all_states),
        np.concatenate(all_labels),
        np.concatenate(all_omegas),
    )


def train_meta_arrays(
    states: np.ndarray,
    labels: np.ndarray,
    omegas: np.ndarray,
    num_skills: int,
    cfg: HbcConfig,
    task_id: str,
) -> MetaController:
    if states.shape[0] == 0:
        raise EmptyDataset(f"task {task_id} has no demos")
    meta = init_meta(task_id, num_skills, states.shape[1], cfg)
    meta.obs_norm = Standardizer.fit(np.asarray(states, dtype=float))
    meta.omega_norm = Standardizer.fit_scalar(np.asarray(omegas, dtype=float))
    states = meta.obs_norm.apply(np.asarray(states, dtype=float))
    omegas = meta.omega_norm.apply(np.asarray(omegas, dtype=float))
    labels = np.asarray(labels, dtype=int)
    params = meta.param_list()
    n = states.shape[0]
    batch = max(1, min(cfg.batch_size, n))

    def run_epoch(epoch: int, adam, lr: float) -> None:
        rng = np.random.default_rng([cfg.seed, 0x3E7A, 1000 + epoch])
        order = np.arange(n) if batch >= n else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            noise = None
            if meta.latent_dim > 0:
                noise = rng.standard_normal((idx.size, meta.latent_dim))
            _, grads = _meta_loss_and_grads(
                meta, states[idx], labels[idx], omegas[idx], cfg.kl_weight, noise
            )
            adam.step(params, grads, lr)

    def eval_loss() -> float:
        loss, _ = _meta_loss_and_grads(
            meta, states, labels, omegas, cfg.kl_weight, None, want_grads=False
        )
        return loss

    meta.loss_history = descend(
        params, run_epoch, eval_loss, cfg.epochs, cfg.learning_rate, DivergenceError
    )
    return meta


def train_meta(
    task_demos: DemoSet,
    partition: SkillPartition,
    skills: list[SkillPolicy],
    cfg: HbcConfig,
    task_id: str,
) -> MetaController:
    """Train the per-task cVAE on cluster-labeled frames with frozen subgoal
    encoders providing the subgoal supervision.
    """
    states, labels, omegas = assemble_meta_dataset(task_demos, partition, skills, cfg.lookahead)
    meta = train_meta_arrays(states, labels, omegas, partition.num_skills, cfg, task_id)
    return meta


def decode_heads(meta: MetaController, state: np.ndarray, z: np.ndarray):
    """Categorical head (a simplex over skills) and subgoal head."""
    state = meta.obs_norm.apply(np.asarray(state, dtype=float))
    dec_in = np.concatenate([state, z]) if meta.latent_dim > 0 else state
    out = meta.dec.forward(dec_in[None, :])[0]
    probs = _softmax(out[None, : meta.num_skills])[0]
    return probs, meta.omega_norm.invert(out[meta.num_skills :])


def meta_decide(meta: MetaController, state: np.ndarray, rng: np.random.Generator):
    """Sample z from the prior, decode, return (argmax skill, subgoal)."""
    z = rng.standard_normal(meta.latent_dim) if meta.latent_dim > 0 else np.empty(0)
    probs, omega = decode_heads(meta, np.asarray(state, dtype=float), z)
    return int(np.argmax(probs)), omega


def hier_act(
    meta: MetaController,
    skills: list[SkillPolicy],
    state: np.ndarray,
    step_counter: int,
    cached: tuple[int, np.ndarray] | None,
    rng: np.random.Generator,
):
    """One hierarchical step: refresh (k, omega) every `meta_period` steps,
    otherwise reuse the cached decision; returns (action, cache).
    """
    if cached is None or step_counter % meta.meta_period == 0:
        cached = meta_decide(meta, state, rng)
    k, omega = cached
    return skill_act(skills[k], state, omega), cached


def grad_check_meta(
    meta: MetaController,
    states: np.ndarray,
    labels: np.ndarray,
    omegas: np.ndarray,
    eps: float,
) -> float:
    """Finite-difference check of the full cVAE loss."""
    if states.shape[0] == 0:
        return 0.0
    states = meta.obs_norm.apply(np.asarray(states, dtype=float))
    omegas = meta.omega_norm.apply(np.asarray(omegas, dtype=float))
    labels = np.asarray(labels, dtype=int)
    noise = None
    if meta.latent_dim > 0:
        noise = np.random.default_rng(0xBEE).standard_normal((states.shape[0], meta.latent_dim))
    params = meta.param_list()
    _, grads = _meta_loss_and_grads(meta, states, labels, omegas, 1e-3, noise)

    def loss_fn() -> float:
        loss, _ = _meta_loss_and_grads(
            meta, states, labels, omegas, 1e-3, noise, want_grads=False
        )
        return loss

    return max_relative_gradient_error(loss_fn, params, grads, eps)


def save_skill(policy: SkillPolicy, directory: str | Path) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "skill": policy.skill,
        "obs_dim": policy.obs_dim,
        "action_dim": policy.action_dim,
        "subgoal_dim": policy.subgoal_dim,
        "policy_sizes": policy.net.sizes,
        "encoder_sizes": policy.encoder.sizes,
        "obs_norm": [policy.obs_norm.mean.tolist(), policy.obs_norm.std.tolist()],
        "act_norm": [policy.act_norm.mean.tolist(), policy.act_norm.std.tolist()],
    }
    (root / f"skill_{policy.skill}.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    flat = np.concatenate([p.ravel() for p in policy.param_list()])
    flat.astype(_F32).tofile(root / f"skill_{policy.skill}.params.f32")


def load_skill(directory: str | Path, skill: int) -> SkillPolicy:
    root = Path(directory)
    header = json.loads((root / f"skill_{skill}.json").read_text())
    policy = SkillPolicy(
        skill=header["skill"],
        obs_dim=header["obs_dim"],
        action_dim=header["action_dim"],
        subgoal_dim=header["subgoal_dim"],
        net=MLP(header["policy_sizes"]),
        encoder=MLP(header["encoder_sizes"]),
        obs_norm=Standardizer(*(np.array(v) for v in header["obs_norm"])),
        act_norm=Standardizer(*(np.array(v) for v in header["act_norm"])),
    )
    flat = np.fromfile(root / f"skill_{skill}.params.f32", dtype=_F32).astype(float)
    offset = 0
    for p in policy.param_list():
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return policy


def save_meta(meta: MetaController, directory: str | Path) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "task": meta.task_id,
        "num_skills": meta.num_skills,
        "obs_dim": meta.obs_dim,
        "subgoal_dim": meta.subgoal_dim,
        "latent_dim": meta.latent_dim,
        "meta_period": meta.meta_period,
        "encoder_sizes": None if meta.enc is None else meta.enc.sizes,
        "decoder_sizes": meta.dec.sizes,
        "obs_norm": [meta.obs_norm.mean.tolist(), meta.obs_norm.std.tolist()],
        "omega_norm": [meta.omega_norm.mean.tolist(), meta.omega_norm.std.tolist()],
    }
    (root / f"meta_{meta.task_id}.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    flat = np.concatenate([p.ravel() for p in meta.param_list()])
    flat.astype(_F32).tofile(root / f"meta_{meta.task_id}.params.f32")


def load_meta(directory: str | Path, task_id: str) -> MetaController:
    root = Path(directory)
    header = json.loads((root / f"meta_{task_id}.json").read_text())
    meta = MetaController(
        task_id=header["task"],
        num_skills=header["num_skills"],
        obs_dim=header["obs_dim"],
        subgoal_dim=header["subgoal_dim"],
        latent_dim=header["latent_dim"],
        meta_period=header["meta_period"],
        enc=None if header["encoder_sizes"] is None else MLP(header["encoder_sizes"]),
        dec=MLP(header["decoder_sizes"]),
        obs_norm=Standardizer(*(np.array(v) for v in header["obs_norm"])),
        omega_norm=Standardizer(*(np.array(v) for v in header["omega_norm"])),
    )
    flat = np.fromfile(root / f"meta_{task_id}.params.f32", dtype=_F32).astype(float)
    offset = 0
    for p in meta.param_list():
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return meta
