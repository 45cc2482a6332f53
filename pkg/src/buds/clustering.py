"""Grouping temporal segments into skills.

Segments from all demonstrations are described by the latents of a few
keyframes (first, middle, last states), clustered with normalized spectral
clustering under an RBF affinity, and short clusters are dissolved into their
most frequent temporal neighbor. The surviving partition materializes one
goal-relabeled dataset per skill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DemoSet
from .errors import DegenerateAffinity, TooFewSegments
from .hierarchy import TemporalSegment


@dataclass
class ClusterConfig:
    max_clusters: int = 6  # 8 is the multi-task default
    mid_keyframes: int = 1
    rbf_gamma: float | None = None  # None -> median heuristic
    min_avg_skill_len: int = 20
    kmeans_restarts: int = 10
    seed: int = 0


@dataclass(frozen=True)
class SegmentDescriptor:
    segment: TemporalSegment
    vector: np.ndarray  # (2 + n_mid) * d_h


@dataclass
class SkillPartition:
    """Aligned (segments, labels); labels are dense skill ids in [0, K)."""

    num_skills: int
    segments: list[TemporalSegment]
    labels: np.ndarray

    def segments_of(self, skill: int) -> list[TemporalSegment]:
        return [s for s, l in zip(self.segments, self.labels) if l == skill]

    def by_trajectory(self) -> dict[str, list[tuple[TemporalSegment, int]]]:
        """Per-trajectory (segment, skill) pairs sorted by start."""
        out: dict[str, list[tuple[TemporalSegment, int]]] = {}
        for seg, lab in zip(self.segments, self.labels):
            out.setdefault(seg.traj_id, []).append((seg, int(lab)))
        for pairs in out.values():
            pairs.sort(key=lambda p: p[0].start)
        return out

    def frame_labels(self, traj_id: str, length: int) -> np.ndarray:
        """Paint every frame of a trajectory with its segment's skill id."""
        labels = np.full(length, -1, dtype=int)
        for seg, lab in self.by_trajectory().get(traj_id, []):
            labels[seg.start : seg.end] = lab
        return labels


def keyframe_indices(start: int, end: int, n_mid: int) -> list[int]:
    """First, n_mid evenly spaced middle, and last indices (round half up)."""
    span = end - start - 1
    mids = [start + math.floor(j / (n_mid + 1) * span + 0.5) for j in range(1, n_mid + 1)]
    return [start] + mids + [end - 1]


def segment_descriptor(
    seg: TemporalSegment, latents: np.ndarray, n_mid: int = 1
) -> SegmentDescriptor:
    idx = keyframe_indices(seg.start, seg.end, n_mid)
    return SegmentDescriptor(seg, np.concatenate([latents[i] for i in idx]))


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c] = x[rng.integers(n)]
        else:
            centers[c] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))

    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        for c in range(k):
            mask = new_labels == c
            if not mask.any():
                far = int(dist[np.arange(n), new_labels].argmax())
                centers[c] = x[far]
                new_labels[far] = c
                mask = new_labels == c
            centers[c] = x[mask].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dist[np.arange(n), labels].sum())
    return labels, inertia


def seeded_kmeans(x: np.ndarray, k: int, restarts: int, seed: int) -> np.ndarray:
    """Distance-weighted seeding, Lloyd iterations, best of `restarts` by
    inertia. Fully deterministic for a fixed seed.
    """
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        labels, inertia = _kmeans_once(x, k, np.random.default_rng([seed, r]))
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return best_labels


def rbf_affinity(x: np.ndarray, gamma: float | None) -> np.ndarray:
    """exp(-gamma * squared distance); gamma defaults to the median heuristic
    1 / (2 * median^2) over pairwise distances.
    """
    sq = np.sum(x**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    if gamma is None:
        tri = d2[np.triu_indices(len(x), k=1)]
        med2 = float(np.median(tri)) if tri.size else 0.0
        gamma = 1.0 / (2.0 * med2) if med2 > 1e-12 else 1.0
    a = np.exp(-gamma * d2)
    np.fill_diagonal(a, 1.0)
    return a


def spectral_cluster(descriptors: np.ndarray, k_max: int, cfg: ClusterConfig) -> np.ndarray:
    """Normalized spectral clustering of descriptor rows into k_max groups.

    Builds the RBF affinity, forms L = I - D^{-1/2} A D^{-1/2}, embeds points
    as row-normalized eigenvectors of the k_max smallest eigenvalues, and
    k-means clusters the embedding.
    """
    x = np.asarray(descriptors, dtype=float)
    n = x.shape[0]
    if n < k_max:
        raise TooFewSegments(f"{n} segments but k_max={k_max}")
    if k_max == 1:
        return np.zeros(n, dtype=int)
    a = rbf_affinity(x, cfg.rbf_gamma)
    off_degree = a.sum(axis=1) - 1.0
    if np.any(off_degree <= 0.0):
        raise DegenerateAffinity("a row of the affinity matrix underflowed to zero")
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    lap = np.eye(n) - d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = np.linalg.eigh(lap)
    emb = vecs[:, :k_max]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.maximum(norms, 1e-12)
    return seeded_kmeans(emb, k_max, cfg.kmeans_restarts, cfg.seed)


def normalized_laplacian(a: np.ndarray) -> np.ndarray:
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    lap = np.eye(a.shape[0]) - d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def _adjacency_counts(partition: SkillPartition, skill: int) -> dict[int, int]:
    """How often each other skill temporally precedes/follows this skill's
    segments inside their trajectories.
    """
    counts: dict[int, int] = {}
    for pairs in partition.by_trajectory().values():
        for i, (seg, lab) in enumerate(pairs):
            if lab != skill:
                continue
            for j in (i - 1, i + 1):
                if 0 <= j < len(pairs):
                    other = pairs[j][1]
                    if other != skill:
                        counts[other] = counts.get(other, 0) + 1
    return counts


def merge_short_clusters(partition: SkillPartition, min_avg_len: int) -> SkillPartition:
    """Dissolve clusters whose average segment length is below the threshold
    into their most adjacent cluster (ties: larger cluster, then lower id).
    Surviving skill ids are re-indexed densely.
    """
    labels = partition.labels.copy()
    segments = partition.segments
    lengths = np.array([s.length for s in segments])
    unmergeable: set[int] = set()

    while True:
        ids = np.unique(labels)
        if ids.size <= 1:
            break
        avg = {int(c): float(lengths[labels == c].mean()) for c in ids}
        below = sorted(
            (c for c in avg if avg[c] < min_avg_len and c not in unmergeable),
            key=lambda c: (avg[c], c),
        )
        if not below:
            break
        victim = below[0]
        counts = _adjacency_counts(
            SkillPartition(ids.size, segments, labels), victim
        )
        if not counts:
            unmergeable.add(victim)
            continue
        sizes = {int(c): int((labels == c).sum()) for c in ids}
        target = max(counts, key=lambda c: (counts[c], sizes[c], -c))
        labels[labels == victim] = target

    remap = {int(c): i for i, c in enumerate(np.unique(labels))}
    dense = np.array([remap[int(l)] for l in labels], dtype=int)
    return SkillPartition(len(remap), segments, dense)


@dataclass
class SkillDataset:
    """Goal-relabeled tuples (s_t, a_t, s_{g_t}) for one skill."""

    skill: int
    states: np.ndarray  # (n, obs_dim)
    actions: np.ndarray  # (n, action_dim)
    goals: np.ndarray  # (n, obs_dim)
    traj_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.states.shape[0]


def goal_index(t: int, lookahead: int, seg_end: int) -> int:
    """Subgoal index: `lookahead` steps ahead, clamped to the segment's last
    state (a state at the segment end is its own subgoal).
    """
    return min(t + lookahead, seg_end - 1)


def build_skill_datasets(
    demos: DemoSet, partition: SkillPartition, lookahead: int
) -> list[SkillDataset]:
    """One dataset per skill; sizes sum to the total demonstrated steps."""
    order = demos.modality_order()
    trajs = {t.id: t for t in demos.trajectories}
    buckets: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray, str]]] = {
        k: [] for k in range(partition.num_skills)
    }
    for seg, lab in zip(partition.segments, partition.labels):
        traj = trajs[seg.traj_id]
        obs = traj.stacked_obs(order).astype(float)
        acts = traj.actions.astype(float)
        ts = np.arange(seg.start, seg.end)
        goals = np.minimum(ts + lookahead, seg.end - 1)
        buckets[int(lab)].append((obs[ts], acts[ts], obs[goals], traj.id))

    datasets = []
    for k in range(partition.num_skills):
        parts = buckets[k]
        states = np.concatenate([p[0] for p in parts])
        actions = np.concatenate([p[1] for p in parts])
        goals = np.concatenate([p[2] for p in parts])
        ids = [p[3] for p in parts for _ in range(p[0].shape[0])]
        datasets.append(SkillDataset(k, states, actions, goals, ids))
    return datasets
