"""Bottom-up merge hierarchies over latent sequences and segment extraction.

Leaves are fixed-width windows of the latent sequence. The hierarchy is built
greedily: at every step the two adjacent segments whose mean-latent features
are closest in l2 are merged, until a single segment spans the trajectory.
Temporal segments are then read off the tree by a breadth-first frontier
search bounded by a minimum child length and a frontier-size target.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput


@dataclass
class SegConfig:
    leaf_window: int = 10  # W
    min_segment_len: int = 30  # L_min
    min_frontier: int = 3  # N_min


@dataclass(frozen=True)
class TemporalSegment:
    traj_id: str
    start: int
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class TreeNode:
    start: int
    end: int
    children: tuple[int, int] | None
    feature: np.ndarray

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class MergeTree:
    traj_id: str
    nodes: list[TreeNode]
    root: int

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.children is None]


def init_leaves(latents: np.ndarray, window: int, traj_id: str = "") -> list[TemporalSegment]:
    """Windows of `window` steps tiling [0, T); a trailing remainder shorter
    than the window is folded into the final leaf.
    """
    T = latents.shape[0]
    if T < 1:
        raise EmptyInput("empty latent sequence")
    n = T // window
    if n == 0:
        return [TemporalSegment(traj_id, 0, T)]
    bounds = [i * window for i in range(n)] + [T]
    return [TemporalSegment(traj_id, bounds[i], bounds[i + 1]) for i in range(n)]


def build_hierarchy(latents: np.ndarray, cfg: SegConfig, traj_id: str = "") -> MergeTree:
    """Greedy adjacent merging by l2 distance between segment features.

    Features are means of the latent vectors over the span; a parent feature
    is the length-weighted mean of its children, which equals the span mean.
    Ties on distance break toward the leftmost pair.
    """
    latents = np.asarray(latents, dtype=float)
    leaves = init_leaves(latents, cfg.leaf_window, traj_id)
    nodes = [
        TreeNode(s.start, s.end, None, latents[s.start : s.end].mean(axis=0)) for s in leaves
    ]
    active = list(range(len(nodes)))
    while len(active) > 1:
        feats = np.stack([nodes[i].feature for i in active])
        dists = np.linalg.norm(np.diff(feats, axis=0), axis=1)
        j = int(np.argmin(dists))  # leftmost tie-break
        left, right = nodes[active[j]], nodes[active[j + 1]]
        w_l, w_r = left.length, right.length
        feature = (w_l * left.feature + w_r * right.feature) / (w_l + w_r)
        nodes.append(TreeNode(left.start, right.end, (active[j], active[j + 1]), feature))
        active[j : j + 2] = [len(nodes) - 1]
    return MergeTree(traj_id, nodes, active[0])


def extract_segments(tree: MergeTree, cfg: SegConfig) -> list[TemporalSegment]:
    """Breadth-first frontier refinement of the merge tree.

    A frontier node is expanded only if both children are at least
    `min_segment_len` long; expansion stops once the frontier holds at least
    `min_frontier` segments or nothing is expandable. The returned segments
    are sorted by start and tile the trajectory.
    """
    queue: deque[int] = deque([tree.root])
    done: list[int] = []
    while queue:
        if len(queue) + len(done) >= cfg.min_frontier:
            done.extend(queue)
            break
        i = queue.popleft()
        node = tree.nodes[i]
        kids = node.children
        if kids is not None and all(
            tree.nodes[k].length >= cfg.min_segment_len for k in kids
        ):
            queue.extend(kids)
        else:
            done.append(i)
    segs = [TemporalSegment(tree.traj_id, tree.nodes[i].start, tree.nodes[i].end) for i in done]
    return sorted(segs, key=lambda s: s.start)
