"""Segmentation and policy-quality metrics: boundary F1, normalized mutual
information, and success rates with normal-approximation intervals.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, ShapeError


@dataclass
class MetricReport:
    name: str
    value: float
    support: int
    per_seed: list[float] = field(default_factory=list)
    ci95: float = 0.0


def match_boundaries(predicted: list[int], reference: list[int], tol: int) -> int:
    """Greedy one-to-one matching count: each prediction (in sorted order)
    takes the nearest unmatched reference boundary within +-tol.
    """
    ref = sorted(reference)
    used = [False] * len(ref)
    matched = 0
    for p in sorted(predicted):
        best, best_d = -1, tol + 1
        for i, g in enumerate(ref):
            if used[i]:
                continue
            d = abs(p - g)
            if d < best_d:
                best, best_d = i, d
        if best >= 0 and best_d <= tol:
            used[best] = True
            matched += 1
    return matched


def boundary_f1(
    predicted: list[int], reference: list[int], tol: int
) -> tuple[float, float, float]:
    """Precision/recall/F1 of greedily matched boundaries within +-tol."""
    matched = match_boundaries(predicted, reference, tol)
    precision = matched / len(predicted) if predicted else (1.0 if not reference else 0.0)
    recall = matched / len(reference) if reference else (1.0 if not predicted else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def _entropy(counts: np.ndarray) -> float:
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Normalized mutual information with arithmetic-mean normalization.

    Identical partitions (up to relabeling) score 1.0; if exactly one side
    is a single cluster the score is 0.0 by convention.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"label lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("empty labelings")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    if na == 1 and nb == 1:
        return 1.0
    if na == 1 or nb == 1:
        return 0.0
    joint = np.zeros((na, nb))
    np.add.at(joint, (ai, bi), 1.0)
    n = joint.sum()
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    pj = joint / n
    outer = (joint.sum(axis=1) / n)[:, None] * (joint.sum(axis=0) / n)[None, :]
    mask = pj > 0
    mi = float((pj[mask] * np.log(pj[mask] / outer[mask])).sum())
    return mi / (0.5 * (ha + hb))


def success_rate(results: list, per_seed: list[float] | None = None) -> MetricReport:
    """Mean success with a 95% normal-approximation interval.

    `results` entries are RolloutResult-like (with .success) or plain bools.
    """
    if not results:
        raise EmptyInput("no rollout results")
    flags = [bool(getattr(r, "success", r)) for r in results]
    n = len(flags)
    p = sum(flags) / n
    half = 1.96 * math.sqrt(p * (1.0 - p) / n)
    return MetricReport("success_rate", p, n, list(per_seed or []), half)


def boundaries_from_labels(labels: np.ndarray) -> list[int]:
    """Interior change points of a frame labeling (positions where the label
    differs from the previous frame).
    """
    labels = np.asarray(labels).ravel()
    return [int(i) for i in np.flatnonzero(np.diff(labels)) + 1]


def segment_boundaries(starts: list[int]) -> list[int]:
    """Interior boundaries of a sorted segment tiling (drop the leading 0)."""
    return [s for s in sorted(starts) if s != 0]
