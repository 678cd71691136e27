"""Recover occluded identities by optimally matching candidate detections to
tracklets: evenly sampled tracklet affinities, the affinity matrix, and a
Kuhn-Munkres assignment solver."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ContractError


def tracklet_samples(length: int, k: int) -> list[int]:
    """Indices of k evenly spaced tracklet entries (all of them when the
    tracklet is shorter than k); k=3 over length 9 gives {0, 4, 8}."""
    if length < 1:
        raise ContractError("tracklet is empty")
    k = min(k, length)
    if k == 1:
        return [length - 1]
    return [round(i * (length - 1) / (k - 1)) for i in range(k)]


def tracklet_affinity(embeddings: Sequence[np.ndarray], w_d: np.ndarray, k: int) -> float:
    """Mean inner product between a detection embedding and k evenly spaced
    tracklet embeddings."""
    idx = tracklet_samples(len(embeddings), k)
    return float(np.mean([float(w_d @ embeddings[i]) for i in idx]))


def build_cost_matrix(candidate_embeddings: Sequence[np.ndarray],
                      tracklets: Sequence[Sequence[np.ndarray]], k: int) -> np.ndarray:
    """|D|×|T| affinity matrix; empty on either side yields an empty matrix."""
    matrix = np.zeros((len(candidate_embeddings), len(tracklets)))
    for d, w_d in enumerate(candidate_embeddings):
        for t, tr in enumerate(tracklets):
            matrix[d, t] = tracklet_affinity(tr, w_d, k)
    return matrix


def hungarian(cost: np.ndarray, maximize: bool = True) -> list[tuple[int, int]]:
    """Optimal assignment on a rectangular matrix (maximizing by default).

    Returns (row, col) pairs covering the smaller dimension; each row and
    column is used at most once. Classical O(n³) potentials formulation on the
    square-padded, negated matrix.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"hungarian: cost must be 2-D, got shape {cost.shape}")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ContractError("hungarian: cost matrix contains non-finite entries")
    n = max(rows, cols)
    a = np.zeros((n, n))
    a[:rows, :cols] = -cost if maximize else cost

    # potentials u, v and column matching p (1-based sentinel at index 0)
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = math.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(p[j] - 1, j - 1) for j in range(1, n + 1)
             if p[j] - 1 < rows and j - 1 < cols]
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class AssociationResult:
    recovered: tuple[tuple[int, int], ...]  # (candidate index, tracklet index)
    births: tuple[int, ...]                 # candidate indices left unmatched


def associate(candidate_embeddings: Sequence[np.ndarray],
              tracklets: Sequence[Sequence[np.ndarray]],
              k: int, min_affinity: float) -> AssociationResult:
    """Assign candidates to occluded tracklets; matches below ``min_affinity``
    are rejected and those candidates become births."""
    if not candidate_embeddings or not tracklets:
        return AssociationResult((), tuple(range(len(candidate_embeddings))))
    matrix = build_cost_matrix(candidate_embeddings, tracklets, k)
    recovered = []
    matched = set()
    for d, t in hungarian(matrix, maximize=True):
        if matrix[d, t] >= min_affinity:
            recovered.append((d, t))
            matched.add(d)
    births = tuple(d for d in range(len(candidate_embeddings)) if d not in matched)
    return AssociationResult(tuple(recovered), births)
