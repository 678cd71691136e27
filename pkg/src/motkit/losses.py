"""Training objectives: logistic tracking loss, triplet and N-pair ranking
losses, the cross-entropy identification loss, and their weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (ContractError, ShapeError, Tensor, cross_entropy, dot,
                       log1p_sum_exp, relu, softplus, stack, sub)


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1       # weight of the N-pair ranking loss
    lambda2: float = 0.1       # weight of the identification loss
    margin_m: float = 0.5      # triplet margin (squared-distance units)
    label_radius: float = 16.0  # positive-label radius around the map centre, px

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("loss weights must be non-negative")
        if self.margin_m <= 0 or self.label_radius <= 0:
            raise ContractError("margin and label radius must be positive")


def make_label_map(map_side: int, stride: float, radius: float) -> np.ndarray:
    """±1 labels for a centred target: +1 where a cell's pixel distance from
    the map centre is within ``radius``, −1 elsewhere."""
    if radius <= 0:
        raise ContractError(f"label radius must be positive, got {radius}")
    c = (map_side - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(map_side), np.arange(map_side), indexing="ij")
    dist = stride * np.hypot(ii - c, jj - c)
    return np.where(dist <= radius, 1.0, -1.0)


def sot_loss(v, y: np.ndarray) -> Tensor:
    """Mean logistic loss over the response map: (1/|P|) Σ log(1 + e^(−v·y))."""
    v = getattr(v, "v", v)  # accept a ResponseMap or a raw tensor
    if v.data.shape != y.shape:
        raise ShapeError(f"sot_loss: response {v.data.shape} vs labels {y.shape}")
    return softplus(v * Tensor(-y)).mean()


def triplet_loss(pairs: Sequence[tuple[Tensor, Tensor]], margin: float = 0.5) -> Tensor:
    """Batch-all hinge ranking loss over anchor/positive embedding pairs.

    Negatives for anchor i are the positives of every other pair:
    (1/N) Σ_{i, j≠i} max(0, ||z_i − x_i||² − ||z_i − x_j||² + m).
    """
    n = len(pairs)
    if n < 2:
        raise ContractError(f"triplet_loss needs at least 2 pairs, got {n}")

    def sqdist(a: Tensor, b: Tensor) -> Tensor:
        d = sub(a, b)
        return dot(d, d)

    total: Tensor | None = None
    for i, (z_i, x_i) in enumerate(pairs):
        d_pos = sqdist(z_i, x_i)
        for j, (_, x_j) in enumerate(pairs):
            if j == i:
                continue
            term = relu(d_pos - sqdist(z_i, x_j) + margin)
            total = term if total is None else total + term
    return total * (1.0 / n)


def npair_loss(pairs: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    """(1/N) Σ_i log(1 + Σ_{j≠i} exp(z_i·x_j − z_i·x_i)), log-sum-exp stabilized."""
    n = len(pairs)
    if n < 2:
        raise ContractError(f"npair_loss needs at least 2 pairs, got {n}")
    total: Tensor | None = None
    for i, (z_i, x_i) in enumerate(pairs):
        s_pos = dot(z_i, x_i)
        diffs = [dot(z_i, x_j) - s_pos for j, (_, x_j) in enumerate(pairs) if j != i]
        term = log1p_sum_exp(stack(diffs))
        total = term if total is None else total + term
    return total * (1.0 / n)


def iden_loss(logits_z: Sequence[Tensor], logits_x: Sequence[Tensor],
              labels: Sequence[int]) -> Tensor:
    """Cross-entropy on both branches: −((1/N) Σ log p̂_z + (1/N) Σ log p̂_x)."""
    n = len(labels)
    if len(logits_z) != n or len(logits_x) != n or n == 0:
        raise ContractError("iden_loss: logits and labels must have equal non-zero length")
    total: Tensor | None = None
    for lz, lx, lab in zip(logits_z, logits_x, labels):
        term = cross_entropy(lz, lab) + cross_entropy(lx, lab)
        total = term if total is None else total + term
    return total * (1.0 / n)


def total_loss(l_sot: Tensor, l_npair: Tensor, l_iden: Tensor, cfg: LossConfig) -> Tensor:
    """L = L_sot + λ1·L_npair + λ2·L_iden."""
    for name, t in (("sot", l_sot), ("npair", l_npair), ("iden", l_iden)):
        if not math.isfinite(t.item()):
            raise ContractError(f"total_loss: non-finite {name} component")
    return l_sot + cfg.lambda1 * l_npair + cfg.lambda2 * l_iden
