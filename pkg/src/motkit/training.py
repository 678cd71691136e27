"""Batch construction from identity-annotated sequences, momentum SGD, and the
end-to-end training loop over the three-branch network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses, network
from .autodiff import ContractError, Tensor, backward, save_tensors, zero_grads
from .geometry import BBox
from .mot_io import frame_path, load_sequence, read_ppm
from .patches import exemplar_patch, instance_patch


@dataclass
class TrainConfig:
    batch_size: int = 8
    momentum: float = 0.9
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    epochs: int = 30
    steps_per_epoch: int = 200
    frame_gap_max: int = 50     # positive pairs come from frames this far apart
    jitter_px: float = 8.0      # instance crop centre jitter
    search_scale: float = 4.0   # must match the tracker's search region scale


@dataclass
class TrainSample:
    exemplar: np.ndarray
    instance: np.ndarray
    identity: int
    frame_gap: int


class TrackingDataset:
    """Ground-truth tracks of one or more sequence directories.

    Each (sequence, gt id) pair becomes one global identity. Frames are read
    lazily and cached as float32.
    """

    def __init__(self, seq_dirs: Sequence):
        self.tracks: list[list[tuple[Path, int, BBox]]] = []  # per identity: (dir, frame, box)
        for seq_dir in seq_dirs:
            seq_dir = Path(seq_dir)
            _, gt, _ = load_sequence(seq_dir)
            per_id: dict[int, list[tuple[Path, int, BBox]]] = {}
            for row in gt:
                per_id.setdefault(row.id, []).append((seq_dir, row.frame, row.bbox))
            for gid in sorted(per_id):
                self.tracks.append(sorted(per_id[gid], key=lambda e: e[1]))
        if not self.tracks:
            raise ContractError("dataset has no annotated tracks")
        self._cache: dict[tuple[Path, int], np.ndarray] = {}

    @classmethod
    def from_root(cls, root) -> "TrackingDataset":
        root = Path(root)
        if (root / "seqinfo.ini").exists():
            return cls([root])
        dirs = sorted(d for d in root.iterdir() if (d / "seqinfo.ini").exists())
        if not dirs:
            raise ContractError(f"{root}: no sequence directories found")
        return cls(dirs)

    @property
    def num_identities(self) -> int:
        return len(self.tracks)

    def frame(self, seq_dir: Path, frame: int) -> np.ndarray:
        key = (seq_dir, frame)
        if key not in self._cache:
            self._cache[key] = read_ppm(frame_path(seq_dir, frame)).astype(np.float32)
        return self._cache[key].astype(np.float64)


def sample_batch(dataset: TrackingDataset, n: int, net_cfg: network.NetworkConfig,
                 cfg: TrainConfig, rng: np.random.Generator) -> list[TrainSample]:
    """Draw n exemplar/positive-instance pairs with pairwise-distinct
    identities (so every cross pair is a valid negative)."""
    if dataset.num_identities < n:
        raise ContractError(f"need {n} identities, dataset has {dataset.num_identities}")
    chosen = rng.choice(dataset.num_identities, size=n, replace=False)
    samples = []
    for ident in chosen:
        track = dataset.tracks[int(ident)]
        i = int(rng.integers(len(track)))
        near = [j for j in range(len(track))
                if j != i and abs(track[j][1] - track[i][1]) <= cfg.frame_gap_max]
        j = int(rng.choice(near)) if near else i
        seq_a, frame_a, box_a = track[i]
        seq_b, frame_b, box_b = track[j]
        img_a = dataset.frame(seq_a, frame_a)
        img_b = dataset.frame(seq_b, frame_b)
        z = exemplar_patch(img_a, box_a.center, box_a.side, net_cfg, cfg.search_scale)
        cx, cy = box_b.center
        if cfg.jitter_px > 0:
            cx += rng.uniform(-cfg.jitter_px, cfg.jitter_px)
            cy += rng.uniform(-cfg.jitter_px, cfg.jitter_px)
        x = instance_patch(img_b, (cx, cy), box_b.side, net_cfg, cfg.search_scale,
                           net_cfg.instance_size_train)
        samples.append(TrainSample(z, x, int(ident), abs(frame_b - frame_a)))
    return samples


@dataclass
class OptimizerState:
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.velocity:
                self.velocity[name] = np.zeros_like(p.data)


def sgd_momentum_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """v <- mu*v - lr*g; p <- p + v. A missing gradient counts as zero."""
    state.ensure(params)
    for name, p in params.items():
        g = p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient for parameter '{name}'")
        v = state.velocity[name]
        v *= state.momentum
        if g is not None:
            v -= lr * g
        p.data += v


def batch_loss(params: dict[str, Tensor], net_cfg: network.NetworkConfig,
               loss_cfg: losses.LossConfig, samples: Sequence[TrainSample]
               ) -> tuple[Tensor, dict[str, float]]:
    """Forward the whole batch through all three branches and combine losses.

    Branches whose loss weight is zero are skipped entirely, so their head
    parameters receive no gradient at all.
    """
    stride, _ = network.feature_geometry(net_cfg)
    resp_side = (network.feature_side(net_cfg, net_cfg.instance_size_train)
                 - network.feature_side(net_cfg, net_cfg.exemplar_size) + 1)
    label = losses.make_label_map(resp_side, stride, loss_cfg.label_radius)
    roi_box = network.centered_roi_box(net_cfg, net_cfg.instance_size_train)

    need_embeddings = loss_cfg.lambda1 > 0 or loss_cfg.lambda2 > 0
    l_sot_terms = []
    pairs: list[tuple[Tensor, Tensor]] = []
    logits_z: list[Tensor] = []
    logits_x: list[Tensor] = []
    labels: list[int] = []
    for s in samples:
        fz = network.backbone_forward(Tensor(s.exemplar), params, net_cfg)
        fx = network.backbone_forward(Tensor(s.instance), params, net_cfg)
        resp = network.correlation_response(network.tsa_attention(fx, "sot", params),
                                            network.tsa_attention(fz, "sot", params),
                                            params)
        l_sot_terms.append(losses.sot_loss(resp, label))
        if need_embeddings:
            w_z = network.embed(network.tsa_attention(fz, "aff", params))
            w_x = network.instance_embedding(network.tsa_attention(fx, "aff", params),
                                             roi_box, net_cfg)
            pairs.append((w_z, w_x))
            if loss_cfg.lambda2 > 0:
                logits_z.append(network.identity_logits(w_z, params))
                logits_x.append(network.identity_logits(w_x, params))
                labels.append(s.identity)

    l_sot = l_sot_terms[0]
    for term in l_sot_terms[1:]:
        l_sot = l_sot + term
    l_sot = l_sot * (1.0 / len(l_sot_terms))
    l_npair = losses.npair_loss(pairs) if loss_cfg.lambda1 > 0 else Tensor(0.0)
    l_iden = losses.iden_loss(logits_z, logits_x, labels) if loss_cfg.lambda2 > 0 else Tensor(0.0)
    total = losses.total_loss(l_sot, l_npair, l_iden, loss_cfg)
    parts = {"L_sot": l_sot.item(), "L_npair": l_npair.item(),
             "L_iden": l_iden.item(), "L_total": total.item()}
    return total, parts


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Geometric decay from lr_start to lr_end across the whole run."""
    if total_steps <= 1 or cfg.lr_start == cfg.lr_end:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (step / (total_steps - 1))


def train(dataset: TrackingDataset, net_cfg: network.NetworkConfig,
          loss_cfg: losses.LossConfig, cfg: TrainConfig, seed: int,
          checkpoint_path=None) -> tuple[dict[str, Tensor], list[tuple]]:
    """Full training loop; returns the parameters and the per-step loss log
    as (epoch, step, L_sot, L_npair, L_iden, L_total) tuples.

    Deterministic given (seed, configs, dataset); the checkpoint is rewritten
    after every epoch.
    """
    rng = np.random.default_rng(seed)
    params = network.init_params(net_cfg, rng)
    state = OptimizerState(momentum=cfg.momentum)
    log: list[tuple] = []
    total_steps = cfg.epochs * cfg.steps_per_epoch
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        for step in range(1, cfg.steps_per_epoch + 1):
            samples = sample_batch(dataset, cfg.batch_size, net_cfg, cfg, rng)
            zero_grads(params)
            loss, parts = batch_loss(params, net_cfg, loss_cfg, samples)
            if not math.isfinite(parts["L_total"]):
                raise ContractError(f"training diverged at epoch {epoch} step {step}: "
                                    f"{parts}")
            backward(loss)
            sgd_momentum_step(params, state, learning_rate(cfg, t, total_steps))
            log.append((epoch, step, parts["L_sot"], parts["L_npair"],
                        parts["L_iden"], parts["L_total"]))
            t += 1
        if checkpoint_path is not None:
            save_tensors(checkpoint_path, params)
    if checkpoint_path is not None:
        save_tensors(checkpoint_path, params)
    return params, log


def write_loss_log(log: Sequence[tuple], path) -> None:
    lines = ["epoch,step,L_sot,L_npair,L_iden,L_total"]
    for epoch, step, l_sot, l_npair, l_iden, l_total in log:
        lines.append(f"{epoch},{step},{l_sot:.6f},{l_npair:.6f},{l_iden:.6f},{l_total:.6f}")
    Path(path).write_text("".join(line + "\n" for line in lines))
