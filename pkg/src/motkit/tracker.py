"""Online per-frame tracking pipeline.

Per frame, in order:
  1) every tracked target is localized by cross-correlation in a search
     region around its previous position (SOT-gated features), its appearance
     affinity against the birth exemplar is measured (AFF-gated features +
     ROI sampling), and it is declared occluded when the affinity falls below
     alpha or its recent nearest-detection IOU average falls below beta
  2) tracked boxes are refined by greedily averaging each with its best
     overlapping unclaimed detection (IOU >= gamma)
  3) detections overlapping no tracked box above gamma become candidates
  4) candidates are assigned to occluded tracklets by Hungarian matching on
     sampled tracklet affinities; accepted matches resume the old identity,
     leftovers become tentative births
  5) tentative births are confirmed after being re-detected in 2 of the
     3 frames following creation; occluded targets are terminated after
     ``terminate_after`` frames or when they leave the image

Occluded targets emit nothing and their SOT is paused; the exemplar template
is fixed at the birth frame and never updated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import network
from .association import associate
from .autodiff import ContractError, Tensor
from .geometry import BBox, fully_outside, iou, mean_box
from .mot_io import DetectionRow
from .patches import crop_and_resize, exemplar_patch, search_region_side


@dataclass
class TrackerConfig:
    alpha: float = 0.6          # occlusion affinity threshold
    beta: float = 0.5           # occlusion historic-IOU threshold
    gamma: float = 0.5          # candidate / refinement IOU threshold
    terminate_after: int = 30   # occluded frames before termination
    iou_window: int = 5         # historic IOU ring-buffer length
    search_scale: float = 4.0   # search region side in target sizes
    k_samples: int = 5          # tracklet embeddings sampled for association

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (-1.0 <= v) and v != float("inf"):
                raise ContractError(f"threshold {name}={v} out of range")
        if self.terminate_after < 1 or self.iou_window < 1 or self.k_samples < 1:
            raise ContractError("window and termination lengths must be >= 1")


class Status(Enum):
    TRACKED = "tracked"
    OCCLUDED = "occluded"


@dataclass
class TrackletEntry:
    frame: int
    bbox: BBox
    embedding: np.ndarray


@dataclass
class TargetState:
    identity: int
    status: Status
    bbox: BBox
    exemplar_embedding: np.ndarray       # unit vector, fixed at birth
    exemplar_sot_feature: np.ndarray     # correlation template, fixed at birth
    tracklet: list[TrackletEntry]
    iou_history: deque
    occluded_frames: int = 0
    dead: bool = False


@dataclass
class _Tentative:
    bbox: BBox
    created: int
    hits: int = 0


def detect_occlusion(c: float, iou_history: Sequence[float], cfg: TrackerConfig) -> Status:
    """Occluded iff affinity < alpha or mean historic IOU < beta; an empty
    history skips the IOU test."""
    if c < cfg.alpha:
        return Status.OCCLUDED
    if len(iou_history) and float(np.mean(iou_history)) < cfg.beta:
        return Status.OCCLUDED
    return Status.TRACKED


def refine_bbox(track_bbox: BBox, detections: Sequence[BBox], gamma: float) -> BBox:
    """Average the track box with its best-overlapping detection when that
    overlap reaches gamma; otherwise return the box unchanged."""
    best, best_iou = None, 0.0
    for d in detections:
        v = iou(track_bbox, d)
        if v > best_iou:
            best, best_iou = d, v
    if best is not None and best_iou >= gamma:
        return mean_box(track_bbox, best)
    return track_bbox


def greedy_refine(boxes: Sequence[BBox], detections: Sequence[BBox],
                  gamma: float) -> list[BBox]:
    """Refine several track boxes at once; each detection is consumed at most
    once, in descending IOU order (ties to the lowest indices)."""
    pairs = sorted(
        ((iou(b, d), ti, di) for ti, b in enumerate(boxes)
         for di, d in enumerate(detections) if iou(b, d) >= gamma),
        key=lambda p: (-p[0], p[1], p[2]))
    out = list(boxes)
    taken_t: set[int] = set()
    taken_d: set[int] = set()
    for _, ti, di in pairs:
        if ti in taken_t or di in taken_d:
            continue
        out[ti] = mean_box(boxes[ti], detections[di])
        taken_t.add(ti)
        taken_d.add(di)
    return out


def candidate_detections(detections: Sequence[BBox], tracked_boxes: Sequence[BBox],
                         gamma: float) -> list[int]:
    """Indices of detections whose IOU with every tracked box is strictly
    below gamma."""
    return [i for i, d in enumerate(detections)
            if all(iou(d, t) < gamma for t in tracked_boxes)]


class Tracker:
    """Stateful online tracker over one sequence; frames must arrive in
    strictly increasing order."""

    def __init__(self, params: dict[str, Tensor], net_cfg: network.NetworkConfig,
                 cfg: TrackerConfig, image_size: tuple[int, int]):
        # inference never needs gradients, so hold detached parameter copies
        self.params = {k: Tensor(np.array(v.data)) for k, v in params.items()}
        self.net_cfg = net_cfg
        self.cfg = cfg
        self.width, self.height = image_size
        self.targets: list[TargetState] = []
        self.tentatives: list[_Tentative] = []
        self.next_id = 1
        self.last_frame = 0
        self._stride, self._offset = network.feature_geometry(net_cfg)
        self._fz_side = network.feature_side(net_cfg, net_cfg.exemplar_size)

    # -- network glue ------------------------------------------------------

    def _unit_fallback(self) -> np.ndarray:
        # featureless (all-zero) patches cannot be normalized; use a fixed
        # deterministic unit vector so affinities stay defined
        v = np.zeros(self.net_cfg.embed_dim)
        v[0] = 1.0
        return v

    def _embed_exemplar(self, image: np.ndarray, box: BBox) -> tuple[np.ndarray, np.ndarray]:
        """(affinity embedding, SOT correlation template) of an exemplar crop."""
        patch = exemplar_patch(image, box.center, box.side, self.net_cfg, self.cfg.search_scale)
        f = network.backbone_forward(Tensor(patch), self.params, self.net_cfg)
        try:
            w = network.embed(network.tsa_attention(f, "aff", self.params)).data
        except ContractError:
            w = self._unit_fallback()
        f_sot = network.tsa_attention(f, "sot", self.params).data
        return w, f_sot

    def _locate(self, target: TargetState, image: np.ndarray):
        """SOT step: correlation argmax in the search region around the
        previous position; the box size is carried over."""
        cx, cy = target.bbox.center
        side = search_region_side(target.bbox, self.net_cfg, self.cfg.search_scale)
        size = self.net_cfg.instance_size_track
        patch = crop_and_resize(image, (cx, cy), side, size)
        f = network.backbone_forward(Tensor(patch), self.params, self.net_cfg)
        f_sot = network.tsa_attention(f, "sot", self.params)
        resp = network.correlation_response(
            f_sot, Tensor(target.exemplar_sot_feature), self.params,
            stride=int(self._stride))
        v = resp.v.data
        peak = v.max()
        ties = np.argwhere(v == peak)
        center = (v.shape[0] - 1) / 2.0
        # break exact ties toward the map centre, then row-major
        ties = sorted(ties.tolist(),
                      key=lambda rc: ((rc[0] - center) ** 2 + (rc[1] - center) ** 2,
                                      rc[0], rc[1]))
        row, col = ties[0]
        scale = side / size
        dx = (col - center) * self._stride * scale
        dy = (row - center) * self._stride * scale
        bbox = BBox(cx + dx - target.bbox.w / 2.0, cy + dy - target.bbox.h / 2.0,
                    target.bbox.w, target.bbox.h)
        crop = (cx - side / 2.0, cy - side / 2.0, scale)
        return bbox, resp, f, crop

    def _roi_embedding(self, f_aff: Tensor, bbox: BBox, crop) -> np.ndarray | None:
        """Embed the located box region of an AFF-gated search feature;
        None when the ROI misses the feature grid."""
        x0, y0, scale = crop
        fx = ((bbox.x - x0) / scale - self._offset) / self._stride + 0.5
        fy = ((bbox.y - y0) / scale - self._offset) / self._stride + 0.5
        fw = bbox.w / scale / self._stride
        fh = bbox.h / scale / self._stride
        try:
            from .autodiff import roi_align
            aligned = roi_align(f_aff, (fx, fy, fw, fh), self._fz_side)
            return network.embed(aligned).data
        except ContractError:
            return None

    def measure_affinity(self, target: TargetState, f: Tensor, bbox: BBox, crop) -> float:
        """Affinity between the birth exemplar embedding and the embedding of
        the current SOT box; an out-of-grid ROI counts as certain occlusion."""
        f_aff = network.tsa_attention(f, "aff", self.params)
        w_x = self._roi_embedding(f_aff, bbox, crop)
        if w_x is None:
            return -1.0
        target._last_roi_embedding = w_x  # reused for the tracklet record
        return float(target.exemplar_embedding @ w_x)

    # -- lifecycle ---------------------------------------------------------

    def _birth(self, frame: int, image: np.ndarray, box: BBox) -> TargetState:
        w_z, f_sot = self._embed_exemplar(image, box)
        target = TargetState(
            identity=self.next_id, status=Status.TRACKED, bbox=box,
            exemplar_embedding=w_z, exemplar_sot_feature=f_sot,
            tracklet=[TrackletEntry(frame, box, w_z)],
            iou_history=deque(maxlen=self.cfg.iou_window))
        self.next_id += 1
        self.targets.append(target)
        return target

    def _update_tentatives(self, frame: int, image: np.ndarray,
                           birth_boxes: Sequence[BBox]) -> None:
        pairs = sorted(
            ((iou(t.bbox, b), ti, bi) for ti, t in enumerate(self.tentatives)
             for bi, b in enumerate(birth_boxes) if iou(t.bbox, b) >= self.cfg.gamma),
            key=lambda p: (-p[0], p[1], p[2]))
        taken_t: set[int] = set()
        taken_b: set[int] = set()
        for _, ti, bi in pairs:
            if ti in taken_t or bi in taken_b:
                continue
            self.tentatives[ti].bbox = birth_boxes[bi]
            self.tentatives[ti].hits += 1
            taken_t.add(ti)
            taken_b.add(bi)
        survivors = []
        for tent in self.tentatives:
            if tent.hits >= 2:
                self._birth(frame, image, tent.bbox)
            elif frame - tent.created < 3:
                survivors.append(tent)
        self.tentatives = survivors
        for bi, b in enumerate(birth_boxes):
            if bi not in taken_b:
                self.tentatives.append(_Tentative(bbox=b, created=frame))

    # -- the per-frame pipeline ---------------------------------------------

    def step(self, frame: int, image: np.ndarray,
             detections: Sequence[BBox]) -> list[DetectionRow]:
        if frame <= self.last_frame:
            raise ContractError(f"frames must be strictly increasing "
                                f"(got {frame} after {self.last_frame})")
        self.last_frame = frame

        # 1) SOT + affinity + occlusion detection for tracked targets
        roi_feats: dict[int, tuple[Tensor, tuple]] = {}
        for t in self.targets:
            if t.status is not Status.TRACKED:
                continue
            bbox, _resp, f, crop = self._locate(t, image)
            if fully_outside(bbox, self.width, self.height):
                t.dead = True
                continue
            c = self.measure_affinity(t, f, bbox, crop)
            nearest = max((iou(bbox, d) for d in detections), default=0.0)
            t.iou_history.append(nearest)
            t.bbox = bbox
            t.status = detect_occlusion(c, t.iou_history, self.cfg)
            if t.status is Status.TRACKED:
                roi_feats[t.identity] = (network.tsa_attention(f, "aff", self.params), crop)

        # 2) greedy detection refinement of the surviving tracked boxes
        tracked = [t for t in self.targets if t.status is Status.TRACKED and not t.dead]
        refined = greedy_refine([t.bbox for t in tracked], detections, self.cfg.gamma)
        for t, box in zip(tracked, refined):
            t.bbox = box
            f_aff, crop = roi_feats[t.identity]
            w = self._roi_embedding(f_aff, box, crop)
            if w is None:
                w = getattr(t, "_last_roi_embedding", t.exemplar_embedding)
            t.tracklet.append(TrackletEntry(frame, box, w))

        # 3) candidate detections: overlapping no tracked box above gamma
        cand_idx = candidate_detections(detections, [t.bbox for t in tracked], self.cfg.gamma)

        # 4) association: recover occluded identities, queue the rest as births
        occluded = [t for t in self.targets
                    if t.status is Status.OCCLUDED and not t.dead]
        birth_boxes: list[BBox] = []
        if cand_idx:
            cand_embs = [self._embed_exemplar(image, detections[i])[0] for i in cand_idx]
            result = associate(cand_embs,
                               [[e.embedding for e in t.tracklet] for t in occluded],
                               self.cfg.k_samples, self.cfg.alpha)
            for d, ti in result.recovered:
                t = occluded[ti]
                box = detections[cand_idx[d]]
                t.status = Status.TRACKED
                t.bbox = box
                t.occluded_frames = 0
                t.iou_history.clear()
                t.tracklet.append(TrackletEntry(frame, box, cand_embs[d]))
            birth_boxes = [detections[cand_idx[d]] for d in result.births]

        # 5) tentative births
        self._update_tentatives(frame, image, birth_boxes)

        # 6) trajectory management: occlusion counters and terminations
        for t in self.targets:
            if t.dead:
                continue
            if t.status is Status.OCCLUDED:
                t.occluded_frames += 1
                if t.occluded_frames > self.cfg.terminate_after:
                    t.dead = True
            if fully_outside(t.bbox, self.width, self.height):
                t.dead = True
        self.targets = [t for t in self.targets if not t.dead]

        # 7) emit one row per tracked target
        return [DetectionRow(frame, t.identity, t.bbox, 1.0)
                for t in sorted(self.targets, key=lambda t: t.identity)
                if t.status is Status.TRACKED]


def track_sequence(params: dict[str, Tensor], net_cfg: network.NetworkConfig,
                   cfg: TrackerConfig, frames: Sequence[np.ndarray],
                   detections_per_frame: Sequence[Sequence[BBox]]) -> list[DetectionRow]:
    """Run the tracker over in-memory frames; detections_per_frame[i] belongs
    to 1-based frame i+1."""
    h, w = frames[0].shape[:2]
    tracker = Tracker(params, net_cfg, cfg, (w, h))
    rows: list[DetectionRow] = []
    for i, image in enumerate(frames):
        rows.extend(tracker.step(i + 1, image, list(detections_per_frame[i])))
    return rows
