"""CLEAR multi-object tracking metrics plus identity-level scores.

``clear_mot`` follows the standard protocol: matches carry over between
frames while their overlap stays above the threshold, remaining pairs are
matched per frame by maximizing IOU, and an identity switch is charged when a
ground-truth object's matched hypothesis id differs from its previous one.
``idf1`` solves one global trajectory-level assignment over per-frame gated
overlap counts. MOTP is reported as mean IOU over matches (higher is better).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .association import hungarian
from .autodiff import ContractError
from .geometry import BBox, iou
from .mot_io import DetectionRow


@dataclass
class MetricsReport:
    mota: float
    motp: float
    idf1: float
    mt_pct: float
    ml_pct: float
    fp: int
    fn: int
    ids: int
    # raw tallies kept so sequence reports can be aggregated exactly
    num_gt: int = 0
    num_hyp: int = 0
    num_matches: int = 0
    iou_sum: float = 0.0
    idtp: int = 0
    num_trajectories: int = 0
    mt_count: int = 0
    ml_count: int = 0

    def csv_row(self, name: str) -> str:
        return (f"{name},{self.mota:.6f},{self.motp:.6f},{self.idf1:.6f},"
                f"{self.mt_pct:.2f},{self.ml_pct:.2f},{self.fp},{self.fn},{self.ids}")


def _by_frame(rows: Sequence[DetectionRow], label: str) -> dict[int, dict[int, BBox]]:
    table: dict[int, dict[int, BBox]] = defaultdict(dict)
    for r in rows:
        if r.id in table[r.frame]:
            raise ContractError(f"duplicate ({r.frame}, {r.id}) in {label} rows")
        table[r.frame][r.id] = r.bbox
    return table


def _frame_matching(gt_rows, hyp_rows, iou_threshold):
    """Shared per-frame matcher; yields counts plus per-gt coverage."""
    gt_frames = _by_frame(gt_rows, "ground-truth")
    hyp_frames = _by_frame(hyp_rows, "hypothesis")
    frames = sorted(set(gt_frames) | set(hyp_frames))

    fp = fn = ids = 0
    iou_sum = 0.0
    matches = 0
    last_match: dict[int, int] = {}
    prev_frame_match: dict[int, int] = {}
    covered = defaultdict(int)
    lifespan = defaultdict(int)

    for f in frames:
        g = gt_frames.get(f, {})
        h = hyp_frames.get(f, {})
        for gid in g:
            lifespan[gid] += 1
        matched: dict[int, int] = {}
        used: set[int] = set()
        # keep matches from the previous frame while they still overlap
        for gid, hid in prev_frame_match.items():
            if gid in g and hid in h and iou(g[gid], h[hid]) >= iou_threshold:
                matched[gid] = hid
                used.add(hid)
        rem_g = [gid for gid in g if gid not in matched]
        rem_h = [hid for hid in h if hid not in used]
        if rem_g and rem_h:
            matrix = np.array([[iou(g[gid], h[hid]) for hid in rem_h] for gid in rem_g])
            for r, c in hungarian(matrix, maximize=True):
                if matrix[r, c] >= iou_threshold:
                    matched[rem_g[r]] = rem_h[c]
                    used.add(rem_h[c])
        for gid, hid in matched.items():
            iou_sum += iou(g[gid], h[hid])
            matches += 1
            covered[gid] += 1
            if gid in last_match and last_match[gid] != hid:
                ids += 1
            last_match[gid] = hid
        fp += len(h) - len(used)
        fn += len(g) - len(matched)
        prev_frame_match = matched

    return fp, fn, ids, iou_sum, matches, covered, lifespan


def clear_mot(gt_rows: Sequence[DetectionRow], hyp_rows: Sequence[DetectionRow],
              iou_threshold: float = 0.5) -> MetricsReport:
    """Frame-level CLEAR scores; MOTA = 1 − (FP + FN + IDS) / total_gt."""
    if not gt_rows:
        raise ContractError("clear_mot: no ground-truth rows")
    fp, fn, ids, iou_sum, matches, covered, lifespan = _frame_matching(
        gt_rows, hyp_rows, iou_threshold)
    total_gt = len(gt_rows)
    mota = 1.0 - (fp + fn + ids) / total_gt
    motp = iou_sum / matches if matches else 0.0
    n_traj = len(lifespan)
    mt = sum(1 for gid, n in lifespan.items() if covered[gid] / n >= 0.8)
    ml = sum(1 for gid, n in lifespan.items() if covered[gid] / n <= 0.2)
    return MetricsReport(
        mota=mota, motp=motp, idf1=0.0,
        mt_pct=100.0 * mt / n_traj, ml_pct=100.0 * ml / n_traj,
        fp=fp, fn=fn, ids=ids,
        num_gt=total_gt, num_hyp=len(hyp_rows), num_matches=matches, iou_sum=iou_sum,
        num_trajectories=n_traj, mt_count=mt, ml_count=ml)


def idf1(gt_rows: Sequence[DetectionRow], hyp_rows: Sequence[DetectionRow],
         iou_threshold: float = 0.5) -> tuple[float, int]:
    """(IDF1, IDTP): one optimal global gt-id to hyp-id mapping over per-frame
    IOU-gated co-occurrence counts; IDF1 = 2·IDTP / (|gt| + |hyp|)."""
    if not gt_rows:
        raise ContractError("idf1: no ground-truth rows")
    if not hyp_rows:
        return 0.0, 0
    gt_frames = _by_frame(gt_rows, "ground-truth")
    hyp_frames = _by_frame(hyp_rows, "hypothesis")
    gt_ids = sorted({r.id for r in gt_rows})
    hyp_ids = sorted({r.id for r in hyp_rows})
    counts = np.zeros((len(gt_ids), len(hyp_ids)))
    g_index = {gid: i for i, gid in enumerate(gt_ids)}
    h_index = {hid: j for j, hid in enumerate(hyp_ids)}
    for f in set(gt_frames) & set(hyp_frames):
        for gid, gbox in gt_frames[f].items():
            for hid, hbox in hyp_frames[f].items():
                if iou(gbox, hbox) >= iou_threshold:
                    counts[g_index[gid], h_index[hid]] += 1
    idtp = int(sum(counts[r, c] for r, c in hungarian(counts, maximize=True)))
    return 2.0 * idtp / (len(gt_rows) + len(hyp_rows)), idtp


def mt_ml(gt_rows: Sequence[DetectionRow], hyp_rows: Sequence[DetectionRow],
          iou_threshold: float = 0.5) -> tuple[float, float]:
    """Percent of gt trajectories covered ≥ 80% (mostly tracked) and ≤ 20%
    (mostly lost) of their lifespan; matching is identity-agnostic."""
    report = clear_mot(gt_rows, hyp_rows, iou_threshold)
    return report.mt_pct, report.ml_pct


def evaluate(gt_rows: Sequence[DetectionRow], hyp_rows: Sequence[DetectionRow],
             iou_threshold: float = 0.5) -> MetricsReport:
    """Full per-sequence report: CLEAR scores plus IDF1."""
    report = clear_mot(gt_rows, hyp_rows, iou_threshold)
    report.idf1, report.idtp = idf1(gt_rows, hyp_rows, iou_threshold)
    return report


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Combine per-sequence reports; counts add, rates are recomputed."""
    if not reports:
        raise ContractError("aggregate: no reports")
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    ids = sum(r.ids for r in reports)
    num_gt = sum(r.num_gt for r in reports)
    num_hyp = sum(r.num_hyp for r in reports)
    matches = sum(r.num_matches for r in reports)
    iou_sum = sum(r.iou_sum for r in reports)
    idtp = sum(r.idtp for r in reports)
    n_traj = sum(r.num_trajectories for r in reports)
    mt = sum(r.mt_count for r in reports)
    ml = sum(r.ml_count for r in reports)
    return MetricsReport(
        mota=1.0 - (fp + fn + ids) / num_gt,
        motp=iou_sum / matches if matches else 0.0,
        idf1=2.0 * idtp / (num_gt + num_hyp) if num_gt + num_hyp else 0.0,
        mt_pct=100.0 * mt / n_traj if n_traj else 0.0,
        ml_pct=100.0 * ml / n_traj if n_traj else 0.0,
        fp=fp, fn=fn, ids=ids,
        num_gt=num_gt, num_hyp=num_hyp, num_matches=matches, iou_sum=iou_sum,
        idtp=idtp, num_trajectories=n_traj, mt_count=mt, ml_count=ml)


def format_table(named_reports: Sequence[tuple[str, MetricsReport]]) -> str:
    """Aligned text table over (name, report) pairs."""
    header = ["sequence", "MOTA", "MOTP", "IDF1", "MT%", "ML%", "FP", "FN", "IDS"]
    rows = [[name, f"{r.mota:.3f}", f"{r.motp:.3f}", f"{r.idf1:.3f}",
             f"{r.mt_pct:.1f}", f"{r.ml_pct:.1f}", str(r.fp), str(r.fn), str(r.ids)]
            for name, r in named_reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)
