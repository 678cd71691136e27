"""Verification suites behind ``motkit verify`` and the acceptance tests.

Each suite returns a SuiteResult with pass/fail lines and the raw measured
values, so the test suite can assert exact tolerances on the same numbers the
CLI prints.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, network, training
from .association import hungarian
from .autodiff import Tensor, grad_check
from .geometry import BBox
from .metrics import evaluate
from .mot_io import (DetectionRow, IdentitySpec, OcclusionEvent, SyntheticSpec,
                     gen_synthetic_sequence, write_sequence)
from .patches import exemplar_patch
from .tracker import TrackerConfig, track_sequence


@dataclass
class SuiteResult:
    name: str
    ok: bool = True
    lines: list[str] = field(default_factory=list)
    values: dict[str, float] = field(default_factory=dict)

    def check(self, label: str, ok: bool, detail: str = "") -> bool:
        self.ok = self.ok and ok
        status = "PASS" if ok else "FAIL"
        self.lines.append(f"[{status}] {label}" + (f": {detail}" if detail else ""))
        return ok


# -- gradient suite ----------------------------------------------------------


def _op_cases():
    """(name, builder) pairs; builder(rng) returns (scalar_fn, params)."""
    from .autodiff import (channel_scale, conv2d, cross_entropy, dot, fully_connected,
                           global_avg_pool, l2_normalize, log1p_sum_exp, max_pool2d,
                           relu, roi_align, sigmoid, softmax, softplus, stack)

    def scalarized(make, rng):
        # contract the op output with a fixed random functional so output
        # gradients are non-uniform but identical across repeated calls
        c = Tensor(rng.normal(size=make().data.shape))
        return lambda: (make() * c).sum()

    def conv_case(rng):
        x = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 3, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        return scalarized(lambda: conv2d(x, k, 1, b), rng), [x, k, b]

    def conv_stride_case(rng):
        x = Tensor(rng.normal(size=(7, 7, 2)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 3, 2, 1)), requires_grad=True)
        b = Tensor(rng.normal(size=1), requires_grad=True)
        return scalarized(lambda: conv2d(x, k, 2, b), rng), [x, k, b]

    def relu_case(rng):
        # keep inputs off the kink at 0
        x = Tensor(rng.uniform(0.1, 1.0, size=12) * rng.choice([-1.0, 1.0], size=12),
                   requires_grad=True)
        return scalarized(lambda: relu(x), rng), [x]

    def sigmoid_case(rng):
        x = Tensor(rng.normal(size=10), requires_grad=True)
        return scalarized(lambda: sigmoid(x), rng), [x]

    def softplus_case(rng):
        x = Tensor(rng.normal(size=10), requires_grad=True)
        return scalarized(lambda: softplus(x), rng), [x]

    def pool_case(rng):
        x = Tensor(rng.normal(size=(6, 6, 3)), requires_grad=True)
        return scalarized(lambda: max_pool2d(x, 2, 2), rng), [x]

    def gap_case(rng):
        x = Tensor(rng.normal(size=(6, 6, 4)), requires_grad=True)
        return scalarized(lambda: global_avg_pool(x), rng), [x]

    def fc_case(rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        return scalarized(lambda: fully_connected(x, w, b), rng), [x, w, b]

    def softmax_case(rng):
        x = Tensor(rng.normal(size=6), requires_grad=True)
        return scalarized(lambda: softmax(x), rng), [x]

    def dot_case(rng):
        a = Tensor(rng.normal(size=5), requires_grad=True)
        b = Tensor(rng.normal(size=5), requires_grad=True)
        return lambda: dot(a, b), [a, b]

    def l2_case(rng):
        v = Tensor(rng.normal(size=6) + 0.5, requires_grad=True)
        return scalarized(lambda: l2_normalize(v), rng), [v]

    def channel_case(rng):
        f = Tensor(rng.normal(size=(5, 5, 3)), requires_grad=True)
        a = Tensor(rng.normal(size=3), requires_grad=True)
        return scalarized(lambda: channel_scale(f, a), rng), [f, a]

    def roi_case(rng):
        f = Tensor(rng.normal(size=(10, 10, 2)), requires_grad=True)
        box = (float(rng.uniform(0.5, 4.0)), float(rng.uniform(0.5, 4.0)),
               float(rng.uniform(2.0, 4.5)), float(rng.uniform(2.0, 4.5)))
        return scalarized(lambda: roi_align(f, box, 6), rng), [f]

    def xent_case(rng):
        x = Tensor(rng.normal(size=5), requires_grad=True)
        label = int(rng.integers(5))
        return lambda: cross_entropy(x, label), [x]

    def lse_case(rng):
        v = Tensor(rng.normal(size=6) * 3.0, requires_grad=True)
        return lambda: log1p_sum_exp(v), [v]

    def stack_case(rng):
        ts = [Tensor(rng.normal(size=()), requires_grad=True) for _ in range(4)]
        return scalarized(lambda: stack(ts), rng), ts

    return [
        ("conv2d", conv_case), ("conv2d_stride2", conv_stride_case),
        ("relu", relu_case), ("sigmoid", sigmoid_case), ("softplus", softplus_case),
        ("max_pool2d", pool_case), ("global_avg_pool", gap_case),
        ("fully_connected", fc_case), ("softmax", softmax_case), ("dot", dot_case),
        ("l2_normalize", l2_case), ("channel_scale", channel_case),
        ("roi_align", roi_case), ("cross_entropy", xent_case),
        ("log1p_sum_exp", lse_case), ("stack", stack_case),
    ]


def _toy_graph_case(seed: int):
    """Full composed graph: backbone -> attention -> correlation plus all
    four losses on a 2-pair batch, in the small config."""
    rng = np.random.default_rng(seed)
    cfg = network.toy_config(num_identities=4)
    params = network.init_params(cfg, rng)
    stride, _ = network.feature_geometry(cfg)
    resp_side = (network.feature_side(cfg, cfg.instance_size_train)
                 - network.feature_side(cfg, cfg.exemplar_size) + 1)
    label = losses.make_label_map(resp_side, stride, radius=2.0)
    roi_box = network.centered_roi_box(cfg, cfg.instance_size_train)
    patches = [
        (rng.uniform(0, 1, (cfg.exemplar_size, cfg.exemplar_size, 3)),
         rng.uniform(0, 1, (cfg.instance_size_train, cfg.instance_size_train, 3)))
        for _ in range(2)
    ]

    def fn():
        sot_terms, pairs, logits_z, logits_x = [], [], [], []
        for z_patch, x_patch in patches:
            fz = network.backbone_forward(Tensor(z_patch), params, cfg)
            fx = network.backbone_forward(Tensor(x_patch), params, cfg)
            resp = network.correlation_response(network.tsa_attention(fx, "sot", params),
                                                network.tsa_attention(fz, "sot", params),
                                                params)
            sot_terms.append(losses.sot_loss(resp, label))
            w_z = network.embed(network.tsa_attention(fz, "aff", params))
            w_x = network.instance_embedding(network.tsa_attention(fx, "aff", params),
                                             roi_box, cfg)
            pairs.append((w_z, w_x))
            logits_z.append(network.identity_logits(w_z, params))
            logits_x.append(network.identity_logits(w_x, params))
        l_sot = (sot_terms[0] + sot_terms[1]) * 0.5
        return (l_sot
                + 0.1 * losses.npair_loss(pairs)
                + 0.1 * losses.iden_loss(logits_z, logits_x, [0, 1])
                + 0.05 * losses.triplet_loss(pairs, margin=0.5))

    return fn, list(params.values())


def grad_suite(seeds: int = 100, graph_seeds: int = 2,
               graph_samples_per_param: int = 2) -> SuiteResult:
    """Finite-difference sweep: every op over ``seeds`` random draws, then the
    full composed graph with element subsampling."""
    result = SuiteResult("grad")
    t0 = time.time()
    tol = 1e-4
    for name, builder in _op_cases():
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng(1000 + s)
            fn, params = builder(rng)
            worst = max(worst, grad_check(fn, params, h=1e-5))
        result.values[f"op.{name}"] = worst
        result.check(f"op {name} ({seeds} seeds)", worst < tol, f"max rel err {worst:.3e}")
    worst_graph = 0.0
    for s in range(graph_seeds):
        fn, params = _toy_graph_case(77 + s)
        err = grad_check(fn, params, h=1e-5,
                         sample_per_param=graph_samples_per_param,
                         rng=np.random.default_rng(5 + s))
        worst_graph = max(worst_graph, err)
    result.values["graph"] = worst_graph
    result.check(f"composed graph ({graph_seeds} seeds, sampled elements)",
                 worst_graph < tol, f"max rel err {worst_graph:.3e}")
    result.values["runtime_s"] = time.time() - t0
    result.lines.append(f"runtime {result.values['runtime_s']:.1f}s")
    return result


# -- assignment suite --------------------------------------------------------


def brute_force_assignment(matrix: np.ndarray) -> float:
    """Exhaustive maximum assignment value over all injections."""
    rows, cols = matrix.shape
    if rows <= cols:
        return max(sum(matrix[i, p[i]] for i in range(rows))
                   for p in itertools.permutations(range(cols), rows))
    return max(sum(matrix[p[j], j] for j in range(cols))
               for p in itertools.permutations(range(rows), cols))


def hungarian_suite(trials: int = 100, max_size: int = 6) -> SuiteResult:
    result = SuiteResult("hungarian")
    t0 = time.time()
    rng = np.random.default_rng(42)
    disagreements = 0
    total = 0
    for n in range(1, max_size + 1):
        for _ in range(trials):
            m = rng.uniform(-1.0, 1.0, size=(n, n))
            got = sum(m[r, c] for r, c in hungarian(m, maximize=True))
            want = brute_force_assignment(m)
            total += 1
            if abs(got - want) > 1e-9:
                disagreements += 1
    for shape in ((3, 5), (5, 3), (2, 6)):
        for _ in range(trials // 4):
            m = rng.uniform(-1.0, 1.0, size=shape)
            got = sum(m[r, c] for r, c in hungarian(m, maximize=True))
            want = brute_force_assignment(m)
            total += 1
            if abs(got - want) > 1e-9:
                disagreements += 1
    result.values["trials"] = total
    result.values["disagreements"] = disagreements
    result.values["runtime_s"] = time.time() - t0
    result.check(f"assignment vs brute force ({total} matrices)", disagreements == 0,
                 f"{disagreements} disagreements, {result.values['runtime_s']:.1f}s")
    return result


# -- metrics suite -----------------------------------------------------------


def perfect_scenario() -> tuple[list[DetectionRow], list[DetectionRow]]:
    rows = [DetectionRow(f, tid, BBox(10.0 + 30 * tid, 10.0, 10.0, 20.0), 1.0)
            for f in range(1, 6) for tid in (1, 2)]
    return rows, list(rows)


def handcrafted_scenario() -> tuple[list[DetectionRow], list[DetectionRow]]:
    """10 gt boxes; hypothesis commits exactly 1 FP, 2 FN and 1 identity
    switch, so MOTA = 1 - 4/10 = 0.6."""
    box_a = BBox(10, 10, 10, 10)
    box_b = BBox(50, 50, 12, 12)
    gt = [DetectionRow(f, 1, box_a) for f in range(1, 6)]
    gt += [DetectionRow(f, 2, box_b) for f in range(1, 6)]
    hyp = [DetectionRow(f, 7, box_a) for f in range(1, 5)]
    hyp += [DetectionRow(5, 8, box_a)]                       # identity switch
    hyp += [DetectionRow(f, 9, box_b) for f in range(1, 4)]  # misses frames 4, 5
    hyp += [DetectionRow(1, 6, BBox(100, 80, 8, 8))]         # false positive
    return gt, hyp


def swap_scenario() -> tuple[list[DetectionRow], list[DetectionRow]]:
    """Two equal-length tracks whose hypothesis ids swap halfway: IDF1 = 0.5."""
    p = BBox(10, 10, 10, 10)
    q = BBox(60, 60, 10, 10)
    gt = [DetectionRow(f, 1, p) for f in range(1, 11)]
    gt += [DetectionRow(f, 2, q) for f in range(1, 11)]
    hyp = [DetectionRow(f, 1, p if f <= 5 else q) for f in range(1, 11)]
    hyp += [DetectionRow(f, 2, q if f <= 5 else p) for f in range(1, 11)]
    return gt, hyp


def metrics_suite() -> SuiteResult:
    result = SuiteResult("metrics")
    gt, hyp = perfect_scenario()
    rep = evaluate(gt, hyp)
    result.values.update(perfect_mota=rep.mota, perfect_motp=rep.motp, perfect_idf1=rep.idf1,
                         perfect_mt=rep.mt_pct, perfect_ml=rep.ml_pct)
    result.check("perfect tracking", rep.mota == 1.0 and rep.motp == 1.0 and rep.idf1 == 1.0
                 and rep.mt_pct == 100.0 and rep.ml_pct == 0.0,
                 f"MOTA {rep.mota} MOTP {rep.motp} IDF1 {rep.idf1}")

    gt, hyp = handcrafted_scenario()
    rep = evaluate(gt, hyp)
    result.values.update(hand_mota=rep.mota, hand_fp=rep.fp, hand_fn=rep.fn, hand_ids=rep.ids)
    result.check("handcrafted counts", (rep.fp, rep.fn, rep.ids) == (1, 2, 1)
                 and abs(rep.mota - 0.6) < 1e-12,
                 f"MOTA {rep.mota:.6f} FP {rep.fp} FN {rep.fn} IDS {rep.ids}")
    identity = 1.0 - (rep.fp + rep.fn + rep.ids) / rep.num_gt
    result.check("MOTA identity", abs(identity - rep.mota) < 1e-12)

    gt, hyp = swap_scenario()
    rep = evaluate(gt, hyp)
    result.values["swap_idf1"] = rep.idf1
    result.check("two-track id swap", rep.idf1 == 0.5, f"IDF1 {rep.idf1}")

    gt, _ = perfect_scenario()
    rep = evaluate(gt, [])
    result.values.update(empty_mota=rep.mota, empty_fn=rep.fn, empty_idf1=rep.idf1)
    result.check("empty hypothesis", rep.mota == 0.0 and rep.fn == len(gt)
                 and rep.fp == 0 and rep.ids == 0 and rep.idf1 == 0.0,
                 f"MOTA {rep.mota} FN {rep.fn}")
    return result


# -- end-to-end suite --------------------------------------------------------


def occlusion_scenario_spec(seed: int = 5150) -> SyntheticSpec:
    """Three well-separated targets; the first is fully hidden for 10 frames."""
    idents = (
        IdentitySpec(start=(18.0, 20.0), velocity=(1.5, 0.0), size=(16.0, 20.0),
                     color=(0.95, 0.15, 0.15), texture_seed=101),
        IdentitySpec(start=(120.0, 50.0), velocity=(-1.2, 0.0), size=(18.0, 22.0),
                     color=(0.15, 0.9, 0.2), texture_seed=202),
        IdentitySpec(start=(30.0, 84.0), velocity=(1.0, 0.0), size=(15.0, 19.0),
                     color=(0.2, 0.3, 0.95), texture_seed=303),
    )
    return SyntheticSpec(width=160, height=120, frames=100, num_identities=3,
                         seed=seed, name="occlusion-scenario",
                         occlusions=(OcclusionEvent(target=0, start=40, duration=10),),
                         identities=idents)


def training_spec(seed: int = 11, num_identities: int = 20, frames: int = 200) -> SyntheticSpec:
    return SyntheticSpec(width=240, height=176, frames=frames,
                         num_identities=num_identities, seed=seed, name="train-synth")


def _frozen(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(np.array(v.data)) for k, v in params.items()}


def patch_embedding(params: dict[str, Tensor], cfg: network.NetworkConfig,
                    image: np.ndarray, box: BBox, search_scale: float = 4.0) -> np.ndarray:
    """Appearance embedding of an exemplar-style crop around a box."""
    patch = exemplar_patch(image, box.center, box.side, cfg, search_scale)
    f = network.backbone_forward(Tensor(patch), params, cfg)
    return network.embed(network.tsa_attention(f, "aff", params)).data


def separation_statistic(params: dict[str, Tensor], cfg: network.NetworkConfig,
                         seed: int = 1234, num_identities: int = 10,
                         pairs_per_identity: int = 3) -> float:
    """Mean same-identity affinity minus mean cross-identity affinity on a
    held-out synthetic sequence."""
    spec = SyntheticSpec(width=200, height=150, frames=60,
                         num_identities=num_identities, seed=seed, name="held-out")
    seq = gen_synthetic_sequence(spec)
    by_id: dict[int, list[DetectionRow]] = {}
    for row in seq.gt:
        by_id.setdefault(row.id, []).append(row)
    rng = np.random.default_rng(seed + 1)
    frozen = _frozen(params)
    embeddings: dict[int, list[np.ndarray]] = {}
    for ident, rows in sorted(by_id.items()):
        picks = rng.choice(len(rows), size=min(2 * pairs_per_identity, len(rows)),
                           replace=False)
        embeddings[ident] = [
            patch_embedding(frozen, cfg, seq.frames[rows[i].frame - 1], rows[i].bbox)
            for i in sorted(int(p) for p in picks)
        ]
    same, diff = [], []
    idents = sorted(embeddings)
    for ident in idents:
        ws = embeddings[ident]
        for i in range(0, len(ws) - 1, 2):
            same.append(float(ws[i] @ ws[i + 1]))
    for a_pos, a in enumerate(idents):
        for b in idents[a_pos + 1:]:
            diff.append(float(embeddings[a][0] @ embeddings[b][0]))
    return float(np.mean(same) - np.mean(diff))


def run_tracker_on(seq, params, net_cfg, trk_cfg) -> list[DetectionRow]:
    dets_by_frame = [[] for _ in seq.frames]
    for d in seq.det:
        dets_by_frame[d.frame - 1].append(d.bbox)
    return track_sequence(params, net_cfg, trk_cfg, seq.frames, dets_by_frame)


def e2e_suite(workdir, epochs: int = 30, steps_per_epoch: int = 20,
              seed: int = 7) -> SuiteResult:
    """Train full and SOT-only models, then check affinity separation and
    occlusion recovery; the heavyweight suite."""
    result = SuiteResult("e2e")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    seq_dir = workdir / "train-synth"
    if not (seq_dir / "seqinfo.ini").exists():
        write_sequence(gen_synthetic_sequence(training_spec()), seq_dir)
    dataset = training.TrackingDataset.from_root(seq_dir)
    net_cfg = network.toy_config(num_identities=dataset.num_identities)
    train_cfg = training.TrainConfig(epochs=epochs, steps_per_epoch=steps_per_epoch,
                                     jitter_px=2.0, lr_end=1e-3)

    t0 = time.time()
    full_loss_cfg = losses.LossConfig(label_radius=2.0)
    params_full, log_full = training.train(dataset, net_cfg, full_loss_cfg, train_cfg, seed)
    t_full = time.time() - t0
    sot_loss_cfg = losses.LossConfig(lambda1=0.0, lambda2=0.0, label_radius=2.0)
    params_sot, _ = training.train(dataset, net_cfg, sot_loss_cfg, train_cfg, seed)
    t_both = time.time() - t0
    result.values["train_runtime_s"] = t_both
    result.lines.append(f"training runtime {t_full:.0f}s (full) / {t_both:.0f}s (both)")

    last_epoch = [r[5] for r in log_full if r[0] == epochs]
    initial, final = log_full[0][5], float(np.mean(last_epoch))
    result.values.update(loss_initial=initial, loss_final=final)
    result.check("loss halves over training", final < 0.5 * initial,
                 f"{initial:.3f} -> {final:.3f}")

    sep_full = separation_statistic(params_full, net_cfg)
    sep_sot = separation_statistic(params_sot, net_cfg)
    result.values.update(separation_full=sep_full, separation_sot=sep_sot)
    result.check("multi-task affinity separation >= 0.2", sep_full >= 0.2,
                 f"{sep_full:.3f}")
    result.check("tracking-only separation strictly smaller", sep_sot < sep_full,
                 f"{sep_sot:.3f} < {sep_full:.3f}")

    seq = gen_synthetic_sequence(occlusion_scenario_spec())
    rows = run_tracker_on(seq, params_full, net_cfg, TrackerConfig())
    rep = evaluate(seq.gt, rows)
    result.values.update(occl_mota=rep.mota, occl_idf1=rep.idf1, occl_ids=float(rep.ids))
    result.check("occlusion recovery MOTA >= 0.9", rep.mota >= 0.9, f"{rep.mota:.3f}")
    result.check("occlusion recovery IDF1 >= 0.9", rep.idf1 >= 0.9, f"{rep.idf1:.3f}")
    result.check("no identity switches", rep.ids == 0, f"IDS {rep.ids}")

    rows_abl = run_tracker_on(seq, params_full, net_cfg, TrackerConfig(alpha=math.inf))
    rep_abl = evaluate(seq.gt, rows_abl)
    result.values["occl_idf1_ablated"] = rep_abl.idf1
    result.check("disabling association degrades IDF1", rep_abl.idf1 < rep.idf1,
                 f"{rep_abl.idf1:.3f} < {rep.idf1:.3f}")
    return result


SUITES = {
    "grad": grad_suite,
    "hungarian": hungarian_suite,
    "metrics": metrics_suite,
}


def run_suite(name: str, workdir=None) -> SuiteResult:
    if name == "e2e":
        return e2e_suite(workdir if workdir is not None else Path("verify-e2e"))
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}' (choose from grad, hungarian, metrics, e2e)")
    return SUITES[name]()
