"""Command-line entry point: synth | train | track | eval | verify.

Exit codes: 0 success, 1 verification/metric failure, 2 usage or parse error.
Every command is deterministic given its config and --seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, network, training, verify
from .autodiff import ContractError, Tensor, load_tensors, save_tensors
from .config import ConfigError, build_run_config, describe_keys, parse_config_file
from .mot_io import (ParseError, frame_path, gen_synthetic_sequence, load_sequence,
                     load_synthetic_spec, parse_det_file, read_ppm, write_ppm,
                     write_results, write_sequence)
from .tracker import Tracker
from .viz import draw_overlay

USAGE_ERROR = 2
VERIFY_ERROR = 1


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("--seed", type=int, default=None,
                        help="master random seed (overrides config)")


def _run_config(args) -> "RunConfig":
    file_values = parse_config_file(args.config) if args.config else {}
    cli_values = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        cli_values[key.strip()] = value.strip()
    if args.seed is not None:
        cli_values["seed"] = str(args.seed)
    return build_run_config(file_values, cli_values)


def cmd_synth(args) -> int:
    spec = load_synthetic_spec(args.spec)
    seq = gen_synthetic_sequence(spec)
    write_sequence(seq, args.out)
    print(f"wrote {len(seq.frames)} frames, {len(seq.gt)} gt rows, "
          f"{len(seq.det)} det rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data = Path(args.data)
    if not data.exists():
        print(f"error: data directory {data} does not exist", file=sys.stderr)
        return USAGE_ERROR
    dataset = training.TrackingDataset.from_root(data)
    net_cfg = cfg.network
    if not cfg.was_set("num_identities"):
        net_cfg = net_cfg.with_identities(dataset.num_identities)
    elif net_cfg.num_identities < dataset.num_identities:
        print(f"error: num_identities {net_cfg.num_identities} < dataset "
              f"identities {dataset.num_identities}", file=sys.stderr)
        return USAGE_ERROR
    params, log = training.train(dataset, net_cfg, cfg.loss, cfg.train, cfg.seed,
                                 checkpoint_path=args.out)
    save_tensors(args.out, params)
    loss_csv = args.loss_csv if args.loss_csv else Path(str(args.out) + ".loss.csv")
    training.write_loss_log(log, loss_csv)
    final = log[-1][5] if log else float("nan")
    print(f"trained {cfg.train.epochs} epochs over {dataset.num_identities} identities; "
          f"final loss {final:.4f}; checkpoint {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = _run_config(args)
    seq_dir = Path(args.sequence)
    meta, _, det_rows = load_sequence(seq_dir)
    raw = load_tensors(args.checkpoint)
    params = {name: Tensor(arr) for name, arr in raw.items()}
    net_cfg = cfg.network
    if not cfg.was_set("num_identities") and "ident.fc2.bias" in raw:
        net_cfg = net_cfg.with_identities(raw["ident.fc2.bias"].size)
    network.check_params(net_cfg, params)

    dets_by_frame: dict[int, list] = {}
    for row in det_rows:
        dets_by_frame.setdefault(row.frame, []).append(row.bbox)
    tracker = Tracker(params, net_cfg, cfg.tracker, (meta.width, meta.height))
    rows = []
    overlay_dir = Path(args.overlay) if args.overlay else None
    if overlay_dir:
        overlay_dir.mkdir(parents=True, exist_ok=True)
    for frame in range(1, meta.length + 1):
        image = read_ppm(frame_path(seq_dir, frame))
        frame_rows = tracker.step(frame, image, dets_by_frame.get(frame, []))
        rows.extend(frame_rows)
        if overlay_dir:
            write_ppm(overlay_dir / f"{frame:06d}.ppm", draw_overlay(image, frame_rows))
    write_results(rows, args.out)
    print(f"tracked {meta.length} frames -> {len(rows)} rows in {args.out}")
    return 0


def cmd_eval(args) -> int:
    gt = parse_det_file(args.gt)
    hyp = parse_det_file(args.result)
    report = metrics.evaluate(gt, hyp, iou_threshold=args.iou_threshold)
    name = Path(args.result).stem
    print(metrics.format_table([(name, report)]))
    if args.csv:
        header = "sequence,MOTA,MOTP,IDF1,MT,ML,FP,FN,IDS"
        Path(args.csv).write_text(header + "\n" + report.csv_row(name) + "\n")
    return 0


def cmd_verify(args) -> int:
    result = verify.run_suite(args.suite, workdir=args.workdir)
    for line in result.lines:
        print(line)
    print(f"suite '{result.name}': {'PASS' if result.ok else 'FAIL'}")
    return 0 if result.ok else VERIFY_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motkit",
        description="Online multi-object tracking: synthesize data, train the "
                    "shared motion/affinity network, track, evaluate, verify.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic labeled sequence",
                       description="Render a synthetic sequence from a JSON spec.")
    p.add_argument("spec", type=Path, help="JSON synthetic-sequence spec")
    p.add_argument("out", type=Path, help="output sequence directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the network on annotated sequences",
                       description="Train on gt-annotated sequences.",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", type=Path, required=True, help="sequence directory or root")
    p.add_argument("--out", type=Path, required=True, help="output checkpoint path")
    p.add_argument("--loss-csv", type=Path, default=None,
                   help="per-step loss log (default: <out>.loss.csv)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the online tracker over a sequence",
                       description="Track a sequence with a trained checkpoint.",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--sequence", type=Path, required=True, help="sequence directory")
    p.add_argument("--out", type=Path, required=True, help="output result file")
    p.add_argument("--overlay", type=Path, default=None,
                   help="also write annotated frames to this directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a result file against ground truth",
                       description="CLEAR + identity metrics for a result file.")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--result", type=Path, required=True)
    p.add_argument("--csv", type=Path, default=None, help="also write a CSV report")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run a verification suite",
                       description="Run one of the verification suites.")
    p.add_argument("suite", choices=("grad", "hungarian", "metrics", "e2e"))
    p.add_argument("--workdir", type=Path, default=Path("verify-e2e"),
                   help="scratch directory for the e2e suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ContractError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
