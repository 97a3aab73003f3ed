"""Command-line entry point: dataset generation, training, evaluation,
report comparison, and the finite-difference gradient self-check.

Every command is deterministic given its config and seed; the seed is
always explicit (no wall-clock default), and all resolved settings are
echoed to ``run.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .checkpoint import load_params_into
from .data import SceneConfig, load_dataset, write_dataset
from .gradcheck import run_all_checks
from .metrics import (
    group_report,
    report_from_json,
    report_to_csv,
    report_to_json,
)
from .net import NetConfig, build_network
from .optim import OptimConfig
from .train import LossConfig, evaluate_model, train_model

__all__ = ["main"]

_METRICS = ("precision", "recall", "iou")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise SystemExit(f"config {path} must hold a JSON object")
    return doc


def _write_run_json(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    count = int(cfg.pop("count", 200))
    if args.count is not None:
        count = args.count
    cfg["seed"] = args.seed
    if args.stream is not None:
        cfg["stream"] = args.stream
    scene = SceneConfig.from_dict(cfg)
    write_dataset(args.out, scene, count)
    _write_run_json(args.out, {
        "command": "gen-data",
        "seed": args.seed,
        "out": args.out,
        "count": count,
        "scene": scene.to_dict(),
    })
    print(f"wrote {count} samples to {args.out}")
    return 0


def _resolve_net_config(cfg: dict, dataset, net_flag: str | None) -> NetConfig:
    block = dict(cfg.get("net", {}))
    if net_flag is not None:
        block["variant"] = net_flag
    variant = block.get("variant", "erf")
    H, W = dataset.images.shape[1:3]
    if variant == "bierf":
        block.setdefault("full_height", H)
        block.setdefault("full_width", W)
        block.setdefault("height", block["full_height"] // 2)
        block.setdefault("width", block["full_width"] // 2)
    else:
        block.setdefault("height", H)
        block.setdefault("width", W)
    block.setdefault("num_classes", dataset.hierarchy.num_classes)
    return NetConfig.from_dict(block)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data_path = args.data or cfg.get("data")
    if data_path is None:
        raise SystemExit("train needs a dataset: pass --data or a 'data' config entry")
    dataset = load_dataset(data_path)
    loss_config = LossConfig.from_dict(cfg.get("loss", {}))
    if args.loss is not None:
        loss_config = dataclasses.replace(loss_config, kind=args.loss)
    optim_config = OptimConfig.from_dict(cfg.get("optim", {}))
    net_config = _resolve_net_config(cfg, dataset, args.net)
    batch_size = int(cfg.get("batch_size", 8))
    checkpoint_every = int(cfg.get("checkpoint_every", 1))
    _write_run_json(args.out, {
        "command": "train",
        "seed": args.seed,
        "out": args.out,
        "data": str(data_path),
        "batch_size": batch_size,
        "checkpoint_every": checkpoint_every,
        "net": net_config.to_dict(),
        "loss": loss_config.to_dict(),
        "optim": optim_config.to_dict(),
    })

    def progress(row):
        fs = ",".join(f"{v:.4f}" for v in row.dynamic_weights)
        print(
            f"epoch {row.epoch:3d}  lr {row.lr:.2e}  total {row.total:.4f}"
            + (f"  f [{fs}]" if fs else "")
        )

    result = train_model(
        dataset,
        net_config,
        loss_config,
        optim_config,
        seed=args.seed,
        batch_size=batch_size,
        out_dir=args.out,
        checkpoint_every=checkpoint_every,
        progress=progress,
    )
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def _net_config_for_eval(args) -> NetConfig:
    if args.config is not None:
        doc = _load_config(args.config)
    else:
        candidate = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "run.json")
        if not os.path.exists(candidate):
            raise SystemExit(
                "eval needs the training run.json next to the checkpoint "
                "or an explicit --config"
            )
        with open(candidate) as fh:
            doc = json.load(fh)
    block = doc.get("net")
    if block is None:
        raise SystemExit("config lacks a 'net' block describing the architecture")
    return NetConfig.from_dict(block)


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    net_config = _net_config_for_eval(args)
    net = build_network(net_config, args.seed)
    load_params_into(net.store, args.checkpoint)
    baseline = None
    if args.baseline is not None:
        with open(args.baseline) as fh:
            baseline = report_from_json(json.load(fh))
    cm = evaluate_model(net, dataset)
    report = group_report(cm, dataset.hierarchy, baseline=baseline)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "report.csv"), "w", newline="") as fh:
        fh.write(report_to_csv(report))
    _write_run_json(args.out, {
        "command": "eval",
        "seed": args.seed,
        "out": args.out,
        "data": str(args.data),
        "checkpoint": str(args.checkpoint),
        "baseline": args.baseline,
        "net": net_config.to_dict(),
    })
    for rank in sorted(report.group_means):
        means = report.group_means[rank]
        print(
            f"G{rank}  precision {means['precision']:.4f}"
            f"  recall {means['recall']:.4f}  iou {means['iou']:.4f}"
        )
    return 0


def cmd_compare(args) -> int:
    with open(args.report_a) as fh:
        base = report_from_json(json.load(fh))
    with open(args.report_b) as fh:
        cand = report_from_json(json.load(fh))
    if set(base.group_means) != set(cand.group_means):
        raise SystemExit("reports cover different groups")
    deltas = {
        rank: {
            m: cand.group_means[rank][m] - base.group_means[rank][m]
            for m in _METRICS
        }
        for rank in sorted(base.group_means)
    }
    for rank in sorted(deltas):
        print(f"G{rank} recall: {100 * deltas[rank]['recall']:+.1f} points")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        doc = {
            "baseline": {f"G{r}": base.group_means[r] for r in sorted(base.group_means)},
            "candidate": {f"G{r}": cand.group_means[r] for r in sorted(cand.group_means)},
            "deltas": {f"G{r}": deltas[r] for r in sorted(deltas)},
        }
        with open(os.path.join(args.out, "compare.json"), "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        lines = ["group,metric,baseline,candidate,delta"]
        for rank in sorted(deltas):
            for m in _METRICS:
                lines.append(
                    f"G{rank},{m},{base.group_means[rank][m]!r},"
                    f"{cand.group_means[rank][m]!r},{deltas[rank][m]!r}"
                )
        with open(os.path.join(args.out, "compare.csv"), "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        _write_run_json(args.out, {
            "command": "compare",
            "out": args.out,
            "report_a": str(args.report_a),
            "report_b": str(args.report_b),
        })
    return 0


def cmd_grad_check(args) -> int:
    results = run_all_checks(args.seed, loss_instances=args.loss_instances)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:28s} max rel error {r.max_rel_error:.3e}  {status}")
    worst = max(r.max_rel_error for r in results)
    print(f"worst: {worst:.3e} over {len(results)} checks")
    if args.out is not None:
        _write_run_json(args.out, {
            "command": "grad-check",
            "seed": args.seed,
            "out": args.out,
            "loss_instances": args.loss_instances,
            "results": [
                {"name": r.name, "max_rel_error": r.max_rel_error, "ok": r.ok}
                for r in results
            ],
        })
    return 1 if failed else 0


def _seed(value: str) -> int:
    n = int(value)
    if n < 0 or n >= 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit an unsigned 64-bit integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ialseg",
        description="Importance-aware segmentation: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    p.add_argument("--config", help="scene config JSON (may include 'count')")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--stream", type=int, help="substream id, e.g. 1 for an eval split")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network and write checkpoints")
    p.add_argument("--config", help="run config JSON (data/net/loss/optim blocks)")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (overrides config)")
    p.add_argument("--loss", choices=("wce", "ial"))
    p.add_argument("--net", choices=("erf", "bierf"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write report CSV/JSON")
    p.add_argument("--config", help="config JSON with the 'net' block; "
                   "defaults to run.json beside the checkpoint")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", help="baseline report.json to diff against")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="diff two report.json files by group")
    p.add_argument("report_a", help="baseline report.json")
    p.add_argument("report_b", help="candidate report.json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grad-check", help="finite-difference gradient self-check")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out")
    p.add_argument("--loss-instances", type=int, default=100)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
