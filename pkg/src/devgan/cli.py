"""Command-line entry point: gen-data, train, translate, bench, gradcheck.

Failures exit nonzero after printing exactly one line to stderr::

    error: <ErrorType>: <message>
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .data import SynthSpec, generate_synthetic, list_images, load_image, save_image
from .evaluate import full_path
from .gradcheck import run_checks
from .networks import count_flops, count_params
from .training import EpochSummary, Trainer, load_domains, summarize, train_epochs

BENCH_FIELDS = ("model", "epoch", "wall_seconds", "cumulative_seconds", "train_step_flops", "params",
                "mean_loss_cyclic", "speedup", "flop_ratio", "epochs_to_threshold")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _print_epoch(summary: EpochSummary) -> None:
    print(summary.line(), flush=True)


def cmd_gen_data(args) -> int:
    spec = SynthSpec(image_size=args.size, count_a=args.count_a, count_b=args.count_b,
                     test_count_a=args.test_count_a, test_count_b=args.test_count_b, seed=args.seed)
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    if args.model:
        cfg = dataclasses.replace(cfg, model=args.model)
    reports, trainer = train_epochs(cfg, resume=args.resume, on_epoch=_print_epoch)
    print(f"steps={len(reports)} checkpoint={Path(cfg.out_dir) / 'checkpoint.bin'}")
    return 0


def cmd_translate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(Path(args.input), "_fakeB")]
    if args.pass_through_b is not None:
        b_dir = args.pass_through_b
        if b_dir == "auto":
            src = Path(args.input)
            b_dir = src.with_name(src.name[:-1] + "B") if src.name.endswith("A") else src
        jobs.append((Path(b_dir), "_passB"))
    written = 0
    for directory, suffix in jobs:
        paths = list_images(directory)
        if not paths:
            raise FileNotFoundError(f"no .ppm images in {directory}")
        pixels = np.stack([load_image(p).pixels for p in paths])
        for path, out in zip(paths, full_path(state.models, pixels)):
            save_image(out, out_dir / f"{path.stem}{suffix}.ppm")
            written += 1
    print(f"wrote {written} images to {out_dir}")
    return 0


def _epochs_to_threshold(losses: list[float], threshold: float) -> str:
    for i, value in enumerate(losses, 1):
        if value <= threshold:
            return str(i)
    return ""


def run_bench(cfg: TrainConfig, epochs: int, out_path, compare_dev_term_b: bool = False) -> dict:
    """Train proposed and baseline side by side, interleaving epochs; writes the report CSV."""
    variants = {"proposed": dataclasses.replace(cfg, model="proposed"),
                "baseline": dataclasses.replace(cfg, model="baseline")}
    if compare_dev_term_b:
        variants["proposed_no_dev_b"] = dataclasses.replace(
            cfg, model="proposed", weights=dataclasses.replace(cfg.weights, use_dev_term_b=False))
    data_a, data_b = load_domains(cfg.data_root, "train")
    trainers = {name: Trainer(c) for name, c in variants.items()}
    rows = []
    times = {name: [] for name in trainers}
    cyc = {name: [] for name in trainers}
    for epoch in range(epochs):
        for name, trainer in trainers.items():
            reports, seconds = trainer.run_epoch(data_a, data_b)
            summary = summarize(epoch, reports, seconds)
            times[name].append(seconds)
            cyc[name].append(summary.mean_losses["loss_cyclic"])
            print(f"model={name} {summary.line()}", flush=True)
            rows.append({
                "model": name, "epoch": epoch + 1, "wall_seconds": f"{seconds:.4f}",
                "cumulative_seconds": f"{sum(times[name]):.4f}",
                "train_step_flops": count_flops(cfg.arch, trainer.cfg.model, "train_step"),
                "params": count_params(trainer.models),
                "mean_loss_cyclic": f"{summary.mean_losses['loss_cyclic']:.6f}",
            })
    flop_ratio = count_flops(cfg.arch, "baseline", "train_step") / count_flops(cfg.arch, "proposed", "train_step")
    speedup = sum(times["baseline"]) / sum(times["proposed"])
    thresholds = {n: _epochs_to_threshold(cyc[n], cfg.loss_threshold) for n in ("proposed", "baseline")}
    rows.append({
        "model": "summary", "epoch": epochs,
        "wall_seconds": f"{sum(times['proposed']):.4f}",
        "cumulative_seconds": f"{sum(times['baseline']):.4f}",
        "speedup": f"{speedup:.4f}", "flop_ratio": f"{flop_ratio:.4f}",
        "epochs_to_threshold": f"proposed:{thresholds['proposed'] or 'none'};"
                               f"baseline:{thresholds['baseline'] or 'none'}",
    })
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"speedup={speedup:.4f}x flop_ratio={flop_ratio:.4f}")
    return {"speedup": speedup, "flop_ratio": flop_ratio, "times": times,
            "epochs_to_threshold": thresholds, "rows": rows}


def cmd_bench(args) -> int:
    cfg = TrainConfig.load(args.config)
    run_bench(cfg, args.epochs, args.out, args.compare_dev_term_b)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_checks(args.op)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.op] = max(worst.get(r.op, 0.0), r.max_rel_err)
    failed = sorted({r.op for r in results if not r.passed})
    print(f"{'op':<32} {'max_rel_err':>12}  status")
    for op, err in worst.items():
        print(f"{op:<32} {err:>12.3e}  {'FAIL' if op in failed else 'ok'}")
    if failed:
        raise AssertionError(f"gradient check failed for {', '.join(failed)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="devgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic disk dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count-a", type=int, default=200)
    p.add_argument("--count-b", type=int, default=200)
    p.add_argument("--test-count-a", type=int, default=30)
    p.add_argument("--test-count-b", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the proposed or baseline model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", choices=("proposed", "baseline"))
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a folder of A images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--pass-through-b", nargs="?", const="auto", default=None, metavar="B_DIR",
                   help="also run B images through the full path (default: sibling *B folder)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("bench", help="per-epoch timing of proposed vs baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--compare-dev-term-b", action="store_true",
                   help="also time the proposed model with deviation term b disabled")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every kernel and loss")
    p.add_argument("--op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DEVGAN_LOG", "WARNING"))
    try:
        threads = int(os.environ.get("DEVGAN_THREADS", "1"))
        args = build_parser().parse_args(argv)
        with threadpool_limits(limits=max(threads, 1)):
            return args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1


if __name__ == "__main__":
    sys.exit(main())
