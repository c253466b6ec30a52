"""Command line: ``narrowvae {train,sweep,reconstruct,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import TrainConfig, load_config
from .data import generate_shapes, load_idx
from .runner import run_reconstruct, run_training, sweep


def _dataset_overrides(value: str | None) -> dict:
    # "shapes", "shapes:COUNT", "shapes:COUNT:SEED", or an IDX image path.
    if value is None:
        return {}
    if value == "shapes" or value.startswith("shapes:"):
        parts = value.split(":")
        out = {"dataset": "shapes"}
        if len(parts) > 1:
            out["dataset_count"] = int(parts[1])
        if len(parts) > 2:
            out["dataset_seed"] = int(parts[2])
        return out
    return {"dataset": value}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--dataset", help="'shapes[:COUNT[:SEED]]' or a path to an IDX image file")
    p.add_argument("--count", type=int, help="samples to render, or MNIST prefix to keep (0 = all)")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--max-batches", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_config(args) -> TrainConfig:
    overrides = {
        "latent_dim": args.latent_dim,
        "max_batches": args.max_batches,
        "seed": args.seed,
        "output_dir": args.out,
        "dataset_count": args.count,
        **_dataset_overrides(args.dataset),
    }
    if getattr(args, "tau", None) is not None and not isinstance(args.tau, list):
        overrides["tau"] = args.tau
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    cfg = build_config(args)
    run = run_training(cfg, resume=args.resume, keep_metrics=False)
    print(f"trained {run.state.batch_index} batches; open gates {run.open_gates()}/{cfg.latent_dim}; "
          f"moving-average error {run.ma_error}; outputs in {cfg.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    rows = sweep(cfg, args.tau, jobs=args.jobs)
    print("tau,open_gates,ma_mse")
    for tau, open_gates, ma in rows:
        print(f"{tau:g},{open_gates},{ma}")
    return 0


def cmd_reconstruct(args) -> int:
    if args.input.startswith("shapes"):
        parts = args.input.split(":")
        count = int(parts[1]) if len(parts) > 1 else 16
        seed = int(parts[2]) if len(parts) > 2 else 0
        ds = generate_shapes(count, np.random.default_rng(seed))
    else:
        ds = load_idx(args.input)
    err = run_reconstruct(args.checkpoint, ds, args.out, limit=args.limit)
    print(f"reconstructed {len(err)} images; mean error {float(np.mean(err)):.4f}; outputs in {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    ok = run_all(trials=args.trials, samples=args.samples, seed=args.seed)
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narrowvae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="one run per tolerance, writes pareto.csv")
    _common(p)
    p.add_argument("--tau", type=float, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reconstruct", help="reconstruct images with hard-masked gates")
    p.add_argument("checkpoint")
    p.add_argument("input", help="IDX image file or 'shapes[:COUNT[:SEED]]'")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify", help="estimator and gradient self-checks")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
