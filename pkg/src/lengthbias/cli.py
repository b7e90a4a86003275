"""Command-line driver: ``lengthbias {train,gradcheck,biasdemo,report}``.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .diagnostics import biasdemo, gradcheck, report, run_logged
from .objectives import Algorithm
from .policy import save_params
from .tasks import load_dataset
from .trainer import NumericalError, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("lengthbias")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_train(config_path: str | Path, out_dir: str | Path, seed: int | None = None, steps: int | None = None) -> int:
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        _err(f"cannot read config {config_path}: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"config {config_path} is not valid JSON: {exc}")
        return EXIT_USAGE
    if not isinstance(raw, dict):
        _err("config must be a JSON object")
        return EXIT_USAGE
    if seed is not None:
        raw["rng_seed"] = seed
    if steps is not None:
        raw["total_steps"] = steps
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        _err(f"bad config: {exc}")
        return EXIT_USAGE
    try:
        dataset = load_dataset(cfg.dataset) if cfg.dataset else None
        val = load_dataset(cfg.val_dataset) if cfg.val_dataset else None
    except OSError as exc:
        _err(f"cannot load dataset: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = run_logged(cfg, out, dataset, val)
        save_params(result.params, out / "policy.txt")
        manifest = {"version": __version__, "rng_seed": cfg.rng_seed, "config": cfg.to_dict()}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except NumericalError as exc:
        _err(f"{exc}; diagnostics: {json.dumps(exc.diagnostics)}")
        (out / "diagnostics.json").write_text(json.dumps(exc.diagnostics, indent=2) + "\n")
        return EXIT_NUMERIC
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    print(f"wrote {len(result.history)} metric records to {out / 'metrics.jsonl'}")
    return EXIT_OK


def cmd_gradcheck(algorithm: str, trials: int, seed: int = 0, clip_heavy: bool = False) -> int:
    if trials < 1:
        _err("--trials must be >= 1")
        return EXIT_USAGE
    res = gradcheck(algorithm, trials, seed, clip_heavy)
    status = "ok" if res.passed else "FAIL"
    print(
        f"{res.algorithm}: {res.trials} trials, max relative error {res.max_rel_error:.3e} "
        f"(worst trial {res.worst_trial}), clipped {res.clipped_items}/{res.total_items} items: {status}"
    )
    return EXIT_OK if res.passed else EXIT_NUMERIC


def cmd_biasdemo(out_dir: str | Path, steps: int | None = None, seed: int = 0) -> int:
    if steps is not None and steps < 1:
        _err("--steps must be >= 1")
        return EXIT_USAGE
    try:
        summary = biasdemo(out_dir, steps, seed)
    except NumericalError as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    if summary["insufficient_steps"]:
        print(f"insufficient steps for trend ({summary['n_steps']} < {2 * 10})")
    for name, run in summary["runs"].items():
        print(
            f"{name}: mean length {run['initial_mean_len']:.2f} -> {run['final_mean_len']:.2f}, "
            f"clipped +{run['clipped_pos']} / -{run['clipped_neg']}"
        )
    if "luspo_over_gspo_length" in summary:
        print(f"final-window length ratio LUSPO/GSPO: {summary['luspo_over_gspo_length']:.3f}")
    return EXIT_OK


def cmd_report(metrics_paths: list[str], out_dir: str | Path) -> int:
    if not metrics_paths:
        _err("need at least one metrics file")
        return EXIT_USAGE
    try:
        written = report(metrics_paths, out_dir)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    print(f"wrote {len(written)} tables to {out_dir}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lengthbias", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training job from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference objective gradients")
    g.add_argument("--algorithm", choices=[a.value for a in Algorithm], required=True)
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--clip-heavy", action="store_true", help="push most items outside the clip band")

    b = sub.add_parser("biasdemo", help="matched GSPO vs LUSPO runs on a length-neutral task")
    b.add_argument("--out", required=True)
    b.add_argument("--steps", type=int)
    b.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="turn metrics files into per-metric curve tables")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _err(str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "train":
        return cmd_train(args.config, args.out, args.seed, args.steps)
    if args.command == "gradcheck":
        return cmd_gradcheck(args.algorithm, args.trials, args.seed, args.clip_heavy)
    if args.command == "biasdemo":
        return cmd_biasdemo(args.out, args.steps, args.seed)
    return cmd_report(args.metrics, args.out)


if __name__ == "__main__":
    sys.exit(main())
