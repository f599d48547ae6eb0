"""Command-line entry point.

    segtran gen-data  --nodes 20 --paired 150 --unpaired-source 150 --unpaired-target 150 --test 100 --out data/
    segtran train     --data data/ --out run/ [--config cfg.json] [--set epochs.finetune=50]
    segtran eval      --data data/ --checkpoint run/checkpoint
    segtran ablate    --data data/ --seeds 3 --out abl/
    segtran sweep-ratio       --ratios 0.1,0.6 --seeds 3 --out ratio/
    segtran sweep-sensitivity --lambdas 0.3,1.0 --mus 1.0 --seeds 3 --out sens/
    segtran case-study --data data/ --checkpoint run/checkpoint --index 0 --out case/

Exit status: 0 on success, 1 on invalid input or configuration, 2 when a
run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

from .config import ConfigError, TrainConfig, resolve_config, write_config
from .graphs import GraphFormatError, GraphValidationError, build_ba_dataset, load_dataset, save_dataset
from .numerics import CheckpointError

log = logging.getLogger("segtran")

COMMANDS = ("gen-data", "train", "eval", "ablate", "sweep-ratio", "sweep-sensitivity", "case-study")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one value")
    return vals


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of dotted config keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--lambda", dest="lam", metavar="LAMBDA", help="reconstruction weight")
    p.add_argument("--mu", help="MI weight")
    p.add_argument("--delta", help="non-edge weight in the reconstruction mask")
    p.add_argument("--lr", help="Adam learning rate")
    p.add_argument("--seed", help="master seed")


def _seeds_arg(p):
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (master seed, +1, ...)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segtran", description="Semi-supervised graph-to-graph translation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a BA dataset directory")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--paired", type=int, default=150)
    p.add_argument("--unpaired-source", type=int, default=150)
    p.add_argument("--unpaired-target", type=int, default=150)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run the four training phases and evaluate")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", metavar="PREFIX", help="continue fine-tuning from a checkpoint prefix")
    _config_args(p)

    p = sub.add_parser("eval", help="score a checkpoint on the test pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, metavar="PREFIX")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None, help="anchor seed (default: the checkpoint's)")

    p = sub.add_parser("ablate", help="train every ablation variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _seeds_arg(p)
    _config_args(p)

    p = sub.add_parser("sweep-ratio", help="vary the unpaired-to-paired ratio")
    p.add_argument("--ratios", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    p.add_argument("--paired", type=int, default=150)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--out", required=True)
    _seeds_arg(p)
    _config_args(p)

    p = sub.add_parser("sweep-sensitivity", help="λ/μ grid from shared pretraining")
    p.add_argument("--lambdas", type=_floats, default=[0.3, 0.7, 1.0, 1.3])
    p.add_argument("--mus", type=_floats, default=[0.3, 0.7, 1.0, 1.3])
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--paired", type=int, default=150)
    p.add_argument("--unpaired-source", type=int, default=150)
    p.add_argument("--unpaired-target", type=int, default=150)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--out", required=True)
    _seeds_arg(p)
    _config_args(p)

    p = sub.add_parser("case-study", help="export DOT files for one test pair")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, metavar="PREFIX")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key, attr in (("lambda", "lam"), ("mu", "mu"), ("delta", "delta"), ("lr", "lr"), ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def _open_run_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
    # timestamps go to run.log only, so every other file is reproducible byte for byte
    handler = logging.FileHandler(os.path.join(path, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("segtran")
    root.handlers = [h for h in root.handlers if not isinstance(h, logging.FileHandler)]
    root.addHandler(handler)
    root.setLevel(logging.INFO)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolved(args) -> TrainConfig:
    return resolve_config(args.config, _overrides(args))


# --- commands ------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    counts = {
        "paired_train": args.paired,
        "unpaired_source": args.unpaired_source,
        "unpaired_target": args.unpaired_target,
        "paired_test": args.test,
    }
    if args.nodes < 1 or any(v < 0 for v in counts.values()) or args.hops < 1:
        raise ConfigError("--nodes and --hops must be positive and counts non-negative")
    params = {"generator": "ba", "nodes": args.nodes, "hops": args.hops, "seed": args.seed, "counts": counts}
    _open_run_dir(args.out)
    _write_json(os.path.join(args.out, "config.json"), params)
    ds = build_ba_dataset(counts, n_nodes=args.nodes, seed=args.seed, hops=args.hops)
    save_dataset(ds, args.out, {k: v for k, v in params.items() if k != "counts"})
    log.info("wrote dataset %s: %s", args.out, counts)
    print(json.dumps(ds.counts(), sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .evaluation import evaluate_test
    from .training import Trainer

    cfg = _resolved(args)
    _open_run_dir(args.out)
    write_config(cfg, os.path.join(args.out, "config.json"), {"data": os.path.abspath(args.data)})
    ds = load_dataset(args.data)
    if not ds.paired_test:
        raise ConfigError(f"{args.data}: dataset has no paired_test graphs to evaluate")
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, ds)
        if trainer.cfg != cfg:
            log.warning("resuming with the checkpoint's configuration; command-line overrides ignored")
        cfg = trainer.cfg
        untrained = None
        log.info("resumed at fine-tune epoch %d", trainer.finetune_epoch)
        trainer.finetune(on_epoch=lambda t: log.info("finetune epoch %d done", t.finetune_epoch))
    else:
        trainer = Trainer(ds, cfg)
        untrained = evaluate_test(trainer.model, ds.paired_test, cfg)
        log.info("untrained test metrics: %s", untrained)
        trainer.run()
    metrics = evaluate_test(trainer.model, ds.paired_test, cfg)
    log.info("test metrics: %s (wall clock %.1fs)", metrics, trainer.report.wall_clock)
    trainer.report.write_csv(os.path.join(args.out, "report.csv"))
    final = {"mse": metrics.mse, "mape": metrics.mape}
    if untrained is not None:
        final.update({"untrained_mse": untrained.mse, "untrained_mape": untrained.mape})
    _write_json(os.path.join(args.out, "final_metrics.json"), final)
    trainer.save_checkpoint(os.path.join(args.out, "checkpoint"))
    print(json.dumps(final, sort_keys=True))
    return 0


def _load_trainer(prefix, data):
    from .training import Trainer

    return Trainer.from_checkpoint(prefix, load_dataset(data))


def cmd_eval(args) -> int:
    from .evaluation import evaluate_test

    tr = _load_trainer(args.checkpoint, args.data)
    if not tr.dataset.paired_test:
        raise ConfigError(f"{args.data}: dataset has no paired_test graphs")
    m = evaluate_test(tr.model, tr.dataset.paired_test, tr.cfg, seed=args.seed)
    out = {"mse": m.mse, "mape": m.mape}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "metrics.json"), out)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .experiments import run_ablation_suite, seed_list

    cfg = _resolved(args)
    seeds = seed_list(cfg.seed, args.seeds)
    _open_run_dir(args.out)
    write_config(cfg, os.path.join(args.out, "config.json"),
                 {"data": os.path.abspath(args.data), "seeds": seeds})
    ds = load_dataset(args.data)
    table = run_ablation_suite(ds, cfg, seeds, threads=args.threads)
    table.write_csv(os.path.join(args.out, "ablation.csv"))
    _write_json(os.path.join(args.out, "ablation.json"), {
        "seeds": seeds,
        "rows": [{"variant": r.label, "mse": r.mse, "mape": r.mape, "untrained_mse": r.untrained_mse}
                 for r in table.rows],
    })
    sys.stdout.write(table.to_csv())
    return 0


def cmd_sweep_ratio(args) -> int:
    from .experiments import run_ratio_sweep, seed_list

    cfg = _resolved(args)
    seeds = seed_list(cfg.seed, args.seeds)
    _open_run_dir(args.out)
    write_config(cfg, os.path.join(args.out, "config.json"), {
        "ratios": args.ratios, "seeds": seeds, "paired": args.paired, "test": args.test, "nodes": args.nodes})
    res = run_ratio_sweep(cfg, args.ratios, seeds, n_paired=args.paired, n_test=args.test,
                          n_nodes=args.nodes, threads=args.threads)
    res.write_csv(os.path.join(args.out, "sweep.csv"))
    sys.stdout.write(res.to_csv())
    return 0


def cmd_sweep_sensitivity(args) -> int:
    from .experiments import run_sensitivity_grid, seed_list

    cfg = _resolved(args)
    seeds = seed_list(cfg.seed, args.seeds)
    counts = {"paired_train": args.paired, "unpaired_source": args.unpaired_source,
              "unpaired_target": args.unpaired_target, "paired_test": args.test}
    _open_run_dir(args.out)
    write_config(cfg, os.path.join(args.out, "config.json"), {
        "lambdas": args.lambdas, "mus": args.mus, "seeds": seeds, "counts": counts, "nodes": args.nodes})
    res = run_sensitivity_grid(cfg, args.lambdas, args.mus, seeds, counts=counts,
                               n_nodes=args.nodes, threads=args.threads)
    res.write_csv(os.path.join(args.out, "sweep.csv"))
    sys.stdout.write(res.to_csv())
    return 0


def cmd_case_study(args) -> int:
    from .evaluation import export_case_study

    tr = _load_trainer(args.checkpoint, args.data)
    test = tr.dataset.paired_test
    if not 0 <= args.index < len(test):
        raise ConfigError(f"--index {args.index} out of range for {len(test)} test pairs")
    buckets = export_case_study(tr.model, test[args.index], args.out, tr.cfg, seed=args.seed)
    print(json.dumps({k: len(v) for k, v in buckets.items()}, sort_keys=True))
    return 0


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-ratio": cmd_sweep_ratio,
    "sweep-sensitivity": cmd_sweep_sensitivity,
    "case-study": cmd_case_study,
}

_INPUT_ERRORS = (ConfigError, GraphFormatError, GraphValidationError, CheckpointError, FileNotFoundError,
                 NotADirectoryError, json.JSONDecodeError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "segtran: error: a command is required")
        if getattr(args, "threads", 1) < 1 or getattr(args, "seeds", 1) < 1:
            raise UsageError(parser.format_usage() + "segtran: error: --threads and --seeds must be >= 1")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"segtran {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        log.exception("run failed")
        print(f"segtran {args.command}: run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
