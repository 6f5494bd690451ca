"""Command line entry point: ``pals {train,evaluate,sweep,synth}``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .checkpoint import load_checkpoint
from .data import synth_series, write_csv
from .harness import ExperimentConfig, evaluate, load_config, prepare_data, tomllib, train, write_outputs

log = logging.getLogger("pals")

# flag -> dotted config key
FLAG_KEYS = {
    "data": "data.path",
    "model": "model.kind",
    "controller": "controller.kind",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "lr",
    "seed": "seed",
    "patience": "patience",
    "pals_lambda": "controller.lam",
    "pals_gamma": "controller.gamma",
    "delta_t": "controller.delta_t",
    "lookback": "model.lookback",
    "horizon": "model.horizon",
}


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_experiment_flags(p):
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--data", help="CSV dataset (overrides data.path)")
    p.add_argument("--model", choices=["dlinear", "mlp", "mini_transformer"])
    p.add_argument("--controller", choices=["dense", "pals", "gmp", "granet", "rigl"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--delta-t", dest="delta_t", type=int)
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set controller.s_max=0.8")


def build_config(args, extra=None):
    base = load_config(args.config) if args.config else None
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value.strip())
    overrides.update(extra or {})
    if "data.path" in overrides:
        overrides["data.synth"] = None
    if base is None:
        if "data.path" not in overrides:
            raise ValueError("either --config or --data is required")
        d = {}
        for key, value in overrides.items():
            node = d
            *parents, leaf = key.split(".")
            for part in parents:
                node = node.setdefault(part, {})
            node[leaf] = value
        return ExperimentConfig.from_dict(d)
    return base.replace(**overrides)


def summary_line(report):
    return (f"MSE={report.test['mse']:.4f} MAE={report.test['mae']:.4f} "
            f"S={report.checkpoint_sparsity:.3f} params={report.params['nonzero']} "
            f"FLOPs={report.flops['test_total']} epochs={report.epochs_run}")


def cmd_train(args):
    cfg = build_config(args)
    report = train(cfg)
    paths = write_outputs(report, args.out)
    print(summary_line(report))
    log.info("wrote %s", ", ".join(paths.values()))
    return 0


def cmd_evaluate(args):
    model, scaler, extra = load_checkpoint(args.checkpoint)
    if "experiment" not in extra:
        raise ValueError(f"{args.checkpoint}: no experiment config stored in checkpoint")
    cfg = ExperimentConfig.from_dict(extra["experiment"])
    if args.data:
        cfg = cfg.replace(**{"data.path": args.data, "data.synth": None})
    data = prepare_data(cfg, scaler=scaler)
    result = evaluate(model, getattr(data, args.segment))
    print(json.dumps(result, sort_keys=True))
    return 0


def _sweep_run(job):
    cfg, out_dir = job
    report = train(cfg)
    write_outputs(report, out_dir)
    return report.to_dict(include_wall_time=False)


def cmd_sweep(args):
    lams = args.lam or [1.05, 1.1, 1.2]
    gammas = args.gamma or [1.05, 1.1, 1.2]
    seeds = args.seeds or [None]
    jobs, keys = [], []
    for lam, gamma, seed in itertools.product(lams, gammas, seeds):
        extra = {"controller.lam": lam, "controller.gamma": gamma, "controller.kind": "pals"}
        if seed is not None:
            extra["seed"] = seed
        cfg = build_config(args, extra)
        name = f"lam{lam}_gamma{gamma}_seed{cfg.seed}"
        jobs.append((cfg, os.path.join(args.out, name)))
        keys.append((lam, gamma, cfg.seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_run, jobs))
    else:
        results = [_sweep_run(j) for j in jobs]

    rows = []
    for (lam, gamma, seed), r in zip(keys, results):
        rows.append({"lambda": lam, "gamma": gamma, "seed": seed, "mse": r["test"]["mse"],
                     "mae": r["test"]["mae"], "sparsity": r["checkpoint_sparsity"],
                     "nonzero_params": r["params"]["nonzero"], "flops": r["flops"]["test_total"],
                     "epochs": r["epochs_run"]})
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)

    header = f"{'lambda':>7} {'gamma':>6} {'seed':>5} {'MSE':>8} {'MAE':>8} {'S':>6} {'params':>8} {'epochs':>6}"
    print(header)
    for r in rows:
        print(f"{r['lambda']:>7} {r['gamma']:>6} {r['seed']:>5} {r['mse']:>8.4f} {r['mae']:>8.4f} "
              f"{r['sparsity']:>6.3f} {r['nonzero_params']:>8} {r['epochs']:>6}")
    return 0


def cmd_synth(args):
    series = synth_series(args.seed, args.length, args.vars, args.period, args.trend, args.noise)
    write_csv(series, args.out)
    print(f"wrote {args.out} ({args.length} rows, {args.vars} variables)")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="pals", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write report/trace/predictions")
    _add_experiment_flags(p)
    p.add_argument("--lambda", dest="pals_lambda", type=float, help="PALS loss freedom factor")
    p.add_argument("--gamma", dest="pals_gamma", type=float, help="PALS pruning rate factor")
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved checkpoint on one segment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="CSV dataset (defaults to the path stored in the checkpoint)")
    p.add_argument("--segment", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over PALS lambda x gamma (x seeds)")
    _add_experiment_flags(p)
    p.add_argument("--lambda", dest="lam", type=_float_list)
    p.add_argument("--gamma", type=_float_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic sine + trend + noise CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--vars", type=int, default=3)
    p.add_argument("--period", type=float, default=24.0)
    p.add_argument("--trend", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"pals {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
