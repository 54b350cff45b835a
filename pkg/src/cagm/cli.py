"""Command-line entry point.

Subcommands mirror the pipeline stages (gen-data, train, predict,
evaluate), plus sweep and the reproduce-* conveniences that regenerate
the reported tables and figures as CSV files. Plotting is out of scope:
the CSVs are the deliverable.

The CAGM_OUT_ROOT environment variable relocates default output
directories; an explicit --out always wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import rng as rng_mod
from .errors import ConfigError
from .experiments import (
    EXPERIMENT_NAMES,
    SweepSpec,
    _build_model,
    _build_training_data,
    _EVALUATORS,
    _ensure_out,
    _json_safe,
    _write_history,
    apply_overrides,
    generate_data,
    grid_moments,
    load_config,
    multifidelity_predict,
    preset,
    reproduce_figure,
    reproduce_table,
    run,
    save_config,
    sweep,
)
from .burgers import normalize_time
from .model import train
from .storage import load_checkpoint, save_checkpoint, write_csv
from .version import VERSION


def _out_root() -> str:
    return os.environ.get("CAGM_OUT_ROOT", ".")


def _resolve_config(args):
    if getattr(args, "config", None):
        config = load_config(args.config)
    elif getattr(args, "preset", None):
        config = preset(args.preset)
    else:
        raise ConfigError("provide --config PATH or --preset NAME")
    if getattr(args, "seed", None) is not None:
        config.seed = int(args.seed)
        config.train.seed = int(args.seed)
    if getattr(args, "out", None):
        config.out_dir = args.out
    elif not os.path.isabs(config.out_dir):
        config.out_dir = os.path.join(_out_root(), config.out_dir)
    if getattr(args, "set", None):
        overrides = list(args.set)
        if args.out:
            overrides.append(f"experiment.out_dir={config.out_dir}")
        config = apply_overrides(config, overrides)
    config.validate()
    return config


def _add_common(parser, with_preset: bool = True):
    parser.add_argument("--config", help="INI config file")
    if with_preset:
        parser.add_argument(
            "--preset", choices=EXPERIMENT_NAMES, help="named experiment preset"
        )
    parser.add_argument("--seed", type=int, default=None, help="experiment seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config entry (repeatable)",
    )


def _cmd_gen_data(args) -> int:
    config = _resolve_config(args)
    t0 = time.time()
    generate_data(config)
    print(f"dataset for {config.name} -> {config.out_dir} ({time.time() - t0:.1f}s)")
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    out = _ensure_out(config)
    save_config(config, os.path.join(out, "config.ini"))
    ds, _ = generate_data(config)
    model = _build_model(config, ds)
    t0 = time.time()
    model, history = train(model, ds, config.train)
    _write_history(history, out, config)
    save_checkpoint(
        model,
        os.path.join(out, "checkpoint.json"),
        train_config=config.train,
        final_losses={
            "d_loss": float(history.d_loss[-1]),
            "g_loss": float(history.g_loss[-1]),
        },
    )
    print(
        f"trained {config.name} for {config.train.iterations} iterations in "
        f"{time.time() - t0:.1f}s; final d_loss {history.d_loss[-1]:.4f}, "
        f"g_loss {history.g_loss[-1]:.4f} -> {out}"
    )
    return 0


def _checkpoint_path(args, config) -> str:
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    return os.path.join(config.out_dir, "checkpoint.json")


def _cmd_predict(args) -> int:
    config = _resolve_config(args)
    model = load_checkpoint(_checkpoint_path(args, config))
    out = _ensure_out(config)
    rng = rng_mod.stream(config.seed, rng_mod.PREDICT, 0)
    n_mc = config.metrics.n_mc
    path = os.path.join(out, "predictions.csv")
    if config.name == "burgers":
        ds, ctx = _build_training_data(config)
        spec = ctx["burgers_spec"]
        y_scale = ctx["y_scale"]
        rows = []
        for t in ds.meta["eval_times"]:
            lab = np.array([[float(normalize_time(t, spec))]])
            mean_s, var_s = grid_moments(model, lab, n_mc, rng)
            for i in range(spec.n_x):
                rows.append(
                    (t, spec.grid[i], mean_s[0, i] * y_scale,
                     float(np.sqrt(var_s[0, i])) * y_scale)
                )
        write_csv(path, ["t", "x", "pred_mean", "pred_sigma"], rows,
                  comment=config.provenance())
    elif config.name == "multifidelity":
        ds, ctx = _build_training_data(config)
        grid = np.linspace(0.0, 1.0, config.metrics.n_test_locations)
        per_path = max(1, n_mc // config.metrics.n_paths)
        mean, var = multifidelity_predict(
            model, ctx["mf_spec"], grid, config.metrics.n_paths, per_path, rng
        )
        write_csv(path, ["x", "pred_mean", "pred_sigma"],
                  zip(grid, mean, np.sqrt(var)), comment=config.provenance())
    else:
        lo, hi = (-2.0, 2.0) if config.name.startswith("regression") else (0.0, 1.0)
        grid = np.linspace(lo, hi, config.metrics.n_test_locations)
        mean, var = grid_moments(model, grid[:, None], n_mc, rng)
        write_csv(path, ["x", "pred_mean", "pred_sigma"],
                  zip(grid, mean[:, 0], np.sqrt(var[:, 0])), comment=config.provenance())
    print(f"predictions -> {path}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    model = load_checkpoint(_checkpoint_path(args, config))
    out = _ensure_out(config)
    ds, ctx = _build_training_data(config)
    report = {
        "experiment": config.name,
        "seed": config.seed,
        "data_seed": config.data_seed,
        "config_hash": config.config_hash(),
        "version": VERSION,
    }
    existing = os.path.join(out, "report.json")
    if os.path.exists(existing):
        with open(existing) as fh:
            report = {**json.load(fh), **report}
    report.update(_EVALUATORS[config.name](config, model, ds, ctx, out))
    with open(existing, "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
    headline = {
        k: v for k, v in report.items()
        if k in ("avg_reverse_kl", "coverage_2sigma", "sigma_at_x0",
                 "rel_l2_mean_all", "pearson_sigma_all")
    }
    print(f"evaluation of {config.name}: {headline} -> {existing}")
    return 0


def _cmd_run(args) -> int:
    config = _resolve_config(args)
    t0 = time.time()
    report = run(config)
    print(f"run {config.name} finished in {time.time() - t0:.1f}s -> {config.out_dir}")
    for key in ("avg_reverse_kl", "coverage_2sigma", "sigma_at_x0",
                "rel_l2_mean_all", "pearson_sigma_all", "diverged"):
        if key in report:
            print(f"  {key}: {report[key]}")
    return 0


def _parse_grid(parameter: str, text: str):
    cells = [c for c in text.split(",") if c.strip()]
    if parameter == "lambda":
        return tuple(float(c) for c in cells)
    pairs = []
    for c in cells:
        a, _, b = c.partition("x")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def _cmd_sweep(args) -> int:
    config = _resolve_config(args)
    spec = SweepSpec(
        parameter=args.sweep,
        grid=_parse_grid(args.sweep, args.grid) if args.grid else (),
        seeds=tuple(int(s) for s in args.seeds.split(",")),
    )
    t0 = time.time()
    result = sweep(config, spec, parallel=args.parallel)
    print(f"sweep {args.sweep} over {len(spec.grid)} cells x {len(spec.seeds)} seeds "
          f"in {time.time() - t0:.1f}s -> {result['out_dir']}")
    for label, median, mean, n_ok, n_div in result["summary"]:
        print(f"  {label}: median {median:.4g}, mean {mean:.4g}, "
              f"ok {n_ok}, diverged {n_div}")
    return 0


def _cmd_reproduce_table(args) -> int:
    out = args.out or os.path.join(_out_root(), "runs", f"table_{args.which}")
    t0 = time.time()
    result = reproduce_table(
        args.which, out, seeds=tuple(int(s) for s in args.seeds.split(",")),
        parallel=args.parallel,
    )
    print(f"table {args.which} in {time.time() - t0:.1f}s -> {out}/sweep_summary.csv")
    for label, median, mean, n_ok, n_div in result["summary"]:
        print(f"  {label}: median {median:.4g} (n={n_ok}, diverged={n_div})")
    return 0


def _cmd_reproduce_figure(args) -> int:
    out = args.out or os.path.join(_out_root(), "runs", f"figure_{args.which}")
    t0 = time.time()
    reports = reproduce_figure(args.which, out, seed=args.seed or 0,
                               parallel=args.parallel)
    print(f"figure {args.which} data in {time.time() - t0:.1f}s -> {out}")
    for report in reports:
        print(f"  {report['experiment']}: diverged={report['diverged']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cagm",
        description="Conditional adversarial generative models on synthetic benchmarks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="write the dataset files for a config")
    _add_common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = subs.add_parser("train", help="train a model and write checkpoint + history")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("predict", help="grid predictions from a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.json)")
    p.set_defaults(func=_cmd_predict)

    p = subs.add_parser("evaluate", help="metrics and report from a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.json)")
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser("run", help="full pipeline: data, train, predict, evaluate")
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = subs.add_parser("sweep", help="grid sweep over lambda, architecture, or update ratios")
    _add_common(p)
    p.add_argument("--sweep", required=True, choices=("lambda", "architecture", "kg_kd"))
    p.add_argument("--grid", help="comma list; pairs as AxB (e.g. 3x100 or 1x5)")
    p.add_argument("--seeds", default="0,1,2", help="comma list of seeds per cell")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("reproduce-table", help="regenerate a reported table as CSV")
    p.add_argument("which", type=int, choices=(2, 3, 4))
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=_cmd_reproduce_table)

    p = subs.add_parser("reproduce-figure", help="regenerate a figure's data as CSV")
    p.add_argument("which", type=int, choices=(3, 4, 7))
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=_cmd_reproduce_figure)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
