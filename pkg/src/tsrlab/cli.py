"""Command-line entry point: ``tsrlab run | analytic | plot | validate-layout``."""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .experiment import METRICS, ExperimentConfig, aggregate, run_revaluation
from .gridworld import ACTION_NAMES, Gridworld, LayoutError, load_layout
from .sr_analytic import analytic_sr, analytic_tsr, model_from_env, sr_field


def seed_workers() -> int:
    raw = os.environ.get("TSRLAB_SEED_WORKERS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise fileio.ConfigError(f"TSRLAB_SEED_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise fileio.ConfigError("TSRLAB_SEED_WORKERS must be at least 1")
    return n


def _job(args):
    cfg, seed = args
    return run_revaluation(cfg, seed)


def run_jobs(configs: list[ExperimentConfig], workers: int) -> list[list]:
    """Run every (config, seed) pair; results are grouped per config in seed order."""
    jobs = [(cfg, seed) for cfg in configs for seed in cfg.seeds]
    if workers == 1 or len(jobs) == 1:
        flat = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            flat = list(pool.map(_job, jobs))
    out, i = [], 0
    for cfg in configs:
        out.append(flat[i:i + len(cfg.seeds)])
        i += len(cfg.seeds)
    return out


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / Path(str(cfg.layout)).stem / cfg.agent


def cmd_run(args) -> int:
    run = fileio.load_run_config(args.config, args.set)
    load_layout(run.experiment.layout)  # fail before any work starts
    configs = [run.for_agent(a) for a in run.agents]
    results = run_jobs(configs, seed_workers())
    # all writes happen after the jobs finish
    for cfg, runs in zip(configs, results):
        d = output_dir(cfg)
        d.mkdir(parents=True, exist_ok=True)
        for seed, records in zip(cfg.seeds, runs):
            (d / f"seed_{seed}.csv").write_text(fileio.per_seed_csv(records), encoding="utf-8")
        (d / "aggregate.csv").write_text(fileio.aggregate_csv(aggregate(runs)), encoding="utf-8")
        print(f"wrote {len(runs)} seed files and aggregate.csv to {d}")
    return 0


def _parse_action(text: str) -> int:
    text = text.strip().lower()
    if text in ACTION_NAMES:
        return ACTION_NAMES.index(text)
    if text.isdigit() and int(text) < 4:
        return int(text)
    raise fileio.ConfigError(f"unknown action {text!r}; use one of {', '.join(ACTION_NAMES)}")


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        r, c = (int(p) for p in text.split(","))
    except ValueError:
        raise fileio.ConfigError(f"target must be 'row,col', got {text!r}") from None
    return r, c


def cmd_analytic(args) -> int:
    env = Gridworld(load_layout(args.layout))
    if not 0.0 <= args.gamma < 1.0:
        raise fileio.ConfigError(f"gamma must lie in [0, 1), got {args.gamma}")
    if args.j < 1:
        raise fileio.ConfigError(f"j must be at least 1, got {args.j}")
    action = _parse_action(args.action)
    if args.target is None:
        target = env.positions[env.n_states // 2]
    else:
        target = _parse_cell(args.target)
    if target not in env.index:
        raise fileio.ConfigError(f"target {target} is not an open cell of the layout")
    model = model_from_env(env)
    if args.j >= 2:
        M = analytic_tsr(model, args.gamma, args.j)[action]
        title = f"t-SR, gamma={args.gamma}, j={args.j}, {ACTION_NAMES[action]}"
    else:
        M = analytic_sr(model, args.gamma)
        title = f"SR, gamma={args.gamma}"
    field = sr_field(M, env.index[target], env)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".csv").write_text(fileio.field_csv(field), encoding="utf-8")
    fileio.plot_field(field, title, out.with_suffix(".svg"), target)
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.svg')}")
    return 0


def cmd_plot(args) -> int:
    groups: dict[str, list] = {}
    for i, name in enumerate(args.csvs):
        path = Path(name)
        data = fileio.read_aggregate_csv(path.read_text(encoding="utf-8"))
        label = args.labels[i] if args.labels else path.parent.name
        env = args.env or path.parent.parent.name or "results"
        groups.setdefault(env, []).append((label, data))
    out = Path(args.out)
    written = 0
    for env, series in groups.items():
        metrics = [m for m in METRICS if any(m in d for _, d in series)]
        metrics += sorted({m for _, d in series for m in d} - set(metrics))
        for metric in metrics:
            present = [(label, d[metric]) for label, d in series if metric in d]
            fileio.plot_metric(present, metric, f"{env}: {metric}", out / f"{env}_{metric}.svg")
            written += 1
    print(f"wrote {written} plots to {out}")
    return 0


def cmd_validate(args) -> int:
    status = 0
    for name in args.layouts:
        try:
            layout = load_layout(name)
        except (LayoutError, OSError) as exc:
            print(f"{name}: invalid: {exc}", file=sys.stderr)
            status = 1
            continue
        unreachable = layout.unreachable_cells()
        if unreachable:
            print(f"{name}: unreachable cells {unreachable}", file=sys.stderr)
            status = 1
            continue
        env = Gridworld(layout)
        paths = [env.shortest_path_length(g) for g in (0, 1)]
        print(f"{name}: ok, {layout.height}x{layout.width}, {env.n_states} states, shortest paths {paths}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsrlab", description="Tabular t-SR reward-revaluation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train agents through the two reward phases and write CSVs")
    p.add_argument("config", nargs="?", help="key=value run file (defaults apply when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analytic", help="closed-form SR or t-SR field as CSV and heatmap")
    p.add_argument("--layout", default="open10x10")
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--j", type=int, default=1, help="repeat count; 1 gives the plain SR")
    p.add_argument("--action", default="east")
    p.add_argument("--target", help="target cell as row,col (default: middle state)")
    p.add_argument("--out", default="field", help="output path without extension")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("plot", help="line plots with stderr bands from aggregate CSVs")
    p.add_argument("csvs", nargs="+", help="aggregate.csv files, one per agent")
    p.add_argument("--out", default="plots")
    p.add_argument("--labels", nargs="+", help="series labels (default: agent directory names)")
    p.add_argument("--env", help="environment name (default: layout directory names)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate-layout", help="check layout files")
    p.add_argument("layouts", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "labels", None) and len(args.labels) != len(args.csvs):
        parser.error("--labels needs one label per CSV")
    try:
        return args.func(args)
    except (fileio.ConfigError, fileio.SchemaError, LayoutError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"tsrlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
