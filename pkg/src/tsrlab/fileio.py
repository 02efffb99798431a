"""Run configuration files, metric CSVs, field CSVs and SVG rendering."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .agents import AGENT_KINDS, AgentConfig
from .experiment import METRICS, AggregateSeries, EpisodeRecord, ExperimentConfig

PER_SEED_HEADER = ("phase", "episode", "return", "transitions", "decisions", "tv", "tv_action")
AGGREGATE_HEADER = ("phase", "episode", "metric", "mean", "stderr")

_AGENT_KEYS = {f.name for f in fields(AgentConfig)}
_EXPERIMENT_KEYS = {"layout", "agent", "episodes_per_phase", "seeds", "step_cap", "eval_step_cap", "eval_cadence", "out_dir"}
CONFIG_KEYS = tuple(sorted(_AGENT_KEYS | _EXPERIMENT_KEYS))


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Parsed run file: one experiment config per agent, sharing everything else."""

    agents: tuple[str, ...]
    experiment: ExperimentConfig

    def for_agent(self, agent: str) -> ExperimentConfig:
        return replace(self.experiment, agent=agent)


def fmt(value) -> str:
    """Shortest round-trip text for a number; integral counts stay integers."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
        out[key] = value
    return out


def _parse_seeds(value: str) -> tuple[int, ...]:
    value = value.strip().strip("[]")
    parts = [p for p in value.replace(",", " ").split() if p]
    if not parts:
        raise ConfigError("seeds is empty")
    try:
        numbers = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"seeds must be a count or a list of integers, got {value!r}") from None
    if len(numbers) == 1:
        if numbers[0] < 1:
            raise ConfigError("seed count must be at least 1")
        return tuple(range(numbers[0]))
    return tuple(numbers)


def _convert(key: str, value: str, kind: type):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


_TYPES = {
    "alpha": float, "alpha_r": float, "gamma": float, "epsilon": float, "tie_tol": float,
    "j_max": int, "episodes_per_phase": int, "step_cap": int, "eval_step_cap": int, "eval_cadence": int,
    "sub_repeats": bool, "tie_break": str, "layout": str, "out_dir": str,
}


def build_run_config(values: dict[str, str]) -> RunConfig:
    agents = tuple(a.strip() for a in values.get("agent", "tsr").split(",") if a.strip())
    if not agents:
        raise ConfigError("agent list is empty")
    bad = [a for a in agents if a not in AGENT_KINDS]
    if bad:
        raise ConfigError(f"unknown agent {bad[0]!r}; valid names: {', '.join(AGENT_KINDS)}")
    agent_kw, exp_kw = {}, {}
    for key, value in values.items():
        if key in ("agent", "seeds"):
            continue
        target = agent_kw if key in _AGENT_KEYS else exp_kw
        target[key] = _convert(key, value, _TYPES[key])
    if "seeds" in values:
        exp_kw["seeds"] = _parse_seeds(values["seeds"])
    if "step_cap" in exp_kw and "eval_step_cap" not in exp_kw:
        exp_kw["eval_step_cap"] = exp_kw["step_cap"]
    try:
        agent_cfg = AgentConfig(**agent_kw)
        exp = ExperimentConfig(agent=agents[0], agent_config=agent_cfg, **exp_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(agents, exp)


def load_run_config(path: str | Path | None, overrides=None) -> RunConfig:
    values = {} if path is None else parse_key_values(Path(path).read_text(encoding="utf-8"))
    values.update(parse_overrides(overrides))
    return build_run_config(values)


# -- metric CSVs ------------------------------------------------------------

def per_seed_csv(records: list[EpisodeRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PER_SEED_HEADER)
    for r in records:
        writer.writerow([
            r.phase, r.episode, fmt(r.eval_return), fmt(int(r.eval_transitions)),
            fmt(int(r.eval_decisions)), fmt(r.tv), fmt(r.tv_action),
        ])
    return buf.getvalue()


def aggregate_csv(series: AggregateSeries, metrics=METRICS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for metric in metrics:
        mean, err = series.mean[metric], series.stderr[metric]
        for i in range(len(series.phase)):
            writer.writerow([int(series.phase[i]), int(series.episode[i]), metric, fmt(mean[i]), fmt(err[i])])
    return buf.getvalue()


def _rows(text: str, header: tuple[str, ...], optional_tail: int = 0) -> list[list[str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty CSV")
    got = tuple(rows[0])
    if got != header and got != header[: len(header) - optional_tail]:
        raise SchemaError(f"unexpected header {','.join(got)}; expected {','.join(header)}")
    body = rows[1:]
    if not body:
        raise SchemaError("CSV has a header but no rows")
    if any(len(r) != len(got) for r in body):
        raise SchemaError("ragged CSV rows")
    return body


def read_per_seed_csv(text: str) -> list[EpisodeRecord]:
    out = []
    for row in _rows(text, PER_SEED_HEADER, optional_tail=1):
        try:
            out.append(EpisodeRecord(
                int(row[0]), int(row[1]), float(row[2]), int(row[3]), int(row[4]), float(row[5]),
                float(row[6]) if len(row) > 6 else 0.0,
            ))
        except ValueError as exc:
            raise SchemaError(f"bad value in row {row}: {exc}") from None
    return out


def read_aggregate_csv(text: str) -> dict[str, dict[str, np.ndarray]]:
    """Columns per metric: ``{metric: {"phase", "episode", "mean", "stderr"}}`` in file order."""
    cols: dict[str, dict[str, list]] = {}
    for row in _rows(text, AGGREGATE_HEADER):
        try:
            phase, episode, metric, mean, err = int(row[0]), int(row[1]), row[2], float(row[3]), float(row[4])
        except ValueError as exc:
            raise SchemaError(f"bad value in row {row}: {exc}") from None
        if phase not in (1, 2):
            raise SchemaError(f"phase must be 1 or 2, got {phase}")
        c = cols.setdefault(metric, {"phase": [], "episode": [], "mean": [], "stderr": []})
        c["phase"].append(phase)
        c["episode"].append(episode)
        c["mean"].append(mean)
        c["stderr"].append(err)
    return {m: {k: np.array(v) for k, v in c.items()} for m, c in cols.items()}


# -- field CSVs -------------------------------------------------------------

def field_csv(field: np.ndarray) -> str:
    """Grid of values, one line per row; walls are left empty."""
    lines = []
    for row in field:
        lines.append(",".join("" if math.isnan(v) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_field_csv(text: str) -> np.ndarray:
    rows = [line.split(",") for line in text.splitlines() if line]
    if not rows or len({len(r) for r in rows}) != 1:
        raise SchemaError("field CSV must be a non-empty rectangular grid")
    return np.array([[float(v) if v else math.nan for v in row] for row in rows])


# -- rendering --------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tsrlab"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_metric(series: list[tuple[str, dict[str, np.ndarray]]], metric: str, title: str, path: Path) -> None:
    """One line per agent with a shaded stderr band and a marker at the goal switch."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=100)
    switch = None
    for label, cols in series:
        phase = cols["phase"]
        n1 = int(np.count_nonzero(phase == 1))
        x = np.where(phase == 1, cols["episode"], cols["episode"] + (cols["episode"][phase == 1].max() + 1 if n1 else 0))
        mean, err = cols["mean"], cols["stderr"]
        (line,) = ax.plot(x, mean, lw=1.0, label=label)
        ax.fill_between(x, mean - err, mean + err, color=line.get_color(), alpha=0.25, lw=0)
        if n1 and (phase == 2).any():
            switch = x[phase == 2].min() - 0.5
    if switch is not None:
        ax.axvline(switch, color="k", ls="--", lw=0.8)
    ax.set_xlabel("episode")
    ax.set_ylabel(metric)
    ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_field(field: np.ndarray, title: str, path: Path, target: tuple[int, int] | None = None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4.0), dpi=100)
    masked = np.ma.masked_invalid(field)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("#303030")
    im = ax.imshow(masked, cmap=cmap, interpolation="nearest")
    if target is not None:
        ax.plot(target[1], target[0], marker="s", mfc="none", mec="r", ms=10)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
