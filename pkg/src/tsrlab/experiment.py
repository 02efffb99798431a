"""Reward-revaluation protocol: train on one goal, move the reward, train again.

After every training episode the greedy policy is evaluated once without
learning or exploration, and the change in greedy policy since the previous
evaluation is measured as a total variation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentConfig, Agent, make_agent
from .gridworld import DEFAULT_STEP_CAP, Gridworld, GridLayout, load_layout
from .tabular import GreedyPolicy, make_rng, total_variation

METRICS = ("return", "transitions", "decisions", "tv", "tv_action")


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    layout: str | Path = "junction"
    agent: str = "tsr"
    episodes_per_phase: int = 10000
    seeds: tuple[int, ...] = tuple(range(50))
    agent_config: AgentConfig = field(default_factory=AgentConfig)
    step_cap: int = DEFAULT_STEP_CAP
    eval_step_cap: int = DEFAULT_STEP_CAP
    eval_cadence: int = 1
    out_dir: str | Path = "results"

    def __post_init__(self):
        if self.episodes_per_phase < 1:
            raise ValueError("episodes_per_phase must be at least 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.step_cap < 1 or self.eval_step_cap < 1:
            raise ValueError("step caps must be positive")
        if self.eval_cadence < 1:
            raise ValueError("eval_cadence must be at least 1")


@dataclass(frozen=True)
class EpisodeRecord:
    phase: int
    episode: int
    eval_return: float
    eval_transitions: int
    eval_decisions: int
    tv: float
    tv_action: float = 0.0


def policy_states(env: Gridworld) -> list[int]:
    """States whose greedy choice is tracked: everything except lava.

    Both goal candidates are included since each is non-terminal in one phase.
    """
    lava = set(env.lava_states)
    return [s for s in range(env.n_states) if s not in lava]


def run_episode(agent: Agent, env: Gridworld, rng: np.random.Generator) -> tuple[float, int, int]:
    """One exploratory training episode from the start state."""
    s = env.start
    steps = decisions = 0
    ret = 0.0
    while True:
        d = agent.act(s, rng)
        trace = env.execute_repeat(s, d.action, d.repeat, steps)
        agent.learn(s, d, trace)
        decisions += 1
        steps += trace.executed
        last = trace.transitions[-1]
        ret += sum(t.reward for t in trace.transitions)
        if last.terminal or last.truncated:
            return ret, steps, decisions
        s = last.next_state


def evaluate_greedy(agent: Agent, env: Gridworld, eval_step_cap: int = DEFAULT_STEP_CAP) -> tuple[float, int, int]:
    """Run one greedy episode without learning; returns (return, transitions, decisions)."""
    s = env.start
    steps = decisions = 0
    ret = 0.0
    while True:
        d = agent.greedy(s)
        trace = env.execute_repeat(s, d.action, d.repeat, steps, step_cap=eval_step_cap)
        decisions += 1
        steps += trace.executed
        ret += sum(t.reward for t in trace.transitions)
        last = trace.transitions[-1]
        if last.terminal or last.truncated:
            return ret, steps, decisions
        s = last.next_state


def evaluate_policy(policy: GreedyPolicy, env: Gridworld, eval_step_cap: int = DEFAULT_STEP_CAP) -> tuple[float, int, int]:
    """Same result as :func:`evaluate_greedy` for the tabulated greedy policy.

    The walk is deterministic, so revisiting a decision state means the
    episode cycles with zero reward until the cap; whole cycles are skipped
    arithmetically.
    """
    choice = {int(s): (int(a), int(j)) for s, a, j in zip(policy.states, policy.actions, policy.repeats)}
    nxt, reward, terminal = env.next_table, env.entry_reward, env.terminal
    s = env.start
    steps = decisions = 0
    ret = 0.0
    seen: dict[int, tuple[int, int]] = {}
    while True:
        if s in seen:
            t0, d0 = seen[s]
            cycle_t, cycle_d = steps - t0, decisions - d0
            n = (eval_step_cap - steps - 1) // cycle_t
            steps += n * cycle_t
            decisions += n * cycle_d
            seen = {}
        seen[s] = (steps, decisions)
        a, j = choice[s]
        decisions += 1
        for _ in range(j):
            s = nxt[s][a]
            steps += 1
            r = reward[s]
            ret += r
            if terminal[s]:
                return ret, steps, decisions
            if steps >= eval_step_cap:
                return ret, steps, decisions


def run_revaluation(cfg: ExperimentConfig, seed: int, layout: GridLayout | None = None, agent: Agent | None = None) -> list[EpisodeRecord]:
    """Train ``episodes_per_phase`` episodes per goal and record greedy metrics."""
    layout = load_layout(cfg.layout) if layout is None else layout
    env = Gridworld(layout, active_goal=0, step_cap=cfg.step_cap)
    if agent is None:
        agent = make_agent(cfg.agent, env.n_states, cfg.agent_config)
    states = policy_states(env)
    records = []
    prev_policy = None
    cached = None  # (policy, goal, result) of the last evaluation
    for phase in (1, 2):
        env.active_goal = phase - 1
        rng = make_rng(seed, phase)
        for episode in range(cfg.episodes_per_phase):
            run_episode(agent, env, rng)
            if (episode + 1) % cfg.eval_cadence and episode + 1 != cfg.episodes_per_phase:
                continue
            policy = agent.greedy_policy(states)
            if cached is not None and cached[1] == phase and cached[0] == policy:
                result = cached[2]
            else:
                result = evaluate_policy(policy, env, cfg.eval_step_cap)
                cached = (policy, phase, result)
            if prev_policy is None:
                tv = tv_action = 0.0
            else:
                tv = total_variation(prev_policy, policy)
                tv_action = total_variation(prev_policy, policy, joint=False)
            prev_policy = policy
            ret, transitions, decisions = result
            records.append(EpisodeRecord(phase, episode, ret, transitions, decisions, tv, tv_action))
    return records


def record_metric(record: EpisodeRecord, metric: str) -> float:
    return {
        "return": record.eval_return,
        "transitions": record.eval_transitions,
        "decisions": record.eval_decisions,
        "tv": record.tv,
        "tv_action": record.tv_action,
    }[metric]


@dataclass(frozen=True)
class AggregateSeries:
    phase: np.ndarray
    episode: np.ndarray
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    n_seeds: int

    def post_switch(self, metric: str) -> np.ndarray:
        return self.mean[metric][self.phase == 2]

    def pre_switch(self, metric: str) -> np.ndarray:
        return self.mean[metric][self.phase == 1]


def mean_stderr(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along axis 0; a single sample has zero error."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    n = values.shape[0]
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(n)


def aggregate(runs: list[list[EpisodeRecord]]) -> AggregateSeries:
    if not runs:
        raise LengthMismatch("no runs to aggregate")
    length = len(runs[0])
    if any(len(r) != length for r in runs):
        raise LengthMismatch("runs have different numbers of records")
    keys = [(r.phase, r.episode) for r in runs[0]]
    if any([(r.phase, r.episode) for r in run] != keys for run in runs[1:]):
        raise LengthMismatch("runs are not aligned on (phase, episode)")
    mean, stderr = {}, {}
    for metric in METRICS:
        values = np.array([[record_metric(rec, metric) for rec in run] for run in runs])
        mean[metric], stderr[metric] = mean_stderr(values)
    return AggregateSeries(
        phase=np.array([k[0] for k in keys]),
        episode=np.array([k[1] for k in keys]),
        mean=mean,
        stderr=stderr,
        n_seeds=len(runs),
    )


def episodes_to_convergence(transitions, optimal_transitions: float, window: int = 50) -> int | None:
    """First index from which ``window`` consecutive evaluations are optimal."""
    if window < 1:
        raise ValueError("window must be at least 1")
    hits = np.isclose(np.asarray(transitions, dtype=float), optimal_transitions, rtol=0.0, atol=1e-9)
    run = 0
    for i in range(len(hits) - 1, -1, -1):
        run = run + 1 if hits[i] else 0
        hits[i] = run >= window
    idx = np.flatnonzero(hits)
    return int(idx[0]) if len(idx) else None


def tv_mass_span(tv, fraction: float = 0.8) -> int | None:
    """Number of leading episodes holding ``fraction`` of the total TV mass."""
    tv = np.asarray(tv, dtype=float)
    total = tv.sum()
    if total <= 0:
        return None
    cum = np.cumsum(tv)
    return int(np.searchsorted(cum, fraction * total - 1e-12) + 1)
