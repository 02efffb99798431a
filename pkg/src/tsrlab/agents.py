"""Tabular agents: Q-learning, skip-Q, SR, SR with random repeats, and t-SR.

Successor tensors are stored with the successor-state axis last so that the
values of every option at a state come from one matrix-vector product:

* SR:   ``M[s, a, s']``
* t-SR: ``M[s, a, j-1, s']`` for a repeat count ``j`` in ``1..j_max``

Greedy choices treat values within ``tie_tol`` of the maximum as equal. The
action is the first such maximiser; the repeat is the longest, since in a
deterministic grid every repeat that stays on an optimal path has the same
value and differs from the others only by rounding.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .gridworld import RepeatOutcome
from .tabular import (
    GreedyPolicy,
    ShapeMismatch,
    argmax_first,
    argmax_last,
    epsilon_greedy,
    q_table,
    skip_q_table,
)

AGENT_KINDS = ("q", "skip_q", "sr", "sr_random_skip", "tsr")


class EmptyTrace(ValueError):
    pass


class UnknownAgent(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 1.0
    alpha_r: float = 1.0
    gamma: float = 0.99
    epsilon: float = 0.05
    j_max: int = 7
    # behaviour-policy tie resolution; greedy choices are always deterministic
    tie_break: str = "random"
    tie_tol: float = 1e-9
    # also learn every shorter repeat contained in an executed one
    sub_repeats: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.alpha_r <= 1.0:
            raise ValueError(f"alpha_r must lie in (0, 1], got {self.alpha_r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if int(self.j_max) != self.j_max or self.j_max < 1:
            raise ValueError(f"j_max must be a positive integer, got {self.j_max}")
        if self.tie_break not in ("random", "first"):
            raise ValueError(f"tie_break must be 'random' or 'first', got {self.tie_break!r}")
        if self.tie_tol < 0:
            raise ValueError("tie_tol must be non-negative")

    @property
    def random_ties(self) -> bool:
        return self.tie_break == "random"


class Decision(NamedTuple):
    action: int
    repeat: int = 1


# -- update rules -----------------------------------------------------------

def q_update(Q, s, a, r, s_next, terminal, cfg: AgentConfig):
    target = r if terminal else r + cfg.gamma * Q[s_next].max()
    Q[s, a] += cfg.alpha * (target - Q[s, a])
    return Q


def _segments(k: int, terminal: bool, j_requested: int, j_max: int, sub_repeats: bool):
    """(start, length, table repeat) triples learnable from a trace of ``k`` steps.

    A segment ending on the terminal also stands for every longer repeat from
    its start, since those would have ended there too.
    """
    if not sub_repeats:
        return [(0, k, j_requested)]
    out = []
    for i in range(k - 1, -1, -1):
        for length in range(1, k - i + 1):
            out.append((i, length, length))
        if terminal:
            out.extend((i, k - i, j) for j in range(k - i + 1, j_max + 1))
    if not terminal and j_requested != k:
        out.append((0, k, j_requested))
    return out


def skip_q_update(SQ, Q, trace: RepeatOutcome, s, a, j_requested, cfg: AgentConfig):
    """n-step targets over the executed repeat, bootstrapped on the one-step table.

    All skip targets are formed before the companion one-step updates, so a
    single-step repeat moves ``SQ[s, a, 0]`` exactly as :func:`q_update` would
    move ``Q[s, a]``.
    """
    steps = trace.transitions
    if not steps:
        raise EmptyTrace("repeat trace has no transitions")
    gamma = cfg.gamma
    k = len(steps)
    states = [s] + [t.next_state for t in steps]
    terminal = steps[-1].terminal
    updates = []
    for i, length, j in _segments(k, terminal, j_requested, SQ.shape[2], cfg.sub_repeats):
        ret = 0.0
        for t in range(length):
            ret += gamma**t * steps[i + t].reward
        end_terminal = terminal and i + length == k
        target = ret if end_terminal else ret + gamma**length * Q[states[i + length]].max()
        updates.append((states[i], j - 1, target))
    for state, jj, target in updates:
        SQ[state, a, jj] += cfg.alpha * (target - SQ[state, a, jj])

    prev = s
    for step in steps:
        q_update(Q, prev, a, step.reward, step.next_state, step.terminal, cfg)
        prev = step.next_state
    return SQ, Q


def sr_q_values(M, W, s) -> np.ndarray:
    """Option values at ``s``: ``(n_actions,)`` for SR, ``(n_actions, j_max)`` for t-SR."""
    row = M[s]
    if row.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"successor axis {row.shape[-1]} != reward vector {W.shape[0]}")
    if row.ndim == 2:
        return row @ W
    n_a, n_j, n_s = row.shape
    return (row.reshape(n_a * n_j, n_s) @ W).reshape(n_a, n_j)


def greedy_option(values: np.ndarray, tol: float = 0.0) -> tuple[int, int]:
    """Greedy (action, repeat index) from an ``(n_actions, n_repeats)`` value table."""
    best = values.max(axis=1)
    a = int(np.argmax(best >= best.max() - tol))
    row = values[a]
    return a, row.shape[0] - 1 - int(np.argmax(row[::-1] >= best[a] - tol))


def _occupancy_target(boot, visited, final_state, terminal, gamma):
    """Discounted occupancy of ``visited`` plus the discounted bootstrap row.

    A terminal final state contributes its own occupancy and nothing after.
    """
    k = len(visited)
    if terminal:
        target = np.zeros_like(boot)
        target[final_state] += gamma**k
    else:
        target = gamma**k * boot
    for i, s in enumerate(visited):
        target[s] += gamma**i
    return target


def sr_update(M, W, s, a, r, s_next, terminal, cfg: AgentConfig, next_policy=None):
    """One-step SR TD update plus the reward-vector update for ``s_next``.

    The bootstrap action is greedy under ``M @ W`` unless ``next_policy``
    (a distribution over actions at ``s_next``) is given, in which case the
    bootstrap is the policy-weighted successor row.
    """
    W[s_next] += cfg.alpha_r * (r - W[s_next])
    if next_policy is not None:
        boot = next_policy @ M[s_next]
    elif terminal:
        boot = M[s_next, 0]
    else:
        boot = M[s_next, argmax_first(sr_q_values(M, W, s_next), cfg.tie_tol)]
    target = _occupancy_target(boot, (s,), s_next, terminal, cfg.gamma)
    M[s, a] += cfg.alpha * (target - M[s, a])
    return M, W


def tsr_update(M, W, trace: RepeatOutcome, s, a, j_requested, cfg: AgentConfig, next_policy=None):
    """Temporally extended SR update toward the executed repeat's occupancies.

    The bootstrap at a landing state is the greedy (action, repeat) pair under
    the current reward vector, or the ``next_policy``-weighted row when an
    ``(n_actions, j_max)`` distribution is given. With ``cfg.sub_repeats``
    every repeat contained in the trace is updated, latest start first.
    """
    steps = trace.transitions
    if not steps:
        raise EmptyTrace("repeat trace has no transitions")
    for step in steps:
        W[step.next_state] += cfg.alpha_r * (step.reward - W[step.next_state])
    k = len(steps)
    states = [s] + [t.next_state for t in steps]
    terminal = steps[-1].terminal
    gamma = cfg.gamma
    greedy = {}  # landing state -> greedy option, valid until that state's row changes
    for i, length, j in _segments(k, terminal, j_requested, M.shape[2], cfg.sub_repeats):
        end = i + length
        landing = states[end]
        end_terminal = terminal and end == k
        if end_terminal:
            boot = M[landing, 0, 0]
        elif next_policy is not None:
            boot = np.tensordot(next_policy, M[landing], axes=2)
        else:
            if landing not in greedy:
                greedy[landing] = greedy_option(sr_q_values(M, W, landing), cfg.tie_tol)
            a_star, j_star = greedy[landing]
            boot = M[landing, a_star, j_star]
        target = _occupancy_target(boot, states[i:end], landing, end_terminal, gamma)
        row = M[states[i], a, j - 1]
        row += cfg.alpha * (target - row)
        greedy.pop(states[i], None)
    return M, W


# -- selection rules --------------------------------------------------------

def tsr_select(M, W, s, epsilon, rng, random_ties=False, tol=0.0) -> Decision:
    """Epsilon-greedy action over each action's best repeat, then epsilon-greedy repeat.

    Without random tie resolution a tied repeat goes to the longest one, as in
    the greedy choice.
    """
    values = sr_q_values(M, W, s)
    a = epsilon_greedy(rng, values.max(axis=1), epsilon, random_ties, tol)
    if values.shape[1] == 1:
        return Decision(a, 1)
    if random_ties:
        return Decision(a, epsilon_greedy(rng, values[a], epsilon, True, tol) + 1)
    if rng.random() < epsilon:
        return Decision(a, int(rng.integers(values.shape[1])) + 1)
    return Decision(a, argmax_last(values[a], tol) + 1)


def select_random_skip(q_values, epsilon, rng, j_max, evaluation=False, random_ties=False, tol=0.0) -> Decision:
    """Epsilon-greedy action; with probability epsilon a uniform repeat in ``1..j_max``."""
    if evaluation:
        return Decision(argmax_first(q_values, tol), 1)
    a = epsilon_greedy(rng, q_values, epsilon, random_ties, tol)
    if rng.random() < epsilon:
        return Decision(a, int(rng.integers(1, j_max + 1)))
    return Decision(a, 1)


# -- agents -----------------------------------------------------------------

class Agent:
    kind = ""

    def __init__(self, n_states: int, cfg: AgentConfig, n_actions: int = 4):
        self.n_states = n_states
        self.n_actions = n_actions
        self.cfg = cfg

    def act(self, s: int, rng: np.random.Generator) -> Decision:
        """Exploratory decision used during training."""
        raise NotImplementedError

    def greedy(self, s: int) -> Decision:
        raise NotImplementedError

    def learn(self, s: int, decision: Decision, trace: RepeatOutcome) -> None:
        raise NotImplementedError

    def tables(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def greedy_policy(self, states) -> GreedyPolicy:
        states = np.asarray(states, dtype=np.int64)
        picks = [self.greedy(int(s)) for s in states]
        return GreedyPolicy(
            states,
            np.array([d.action for d in picks], dtype=np.int64),
            np.array([d.repeat for d in picks], dtype=np.int64),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, table in sorted(self.tables().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(table).tobytes())
        return h.hexdigest()


def _first_tied(values: np.ndarray, tol: float) -> np.ndarray:
    # row-wise argmax_first for a 2-d table
    return np.argmax(values >= values.max(axis=1, keepdims=True) - tol, axis=1)


def _last_tied(values: np.ndarray, tol: float) -> np.ndarray:
    mask = values >= values.max(axis=1, keepdims=True) - tol
    return values.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)


class QAgent(Agent):
    kind = "q"

    def __init__(self, n_states, cfg, n_actions=4):
        super().__init__(n_states, cfg, n_actions)
        self.Q = q_table(n_states, n_actions)

    def act(self, s, rng):
        cfg = self.cfg
        return Decision(epsilon_greedy(rng, self.Q[s], cfg.epsilon, cfg.random_ties, cfg.tie_tol), 1)

    def greedy(self, s):
        return Decision(argmax_first(self.Q[s], self.cfg.tie_tol), 1)

    def learn(self, s, decision, trace):
        prev = s
        for step in trace.transitions:
            q_update(self.Q, prev, decision.action, step.reward, step.next_state, step.terminal, self.cfg)
            prev = step.next_state

    def greedy_policy(self, states):
        states = np.asarray(states, dtype=np.int64)
        actions = _first_tied(self.Q[states], self.cfg.tie_tol)
        return GreedyPolicy(states, actions, np.ones_like(actions))

    def tables(self):
        return {"Q": self.Q}


class SkipQAgent(QAgent):
    """Q-learning plus a repeat table bootstrapped on the one-step values."""

    kind = "skip_q"

    def __init__(self, n_states, cfg, n_actions=4):
        super().__init__(n_states, cfg, n_actions)
        self.SQ = skip_q_table(n_states, n_actions, cfg.j_max)

    def act(self, s, rng):
        cfg = self.cfg
        a = epsilon_greedy(rng, self.Q[s], cfg.epsilon, cfg.random_ties, cfg.tie_tol)
        if cfg.j_max == 1:
            return Decision(a, 1)
        if cfg.random_ties:
            return Decision(a, epsilon_greedy(rng, self.SQ[s, a], cfg.epsilon, True, cfg.tie_tol) + 1)
        if rng.random() < cfg.epsilon:
            return Decision(a, int(rng.integers(cfg.j_max)) + 1)
        return Decision(a, argmax_last(self.SQ[s, a], cfg.tie_tol) + 1)

    def greedy(self, s):
        a = argmax_first(self.Q[s], self.cfg.tie_tol)
        return Decision(a, argmax_last(self.SQ[s, a], self.cfg.tie_tol) + 1)

    def learn(self, s, decision, trace):
        skip_q_update(self.SQ, self.Q, trace, s, decision.action, decision.repeat, self.cfg)

    def greedy_policy(self, states):
        states = np.asarray(states, dtype=np.int64)
        actions = _first_tied(self.Q[states], self.cfg.tie_tol)
        repeats = _last_tied(self.SQ[states, actions], self.cfg.tie_tol) + 1
        return GreedyPolicy(states, actions, repeats)

    def tables(self):
        return {"Q": self.Q, "SQ": self.SQ}


class SRAgent(Agent):
    kind = "sr"

    def __init__(self, n_states, cfg, n_actions=4):
        super().__init__(n_states, cfg, n_actions)
        self.M = np.zeros((n_states, n_actions, n_states))
        self.W = np.zeros(n_states)

    def values(self, s):
        return sr_q_values(self.M, self.W, s)

    def act(self, s, rng):
        cfg = self.cfg
        return Decision(epsilon_greedy(rng, self.values(s), cfg.epsilon, cfg.random_ties, cfg.tie_tol), 1)

    def greedy(self, s):
        return Decision(argmax_first(self.values(s), self.cfg.tie_tol), 1)

    def learn(self, s, decision, trace):
        prev = s
        for step in trace.transitions:
            sr_update(self.M, self.W, prev, decision.action, step.reward, step.next_state, step.terminal, self.cfg)
            prev = step.next_state

    def greedy_policy(self, states):
        states = np.asarray(states, dtype=np.int64)
        n, n_a, n_s = self.M.shape
        values = (self.M.reshape(n * n_a, n_s) @ self.W).reshape(n, n_a)[states]
        actions = _first_tied(values, self.cfg.tie_tol)
        return GreedyPolicy(states, actions, np.ones_like(actions))

    def tables(self):
        return {"M": self.M, "W": self.W}


class RandomSkipSRAgent(SRAgent):
    """SR agent whose exploration occasionally repeats an action a random number of times."""

    kind = "sr_random_skip"

    def act(self, s, rng):
        cfg = self.cfg
        return select_random_skip(
            self.values(s), cfg.epsilon, rng, cfg.j_max, random_ties=cfg.random_ties, tol=cfg.tie_tol
        )


class TSRAgent(Agent):
    kind = "tsr"

    def __init__(self, n_states, cfg, n_actions=4):
        super().__init__(n_states, cfg, n_actions)
        self.M = np.zeros((n_states, n_actions, cfg.j_max, n_states))
        self.W = np.zeros(n_states)

    def values(self, s):
        return sr_q_values(self.M, self.W, s)

    def act(self, s, rng):
        cfg = self.cfg
        return tsr_select(self.M, self.W, s, cfg.epsilon, rng, cfg.random_ties, cfg.tie_tol)

    def greedy(self, s):
        a, j = greedy_option(self.values(s), self.cfg.tie_tol)
        return Decision(a, j + 1)

    def learn(self, s, decision, trace):
        tsr_update(self.M, self.W, trace, s, decision.action, decision.repeat, self.cfg)

    def greedy_policy(self, states):
        states = np.asarray(states, dtype=np.int64)
        n, n_a, n_j, n_s = self.M.shape
        values = (self.M.reshape(n * n_a * n_j, n_s) @ self.W).reshape(n, n_a, n_j)[states]
        tol = self.cfg.tie_tol
        actions = _first_tied(values.max(axis=2), tol)
        repeats = _last_tied(values[np.arange(len(states)), actions], tol) + 1
        return GreedyPolicy(states, actions, repeats)

    def tables(self):
        return {"M": self.M, "W": self.W}


_AGENTS = {cls.kind: cls for cls in (QAgent, SkipQAgent, SRAgent, RandomSkipSRAgent, TSRAgent)}


def make_agent(kind: str, n_states: int, cfg: AgentConfig, n_actions: int = 4) -> Agent:
    try:
        cls = _AGENTS[kind]
    except KeyError:
        raise UnknownAgent(f"unknown agent {kind!r}; valid names: {', '.join(AGENT_KINDS)}") from None
    return cls(n_states, cfg, n_actions)
