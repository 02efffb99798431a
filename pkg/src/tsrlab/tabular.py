"""Tabular helpers: deterministic argmax, epsilon-greedy draws, policy total variation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyInput(ValueError):
    pass


class InvalidEpsilon(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


def q_table(n_states: int, n_actions: int = 4) -> np.ndarray:
    return np.zeros((n_states, n_actions))


def skip_q_table(n_states: int, n_actions: int = 4, j_max: int = 7) -> np.ndarray:
    # index j-1 holds the value of repeating j times
    return np.zeros((n_states, n_actions, j_max))


def make_rng(seed: int, phase: int = 0) -> np.random.Generator:
    """Behaviour stream for one training phase of one seeded run.

    The stream depends only on (seed, phase) so that different agents trained
    under the same seed see the same draws.
    """
    return np.random.default_rng([int(seed), int(phase)])


def tied_maxima(values, atol: float = 0.0) -> np.ndarray:
    """Indices whose value lies within ``atol`` of the maximum."""
    values = np.asarray(values)
    if values.size == 0:
        raise EmptyInput("maximum of an empty sequence")
    return np.flatnonzero(values >= values.max() - atol)


def argmax_first(values, atol: float = 0.0) -> int:
    """Smallest index attaining the maximum (up to ``atol``)."""
    values = np.asarray(values)
    if values.size == 0:
        raise EmptyInput("argmax of an empty sequence")
    if atol == 0.0:
        return int(np.argmax(values))
    return int(np.argmax(values >= values.max() - atol))


def argmax_last(values, atol: float = 0.0) -> int:
    """Largest index attaining the maximum (up to ``atol``)."""
    values = np.asarray(values)
    if values.size == 0:
        raise EmptyInput("argmax of an empty sequence")
    return values.size - 1 - int(np.argmax(values[::-1] >= values.max() - atol))


def epsilon_greedy(rng: np.random.Generator, values, epsilon: float, random_ties: bool = False, atol: float = 0.0) -> int:
    """Uniform index with probability ``epsilon``, otherwise a maximiser.

    One uniform draw is always consumed. With ``random_ties`` a tied maximum
    is resolved by a further uniform draw, otherwise the first maximiser wins.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidEpsilon(f"epsilon must lie in [0, 1], got {epsilon}")
    n = len(values)
    if n == 0:
        raise EmptyInput("epsilon-greedy over an empty sequence")
    if rng.random() < epsilon:
        return int(rng.integers(n))
    if random_ties:
        ties = tied_maxima(values, atol)
        if len(ties) > 1:
            return int(ties[rng.integers(len(ties))])
        return int(ties[0])
    return argmax_first(values, atol)


@dataclass(frozen=True)
class GreedyPolicy:
    """Deterministic choice per state; ``repeats`` is all ones for one-step agents."""

    states: np.ndarray
    actions: np.ndarray
    repeats: np.ndarray

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.repeats)):
            raise ShapeMismatch("states, actions and repeats must have equal length")

    def __eq__(self, other):
        if not isinstance(other, GreedyPolicy):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.repeats, other.repeats)
        )

    __hash__ = None

    def decision(self, state: int) -> tuple[int, int]:
        i = int(np.searchsorted(self.states, state))
        return int(self.actions[i]), int(self.repeats[i])

    def as_distribution(self, n_actions: int = 4, j_max: int | None = None) -> np.ndarray:
        """One-hot rows over the joint (action, repeat) choice."""
        j_max = int(self.repeats.max()) if j_max is None else j_max
        dist = np.zeros((len(self.states), n_actions * j_max))
        dist[np.arange(len(self.states)), self.actions * j_max + self.repeats - 1] = 1.0
        return dist


def total_variation(p_prev: GreedyPolicy, p_cur: GreedyPolicy, joint: bool = True) -> float:
    """Mean over states of half the L1 distance between the two policies.

    For deterministic policies this is the fraction of states whose choice
    changed. ``joint=False`` compares actions only.
    """
    if not np.array_equal(p_prev.states, p_cur.states):
        raise ShapeMismatch("policies are defined over different state sets")
    n = len(p_cur.states)
    if n == 0:
        return 0.0
    changed = p_prev.actions != p_cur.actions
    if joint:
        changed |= p_prev.repeats != p_cur.repeats
    return float(np.count_nonzero(changed)) / n
