"""Closed-form successor representations and a Monte-Carlo rollout oracle.

With per-action transition matrices ``T[a]`` and a policy ``pi[s, a]`` the
policy transition matrix is ``T_pi[s] = sum_a pi[s, a] T[a, s]`` and the SR is
``M = (I - gamma T_pi)^-1``.

Committing to action ``a`` for ``j`` steps before following ``pi`` gives::

    M_a^j = sum_{k=0}^{j-1} (gamma T_a)^k + (gamma T_a)^j M

The commitment occupies the ``j`` states ``s_0 .. s_{j-1}``; the state reached
after ``j`` steps is the first state counted by the SR factor. Summing the
first term up to ``k = j`` counts that state twice, which
:func:`monte_carlo_sr` exposes (``inclusive_bound=True`` keeps that form for
comparison).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridworld import Gridworld, InvalidState


class SingularSystem(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TransitionModel:
    T: np.ndarray   # (n_actions, n_states, n_states), rows stochastic
    pi: np.ndarray  # (n_states, n_actions), rows stochastic

    def __post_init__(self):
        n_a, n_s, n_s2 = self.T.shape
        if n_s != n_s2 or self.pi.shape != (n_s, n_a):
            raise ValueError(f"inconsistent shapes T{self.T.shape} pi{self.pi.shape}")
        if not np.allclose(self.T.sum(axis=2), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition rows must sum to 1")
        if not np.allclose(self.pi.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("policy rows must sum to 1")
        if self.T.min() < 0 or self.pi.min() < 0:
            raise ValueError("probabilities must be non-negative")

    @property
    def n_states(self) -> int:
        return self.T.shape[1]

    @property
    def n_actions(self) -> int:
        return self.T.shape[0]

    @property
    def T_pi(self) -> np.ndarray:
        return np.einsum("sa,ast->st", self.pi, self.T)


def uniform_policy(n_states: int, n_actions: int = 4) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def model_from_env(env: Gridworld, pi: np.ndarray | None = None, absorbing: bool = False) -> TransitionModel:
    """Transition model of a gridworld, by default as pure diffusion without terminals."""
    T, _ = env.export_dynamics(absorbing=absorbing)
    if pi is None:
        pi = uniform_policy(env.n_states, env.n_actions)
    return TransitionModel(T, pi)


def open_grid(height: int, width: int) -> tuple[TransitionModel, list[tuple[int, int]]]:
    """Uniform random walk on an open ``height x width`` grid; bumps stay put.

    Returns the model and the cell of each state (reading order).
    """
    cells = [(r, c) for r in range(height) for c in range(width)]
    n = len(cells)
    T = np.zeros((4, n, n))
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(((-1, 0), (0, 1), (1, 0), (0, -1))):
            nr, nc = r + dr, c + dc
            if 0 <= nr < height and 0 <= nc < width:
                T[a, s, nr * width + nc] = 1.0
            else:
                T[a, s, s] = 1.0
    return TransitionModel(T, uniform_policy(n)), cells


def corridor(n_states: int = 5) -> TransitionModel:
    """Chain where action 0 moves east (the last state bumps) and action 1 moves west."""
    T = np.zeros((2, n_states, n_states))
    for s in range(n_states):
        T[0, s, min(s + 1, n_states - 1)] = 1.0
        T[1, s, max(s - 1, 0)] = 1.0
    pi = np.zeros((n_states, 2))
    pi[:, 0] = 1.0
    return TransitionModel(T, pi)


def analytic_sr(model: TransitionModel, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    n = model.n_states
    A = np.eye(n) - gamma * model.T_pi
    try:
        return np.linalg.solve(A, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def neumann_sr(model: TransitionModel, gamma: float, n_terms: int) -> np.ndarray:
    """Partial sum of the first ``n_terms`` powers of ``gamma * T_pi``."""
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    G = gamma * model.T_pi
    total = np.eye(model.n_states)
    term = np.eye(model.n_states)
    for _ in range(n_terms - 1):
        term = term @ G
        total += term
    return total


def analytic_tsr(model: TransitionModel, gamma: float, j: int, inclusive_bound: bool = False) -> np.ndarray:
    """Per-action SR after committing to each action for ``j`` steps.

    Returns an ``(n_actions, n_states, n_states)`` array.
    """
    if j < 1:
        raise ValueError("j must be at least 1")
    M = analytic_sr(model, gamma)
    n = model.n_states
    out = np.empty_like(model.T)
    for a in range(model.n_actions):
        G = gamma * model.T[a]
        head = np.zeros((n, n))
        power = np.eye(n)
        for _ in range(j):
            head += power
            power = power @ G
        if inclusive_bound:
            head += power
        out[a] = head + power @ M
    return out


def expected_tsr(model: TransitionModel, per_action: np.ndarray) -> np.ndarray:
    """Policy-weighted rows of a per-action SR."""
    return np.einsum("sa,ast->st", model.pi, per_action)


def _deterministic_next(T: np.ndarray) -> np.ndarray | None:
    # (n_actions, n_states) successor table when every row is one-hot
    if np.all((T == 0.0) | (T == 1.0)):
        return T.argmax(axis=2)
    return None


def monte_carlo_sr(
    model: TransitionModel,
    gamma: float,
    starts,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
    action: int | None = None,
    j: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Rollout estimate of SR rows with its standard error.

    Each rollout from ``s`` takes ``action`` for its first ``j`` steps (or
    follows the policy throughout when ``action`` is None), then follows the
    policy, accumulating ``gamma**t`` occupancy from ``t = 0`` up to
    ``horizon - 1``. Returns ``(mean, stderr)``, each ``(len(starts), n_states)``.
    """
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    n = model.n_states
    nxt = _deterministic_next(model.T)
    cum_pi = np.cumsum(model.pi, axis=1)
    cum_T = None if nxt is not None else np.cumsum(model.T, axis=2)
    deterministic_pi = np.all((model.pi == 0.0) | (model.pi == 1.0))

    mean = np.zeros((len(starts), n))
    stderr = np.zeros((len(starts), n))
    for i, start in enumerate(starts):
        state = np.full(n_rollouts, start, dtype=np.int64)
        occ = np.zeros((n_rollouts, n))
        rows = np.arange(n_rollouts)
        weight = 1.0
        for t in range(horizon):
            occ[rows, state] += weight
            weight *= gamma
            if action is not None and t < j:
                acts = np.full(n_rollouts, action, dtype=np.int64)
            elif deterministic_pi:
                acts = model.pi[state].argmax(axis=1)
            else:
                u = rng.random(n_rollouts)
                acts = (u[:, None] >= cum_pi[state]).sum(axis=1)
                np.minimum(acts, model.n_actions - 1, out=acts)
            if nxt is not None:
                state = nxt[acts, state]
            else:
                u = rng.random(n_rollouts)
                state = (u[:, None] >= cum_T[acts, state]).sum(axis=1)
                np.minimum(state, n - 1, out=state)
        mean[i] = occ.mean(axis=0)
        if n_rollouts > 1:
            stderr[i] = occ.std(axis=0, ddof=1) / np.sqrt(n_rollouts)
    return mean, stderr


def horizon_for(gamma: float, tail: float = 1e-3) -> int:
    """Smallest horizon whose discarded discounted mass is below ``tail``."""
    if gamma == 0.0:
        return 1
    h = int(np.ceil(np.log(tail * (1.0 - gamma)) / np.log(gamma)))
    return max(h, 1)


def sr_field(M: np.ndarray, target_state: int, env: Gridworld) -> np.ndarray:
    """Column ``M[:, target_state]`` laid out on the grid; walls are NaN."""
    if not 0 <= target_state < M.shape[1]:
        raise InvalidState(f"target state {target_state} out of range")
    return env.to_grid(M[:, target_state])


def off_target_mass(field: np.ndarray, target: tuple[int, int]) -> float:
    values = np.nan_to_num(field, nan=0.0).copy()
    values[target] = 0.0
    return float(values.sum())


def directional_mass(field: np.ndarray, target: tuple[int, int], action: int) -> float:
    """Field mass lying behind the target along ``action``.

    For eastward commitment this is the mass west of the target column: the
    states from which repeating the action sweeps through the target.
    """
    values = np.nan_to_num(field, nan=0.0)
    r, c = target
    if action == 0:    # north: mass south of target
        return float(values[r + 1:, :].sum())
    if action == 1:    # east: mass west of target
        return float(values[:, :c].sum())
    if action == 2:    # south: mass north of target
        return float(values[:r, :].sum())
    if action == 3:    # west: mass east of target
        return float(values[:, c + 1:].sum())
    raise ValueError(f"unknown action {action}")


def directional_skew(field: np.ndarray, target: tuple[int, int], action: int) -> float:
    """Share of the field's off-axis mass lying behind rather than ahead of the target.

    Longer commitments overshoot the target, so the raw upstream mass can
    shrink with ``j`` even as the field leans harder against the action; the
    share compares the two sides directly.
    """
    opposite = (action + 2) % 4
    behind = directional_mass(field, target, action)
    ahead = directional_mass(field, target, opposite)
    total = behind + ahead
    return behind / total if total > 0 else 0.0
