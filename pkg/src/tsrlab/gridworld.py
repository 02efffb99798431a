"""Junction-style gridworlds: layout parsing, primitive dynamics and repeated actions.

Layout files are plain text, one character per cell::

    #  wall        .  floor       L  lava
    G  goal candidate (exactly two)  S  start (exactly one)

Coordinates are ``(row, col)`` with row 0 at the top. States index the
non-wall cells in reading order.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

NORTH, EAST, SOUTH, WEST = range(4)
ACTION_NAMES = ("north", "east", "south", "west")
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

DEFAULT_STEP_CAP = 1000


class CellKind(enum.Enum):
    WALL = "#"
    FLOOR = "."
    LAVA = "L"
    GOAL = "G"
    START = "S"


class LayoutError(ValueError):
    pass


class NonRectangular(LayoutError):
    pass


class UnknownCharacter(LayoutError):
    def __init__(self, char: str, position: tuple[int, int]):
        super().__init__(f"unknown character {char!r} at row {position[0]}, col {position[1]}")
        self.char = char
        self.position = position


class WrongStartCount(LayoutError):
    pass


class WrongGoalCount(LayoutError):
    pass


class InvalidState(ValueError):
    pass


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    cells: tuple[tuple[CellKind, ...], ...]
    goal_candidates: tuple[tuple[int, int], ...]
    start: tuple[int, int]

    def kind(self, pos: tuple[int, int]) -> CellKind:
        return self.cells[pos[0]][pos[1]]

    def unreachable_cells(self) -> list[tuple[int, int]]:
        """Non-wall cells that cannot be entered from the start.

        Lava ends an episode, so it is entered but never expanded; goal
        candidates are expanded because the inactive one behaves as floor.
        """
        seen = {self.start}
        queue = deque([self.start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in MOVES:
                nr, nc = r + dr, c + dc
                if not (0 <= nr < self.height and 0 <= nc < self.width):
                    continue
                kind = self.cells[nr][nc]
                if kind is CellKind.WALL or (nr, nc) in seen:
                    continue
                seen.add((nr, nc))
                if kind is not CellKind.LAVA:
                    queue.append((nr, nc))
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if self.cells[r][c] is not CellKind.WALL and (r, c) not in seen
        ]

    def render(self) -> str:
        return "\n".join("".join(k.value for k in row) for row in self.cells) + "\n"


def parse_layout(text: str) -> GridLayout:
    lines = [line.rstrip() for line in text.strip("\n").splitlines()]
    if not lines or not lines[0]:
        raise NonRectangular("layout is empty")
    width = len(lines[0])
    for i, line in enumerate(lines):
        if len(line) != width:
            raise NonRectangular(f"row {i} has length {len(line)}, expected {width}")

    lookup = {k.value: k for k in CellKind}
    cells = []
    starts, goals = [], []
    for r, line in enumerate(lines):
        row = []
        for c, ch in enumerate(line):
            if ch not in lookup:
                raise UnknownCharacter(ch, (r, c))
            kind = lookup[ch]
            if kind is CellKind.START:
                starts.append((r, c))
            elif kind is CellKind.GOAL:
                goals.append((r, c))
            row.append(kind)
        cells.append(tuple(row))

    if len(starts) != 1:
        raise WrongStartCount(f"expected exactly one start 'S', found {len(starts)}")
    if len(goals) != 2:
        raise WrongGoalCount(f"expected exactly two goal candidates 'G', found {len(goals)}")
    return GridLayout(
        width=width,
        height=len(lines),
        cells=tuple(cells),
        goal_candidates=tuple(goals),
        start=starts[0],
    )


def builtin_layouts() -> list[str]:
    return sorted(
        p.name[:-4] for p in resources.files("tsrlab.layouts").iterdir() if p.name.endswith(".txt")
    )


def load_layout(name_or_path: str | Path) -> GridLayout:
    """Load a layout from a file path, or by name from the shipped set."""
    path = Path(name_or_path)
    if path.exists():
        return parse_layout(path.read_text(encoding="utf-8"))
    name = str(name_or_path)
    if name.endswith(".txt"):
        name = name[:-4]
    if name in builtin_layouts():
        return parse_layout(resources.files("tsrlab.layouts").joinpath(name + ".txt").read_text("utf-8"))
    raise FileNotFoundError(f"no layout file or builtin layout named {name_or_path!r}")


class StepOutcome(NamedTuple):
    next_state: int
    reward: float
    terminal: bool
    truncated: bool


class RepeatOutcome(NamedTuple):
    transitions: list[StepOutcome]

    @property
    def executed(self) -> int:
        return len(self.transitions)

    @property
    def final(self) -> StepOutcome:
        return self.transitions[-1]


class Gridworld:
    """Deterministic cardinal-move MDP over a :class:`GridLayout`.

    Only ``active_goal`` may change after construction.
    """

    n_actions = 4

    def __init__(self, layout: GridLayout, active_goal: int = 0, step_cap: int = DEFAULT_STEP_CAP):
        if step_cap < 1:
            raise ValueError("step_cap must be positive")
        self.layout = layout
        self.step_cap = step_cap
        self.positions = [
            (r, c)
            for r in range(layout.height)
            for c in range(layout.width)
            if layout.cells[r][c] is not CellKind.WALL
        ]
        self.index = {pos: i for i, pos in enumerate(self.positions)}
        self.n_states = len(self.positions)
        self.start = self.index[layout.start]
        self.goal_states = tuple(self.index[g] for g in layout.goal_candidates)
        self.lava_states = tuple(
            i for i, pos in enumerate(self.positions) if layout.kind(pos) is CellKind.LAVA
        )

        nxt = []
        for r, c in self.positions:
            row = []
            for dr, dc in MOVES:
                nr, nc = r + dr, c + dc
                inside = 0 <= nr < layout.height and 0 <= nc < layout.width
                if inside and layout.cells[nr][nc] is not CellKind.WALL:
                    row.append(self.index[(nr, nc)])
                else:
                    row.append(self.index[(r, c)])
            nxt.append(tuple(row))
        self.next_table = tuple(nxt)
        self.active_goal = active_goal

    @property
    def active_goal(self) -> int:
        return self._active_goal

    @active_goal.setter
    def active_goal(self, goal: int) -> None:
        if goal not in (0, 1):
            raise ValueError("active_goal must be 0 or 1")
        self._active_goal = goal
        rewards = [0.0] * self.n_states
        for s in self.lava_states:
            rewards[s] = -1.0
        rewards[self.goal_states[goal]] = 1.0
        self.entry_reward = tuple(rewards)
        self.terminal = tuple(r != 0.0 for r in rewards)

    @property
    def goal_state(self) -> int:
        return self.goal_states[self._active_goal]

    def nonterminal_states(self) -> list[int]:
        return [s for s in range(self.n_states) if not self.terminal[s]]

    def step(self, state: int, action: int) -> StepOutcome:
        if not 0 <= state < self.n_states or self.terminal[state]:
            raise InvalidState(f"state {state} is not a valid non-terminal state")
        if not 0 <= action < 4:
            raise InvalidAction(f"action {action} not in 0..3")
        s2 = self.next_table[state][action]
        reward = self.entry_reward[s2]
        return StepOutcome(s2, reward, reward != 0.0, False)

    def execute_repeat(self, state: int, action: int, j: int, steps_so_far: int = 0, step_cap: int | None = None) -> RepeatOutcome:
        """Apply ``action`` up to ``j`` times, stopping on a terminal or at the step cap."""
        if j < 1:
            raise ValueError("repeat count must be at least 1")
        cap = self.step_cap if step_cap is None else step_cap
        out = []
        s = state
        for _ in range(j):
            outcome = self.step(s, action)
            if not outcome.terminal and steps_so_far + len(out) + 1 >= cap:
                out.append(outcome._replace(truncated=True))
                break
            out.append(outcome)
            if outcome.terminal:
                break
            s = outcome.next_state
        return RepeatOutcome(out)

    def export_dynamics(self, absorbing: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Per-action transition matrices ``T[a, s, s']`` and rewards ``r[s, a]``.

        With ``absorbing`` the terminal states self-loop with zero reward;
        without it every cell is treated as floor (pure diffusion).
        """
        n = self.n_states
        T = np.zeros((4, n, n))
        r = np.zeros((n, 4))
        for s in range(n):
            for a in range(4):
                if absorbing and self.terminal[s]:
                    T[a, s, s] = 1.0
                    continue
                s2 = self.next_table[s][a]
                T[a, s, s2] = 1.0
                if absorbing:
                    r[s, a] = self.entry_reward[s2]
        return T, r

    def shortest_path_length(self, goal: int | None = None) -> int | None:
        """Breadth-first primitive-step distance from start to a goal candidate avoiding lava."""
        target = self.goal_states[self._active_goal if goal is None else goal]
        dist = {self.start: 0}
        queue = deque([self.start])
        while queue:
            s = queue.popleft()
            if s == target:
                return dist[s]
            for s2 in self.next_table[s]:
                if s2 in dist or s2 in self.lava_states:
                    continue
                dist[s2] = dist[s] + 1
                queue.append(s2)
        return None

    def to_grid(self, values) -> np.ndarray:
        """Project a per-state vector onto the layout; walls become NaN."""
        grid = np.full((self.layout.height, self.layout.width), np.nan)
        for s, (r, c) in enumerate(self.positions):
            grid[r, c] = values[s]
        return grid
