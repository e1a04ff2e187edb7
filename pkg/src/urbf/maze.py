"""9x9 pit mazes: generation with a solvability guarantee, dynamics and
state encodings.

Cell codes double as the matrix encoding: empty 0, pit 1, goal 2, start 3,
and the agent is drawn as 4 on top of whatever it stands on.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

SIZE = 9
MAX_STEPS = 100
GOAL_REWARD = 100.0
PIT_REWARD = -100.0
PITS_PER_LEVEL = {1: 7, 2: 10, 3: 13}
RESAMPLE_BUDGET = 10_000

EMPTY, PIT, GOAL, START, AGENT = 0, 1, 2, 3, 4

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
N_ACTIONS = 4
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

_GLYPHS = {EMPTY: ".", PIT: "P", GOAL: "G", START: "S"}


class MazeError(RuntimeError):
    pass


@dataclass(frozen=True)
class MazeInstance:
    grid: np.ndarray  # (9, 9) int cell codes, never mutated
    level: int
    start: tuple[int, int]
    goal: tuple[int, int]

    def __post_init__(self):
        self.grid.setflags(write=False)

    @property
    def pit_count(self) -> int:
        return int(np.sum(self.grid == PIT))

    def is_pit(self, pos: tuple[int, int]) -> bool:
        return self.grid[pos] == PIT


@dataclass(frozen=True)
class EpisodeState:
    pos: tuple[int, int]
    steps: int = 0
    terminal: bool = False
    cause: str = "none"  # goal | pit | timeout | none


def _neighbors(pos: tuple[int, int]):
    r, c = pos
    for a, (dr, dc) in MOVES.items():
        nr, nc = r + dr, c + dc
        if 0 <= nr < SIZE and 0 <= nc < SIZE:
            yield a, (nr, nc)


def shortest_path(maze: MazeInstance, source: Optional[tuple[int, int]] = None) -> Optional[list[int]]:
    """Actions of a shortest pit-free path to the goal, or None if unreachable."""
    source = maze.start if source is None else source
    prev: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
    seen = {source}
    queue = deque([source])
    while queue:
        pos = queue.popleft()
        if pos == maze.goal:
            actions = []
            while pos != source:
                pos, a = prev[pos][0], prev[pos][1]
                actions.append(a)
            return actions[::-1]
        for a, nxt in _neighbors(pos):
            if nxt not in seen and not maze.is_pit(nxt):
                seen.add(nxt)
                prev[nxt] = (pos, a)
                queue.append(nxt)
    return None


def is_solvable(maze: MazeInstance) -> bool:
    return shortest_path(maze) is not None


def generate_maze(level: int, seed) -> MazeInstance:
    """Start in the left column, goal in the right column, pits elsewhere.

    Pit layouts are redrawn until a pit-free path from start to goal exists.
    """
    if level not in PITS_PER_LEVEL:
        raise ValueError(f"level must be one of {sorted(PITS_PER_LEVEL)}, got {level}")
    rng = np.random.default_rng(seed)
    start = (int(rng.integers(SIZE)), 0)
    goal = (int(rng.integers(SIZE)), SIZE - 1)
    free = [i for i in range(SIZE * SIZE) if divmod(i, SIZE) not in (start, goal)]
    for _ in range(RESAMPLE_BUDGET):
        grid = np.zeros((SIZE, SIZE), dtype=np.int64)
        grid[start] = START
        grid[goal] = GOAL
        pits = rng.choice(free, size=PITS_PER_LEVEL[level], replace=False)
        grid.flat[pits] = PIT
        maze = MazeInstance(grid, level, start, goal)
        if is_solvable(maze):
            return maze
    raise MazeError(f"no solvable level-{level} maze after {RESAMPLE_BUDGET} draws")


def reset(maze: MazeInstance) -> EpisodeState:
    return EpisodeState(maze.start)


def step(maze: MazeInstance, state: EpisodeState, action: int) -> tuple[EpisodeState, float]:
    """Move one cell; walls block without penalty."""
    if state.terminal:
        raise MazeError("cannot step a terminal episode")
    if action not in MOVES:
        raise ValueError(f"invalid action {action}")
    dr, dc = MOVES[action]
    r, c = state.pos[0] + dr, state.pos[1] + dc
    pos = (r, c) if 0 <= r < SIZE and 0 <= c < SIZE else state.pos
    steps = state.steps + 1
    if pos == maze.goal:
        return EpisodeState(pos, steps, True, "goal"), GOAL_REWARD
    if maze.is_pit(pos):
        return EpisodeState(pos, steps, True, "pit"), PIT_REWARD
    if steps >= MAX_STEPS:
        return EpisodeState(pos, steps, True, "timeout"), 0.0
    return replace(state, pos=pos, steps=steps), 0.0


def encode_coordinates(state: EpisodeState) -> np.ndarray:
    """(column, row) of the agent as floats in [0, 8]."""
    return np.array([state.pos[1], state.pos[0]], dtype=np.float64)


def encode_matrix(maze: MazeInstance, state: EpisodeState) -> np.ndarray:
    grid = maze.grid.astype(np.float64)
    grid[state.pos] = AGENT
    return grid.reshape(-1)


ENCODINGS = {
    "coordinates": (2, lambda maze, state: encode_coordinates(state)),
    "matrix": (SIZE * SIZE, encode_matrix),
}


def encoder(name: str):
    """(input width, encode(maze, state)) for a named state encoding."""
    try:
        return ENCODINGS[name]
    except KeyError:
        raise ValueError(f"unknown encoding {name!r}; expected one of {sorted(ENCODINGS)}") from None


def render(maze: MazeInstance, state: Optional[EpisodeState] = None) -> str:
    rows = []
    for r in range(SIZE):
        line = []
        for c in range(SIZE):
            if state is not None and state.pos == (r, c):
                line.append("A")
            else:
                line.append(_GLYPHS[int(maze.grid[r, c])])
        rows.append("".join(line))
    return "\n".join(rows)
