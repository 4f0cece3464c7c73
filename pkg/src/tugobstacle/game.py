"""Tug-of-war with noise on a grid, and Monte Carlo estimates of its value.

At an interior position the token moves to Player I's choice with
probability alpha/2, to Player II's choice with probability alpha/2, and
to a uniformly chosen node of the open eps-ball otherwise.  A game ends
when the stopping rule fires or, at the latest, when the token reaches the
fattened boundary; the payoff is G = F on boundary nodes and Psi inside.

Every path draws from its own counter-based stream keyed by
``(seed, path index)``: two uniforms per step, the first picks the branch
and the second the noise node.  Results therefore do not depend on how
paths are scheduled or batched.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .dpp import ProblemInstance, ScalarField
from .errors import DegeneratePull, IllegalMove
from .geometry import Grid

__all__ = [
    "Strategy",
    "StoppingRule",
    "MarkovStrategy",
    "MarkovStoppingRule",
    "GameOutcome",
    "MonteCarloEstimate",
    "TerminationStats",
    "TugOfWar",
    "greedy_sup",
    "greedy_inf",
    "pull_toward",
    "hold_position",
    "exit_time_rule",
    "contact_rule",
    "path_rng",
    "default_cap",
    "write_paths_csv",
    "write_estimate_json",
]

logger = logging.getLogger(__name__)

CAP_FACTOR = 50
_CHUNK = 8192
_BLOCK = 64


class Strategy(Protocol):
    def __call__(self, history: Sequence[int], current: int) -> int: ...


class StoppingRule(Protocol):
    def __call__(self, history: Sequence[int], current: int) -> bool: ...


def default_cap(eps: float, factor: float = CAP_FACTOR) -> int:
    return int(math.ceil(factor / eps**2))


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent stream for one path, keyed by ``(seed, path)``."""
    key = np.array([path, seed], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class MarkovStrategy:
    """Strategy that depends on the current node only, via a move table."""

    def __init__(self, table: np.ndarray, name: str = "markov"):
        self.table = np.asarray(table, dtype=np.int64)
        self.name = name

    def __call__(self, history: Sequence[int], current: int) -> int:
        return int(self.table[current])

    def __repr__(self):
        return f"MarkovStrategy({self.name!r})"


class MarkovStoppingRule:
    """Stops whenever the current node is flagged in ``mask``."""

    def __init__(self, mask: np.ndarray, name: str = "markov"):
        self.mask = np.asarray(mask, dtype=bool)
        self.name = name

    def __call__(self, history: Sequence[int], current: int) -> bool:
        return bool(self.mask[current])

    def __repr__(self):
        return f"MarkovStoppingRule({self.name!r})"


def _unpack(field, grid: Grid | None) -> tuple[Grid, np.ndarray]:
    if isinstance(field, ScalarField):
        return field.grid, field.values
    if grid is None:
        raise ValueError("pass a ScalarField or give the grid explicitly")
    return grid, np.asarray(field, dtype=float)


def _row_chunks(n: int, size: int = _CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _greedy(field, eps, grid, pick) -> np.ndarray:
    grid, values = _unpack(field, grid)
    nbr = grid.neighbor_table(eps).nbr
    table = np.arange(grid.n_nodes, dtype=np.int64)
    interior = grid.interior
    for sl in _row_chunks(len(interior)):
        rows = nbr[sl]
        # argmax/argmin return the first hit, i.e. the lowest node index
        j = pick(values[rows], axis=1)
        table[interior[sl]] = rows[np.arange(rows.shape[0]), j]
    return table


def greedy_sup(field, eps: float, grid: Grid | None = None) -> MarkovStrategy:
    """Move to the maximizer of ``field`` over the ball (ties: lowest index).

    On boundary nodes the strategy stays put; games never move from there.
    """
    return MarkovStrategy(_greedy(field, eps, grid, np.argmax), "greedy_sup")


def greedy_inf(field, eps: float, grid: Grid | None = None) -> MarkovStrategy:
    return MarkovStrategy(_greedy(field, eps, grid, np.argmin), "greedy_inf")


def pull_toward(grid: Grid, z0, eps: float) -> MarkovStrategy:
    """Step of length eps - eps**3 toward ``z0``, snapped to the nearest ball node.

    ``z0`` must lie outside the closure of the domain.
    """
    z0 = np.asarray(z0, dtype=float).reshape(grid.dim)
    if grid.domain.distance(z0)[0] <= 0:
        raise ValueError("pull target must lie outside the closed domain")
    nbr = grid.neighbor_table(eps).nbr
    nodes = grid.nodes
    interior = grid.interior
    table = np.arange(grid.n_nodes, dtype=np.int64)
    step = eps - eps**3
    for sl in _row_chunks(len(interior)):
        x = nodes[interior[sl]]
        d = z0 - x
        dist = np.linalg.norm(d, axis=1)
        if np.any(dist == 0):
            raise DegeneratePull("pull target coincides with a grid node")
        target = x + step * d / dist[:, None]
        rows = nbr[sl]
        d2 = np.sum((nodes[rows] - target[:, None, :]) ** 2, axis=2)
        table[interior[sl]] = rows[np.arange(rows.shape[0]), np.argmin(d2, axis=1)]
    return MarkovStrategy(table, "pull_toward")


def hold_position(grid: Grid) -> MarkovStrategy:
    """A player who never pulls: the chosen node is the current one.

    Pairing two of these leaves only the noise to move the token.
    """
    return MarkovStrategy(np.arange(grid.n_nodes, dtype=np.int64), "noise_only")


def exit_time_rule(grid: Grid) -> MarkovStoppingRule:
    return MarkovStoppingRule(~grid.is_interior, "exit")


def contact_rule(field, Psi, tol: float, grid: Grid | None = None) -> MarkovStoppingRule:
    """Stop on the boundary or where ``field <= Psi + tol``."""
    grid, values = _unpack(field, grid)
    Psi = np.asarray(Psi, dtype=float)
    inside = grid.is_interior
    if np.any(values[inside] < Psi[inside] - tol):
        raise ValueError("contact rule needs field >= Psi - tol on interior nodes")
    return MarkovStoppingRule(~inside | (values <= Psi + tol), "contact")


@dataclass
class GameOutcome:
    payoff: float
    length: int
    capped: bool
    terminal: int
    path: list | None = None


@dataclass
class PathRecords:
    length: np.ndarray
    capped: np.ndarray
    payoff: np.ndarray
    terminal: np.ndarray


@dataclass
class MonteCarloEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_capped: int
    mean_length: float
    seed: int
    paths: PathRecords | None = None

    @property
    def capped_fraction(self) -> float:
        return self.n_capped / self.n_paths

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "n_capped": self.n_capped,
            "mean_length": self.mean_length,
            "seed": self.seed,
        }


@dataclass
class TerminationStats:
    fraction_terminated: float
    length_histogram: np.ndarray  # counts indexed by path length
    n_paths: int
    cap: int


class TugOfWar:
    """The game attached to a problem instance."""

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self.grid = instance.grid
        self.eps = instance.eps
        self.alpha = instance.alpha
        self.beta = instance.beta
        self.payoff = instance.payoff
        self._nbr = self.grid.neighbor_table(self.eps).nbr
        self._row = self.grid.interior_row

    @property
    def default_cap(self) -> int:
        return default_cap(self.eps)

    def neighborhood(self, node: int) -> np.ndarray:
        return self._nbr[self._row[node]]

    def _check_move(self, current: int, target: int, who: str) -> int:
        target = int(target)
        if not (0 <= target < self.grid.n_nodes) or not self.grid.in_ball(current, target, self.eps)[0]:
            raise IllegalMove(f"{who} moved from node {current} to {target}, outside the eps-ball")
        return target

    def step(self, current: int, history: Sequence[int], sigma_I, sigma_II, draws) -> int:
        """One transition from interior node ``current``.

        ``draws`` is a pair of uniforms in [0, 1): the first selects the
        branch ([0, a/2) Player I, [a/2, a) Player II, [a, 1) noise), the
        second the noise node.
        """
        u_branch, u_noise = draws
        half = 0.5 * self.alpha
        if u_branch < half:
            return self._check_move(current, sigma_I(history, current), "Player I")
        if u_branch < self.alpha:
            return self._check_move(current, sigma_II(history, current), "Player II")
        members = self.neighborhood(current)
        j = min(int(u_noise * len(members)), len(members) - 1)
        return int(members[j])

    def run_game(
        self,
        x0: int,
        sigma_I,
        sigma_II,
        stop,
        rng: np.random.Generator,
        cap: int | None = None,
        record: bool = False,
    ) -> GameOutcome:
        """Play one game from node ``x0``.

        The stopping rule is consulted before each move (so a game may end
        at time 0) and the token always stops on the boundary.  After
        ``cap`` moves without stopping the game is cut off and pays
        G at the current node, flagged as capped.
        """
        cap = self.default_cap if cap is None else int(cap)
        if cap < 1:
            raise ValueError("cap must be at least 1")
        current = int(x0)
        history = [current]
        is_interior = self.grid.is_interior
        t = 0
        while True:
            if not is_interior[current] or stop(history, current):
                capped = False
                break
            if t == cap:
                capped = True
                break
            draws = rng.random(2)
            current = self.step(current, history, sigma_I, sigma_II, draws)
            history.append(current)
            t += 1
        return GameOutcome(
            float(self.payoff[current]), t, capped, current, history if record else None
        )

    def _validate_table(self, strategy: MarkovStrategy, who: str) -> None:
        interior = self.grid.interior
        moves = strategy.table[interior]
        ok = (moves >= 0) & (moves < self.grid.n_nodes)
        if ok.all():
            diff = self.grid.lattice[moves] - self.grid.lattice[interior]
            r = self.eps / self.grid.h
            ok = np.sum(diff * diff, axis=1) < r * r * (1.0 - 1e-9)
        if not ok.all():
            bad = int(interior[np.flatnonzero(~ok)[0]])
            raise IllegalMove(f"{who} ({strategy.name}) leaves the eps-ball at node {bad}")

    def _batch(self, x0, move_I, move_II, stop_mask, seed, paths, cap):
        """Markovian fast path: all paths of a chunk advance in lock-step."""
        n = len(paths)
        pos = np.full(n, x0, dtype=np.int64)
        length = np.zeros(n, dtype=np.int64)
        capped = np.zeros(n, dtype=bool)
        gens = [None] * n
        buf = np.empty((n, 2 * _BLOCK))
        K = self._nbr.shape[1]
        half, alpha = 0.5 * self.alpha, self.alpha
        active = np.arange(n)
        t = 0
        while active.size:
            cur = pos[active]
            go = ~stop_mask[cur]
            active, cur = active[go], cur[go]
            if not active.size:
                break
            if t == cap:
                capped[active] = True
                break
            k = t % _BLOCK
            if k == 0:
                for r in active:
                    if gens[r] is None:
                        gens[r] = path_rng(seed, int(paths[r]))
                    gens[r].random(out=buf[r])
            u1 = buf[active, 2 * k]
            u2 = buf[active, 2 * k + 1]
            j = np.minimum((u2 * K).astype(np.int64), K - 1)
            nxt = self._nbr[self._row[cur], j]
            nxt = np.where(u1 < alpha, move_II[cur], nxt)
            nxt = np.where(u1 < half, move_I[cur], nxt)
            pos[active] = nxt
            length[active] += 1
            t += 1
        return length, capped, pos

    def _generic(self, x0, sigma_I, sigma_II, stop, seed, paths, cap):
        n = len(paths)
        length = np.zeros(n, dtype=np.int64)
        capped = np.zeros(n, dtype=bool)
        pos = np.zeros(n, dtype=np.int64)
        for r, i in enumerate(paths):
            out = self.run_game(x0, sigma_I, sigma_II, stop, path_rng(seed, int(i)), cap)
            length[r], capped[r], pos[r] = out.length, out.capped, out.terminal
        return length, capped, pos

    def simulate_paths(
        self, x0, sigma_I, sigma_II, stop, n_paths: int, seed: int, cap=None, workers: int = 1
    ) -> PathRecords:
        if n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        cap = self.default_cap if cap is None else int(cap)
        if cap < 1:
            raise ValueError("cap must be at least 1")
        x0 = int(x0)
        fast = (
            isinstance(sigma_I, MarkovStrategy)
            and isinstance(sigma_II, MarkovStrategy)
            and isinstance(stop, MarkovStoppingRule)
        )
        if fast:
            self._validate_table(sigma_I, "Player I")
            self._validate_table(sigma_II, "Player II")
            stop_mask = stop.mask | ~self.grid.is_interior

            def job(paths):
                return self._batch(x0, sigma_I.table, sigma_II.table, stop_mask, seed, paths, cap)

        else:

            def job(paths):
                return self._generic(x0, sigma_I, sigma_II, stop, seed, paths, cap)

        chunks = [np.arange(sl.start, sl.stop) for sl in _row_chunks(n_paths)]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, chunks))
        else:
            results = [job(c) for c in chunks]
        length = np.concatenate([r[0] for r in results])
        capped = np.concatenate([r[1] for r in results])
        terminal = np.concatenate([r[2] for r in results])
        return PathRecords(length, capped, self.payoff[terminal], terminal)

    def estimate_value(
        self,
        x0: int,
        sigma_I,
        sigma_II,
        stop,
        n_paths: int,
        seed: int,
        cap: int | None = None,
        workers: int = 1,
        keep_paths: bool = False,
    ) -> MonteCarloEstimate:
        """Sample mean and standard error of the stopped payoff from ``x0``.

        With a single path the standard error is reported as 0.
        """
        rec = self.simulate_paths(x0, sigma_I, sigma_II, stop, n_paths, seed, cap, workers)
        n = len(rec.payoff)
        if np.all(rec.payoff == rec.payoff[0]):
            # exact for a constant payoff; summation would leave rounding residue
            mean, stderr = float(rec.payoff[0]), 0.0
        else:
            mean = float(np.mean(rec.payoff))
            stderr = float(np.std(rec.payoff, ddof=1) / math.sqrt(n))
        n_capped = int(rec.capped.sum())
        if n_capped > 1e-3 * n:
            logger.warning("%d of %d paths hit the cap; estimate is biased", n_capped, n)
        return MonteCarloEstimate(
            mean=mean,
            stderr=stderr,
            n_paths=n,
            n_capped=n_capped,
            mean_length=float(np.mean(rec.length)),
            seed=int(seed),
            paths=rec if keep_paths else None,
        )

    def termination_stats(
        self, x0, sigma_I, sigma_II, stop, n_paths: int, seed: int, cap=None, workers: int = 1
    ) -> TerminationStats:
        cap = self.default_cap if cap is None else int(cap)
        rec = self.simulate_paths(x0, sigma_I, sigma_II, stop, n_paths, seed, cap, workers)
        done = ~rec.capped
        hist = np.bincount(rec.length, minlength=1)
        return TerminationStats(float(done.mean()), hist, len(done), cap)


def write_estimate_json(path, estimate: MonteCarloEstimate) -> None:
    with open(path, "w") as fh:
        json.dump(estimate.to_json(), fh, indent=2)
        fh.write("\n")


def write_paths_csv(path, grid: Grid, records: PathRecords) -> None:
    coords = [f"terminal_x{d}" for d in range(grid.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "length", "capped", "payoff", *coords])
        for i in range(len(records.length)):
            writer.writerow(
                [
                    i,
                    int(records.length[i]),
                    int(records.capped[i]),
                    repr(float(records.payoff[i])),
                    *(repr(float(c)) for c in grid.nodes[records.terminal[i]]),
                ]
            )
