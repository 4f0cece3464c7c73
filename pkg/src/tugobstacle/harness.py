"""Convergence experiments, reference solutions and boundary diagnostics.

The grid spacing is tied to the scale, h = eps * h_ratio, so a ladder of
decreasing eps refines both the DPP scale and the lattice at once.  Errors
are measured at grid nodes against a continuum reference.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.spatial import cKDTree

from .dpp import ProblemInstance, contact_mask, solve_dpp
from .errors import InvalidExponent, NoConvergence, OracleDisagreement
from .game import TugOfWar, contact_rule, greedy_inf, greedy_sup
from .geometry import DomainSpec, Grid, build_grid

__all__ = [
    "reference_radial_pharmonic",
    "reference_1d_obstacle",
    "Reference1D",
    "InstanceFamily",
    "obstacle_1d_family",
    "disc_family",
    "annulus_family",
    "constant_family",
    "FAMILIES",
    "make_instance",
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "run_convergence",
    "boundary_oscillation",
    "probe_consistency",
]

logger = logging.getLogger(__name__)


def reference_radial_pharmonic(p: float, N: int, center=None) -> Callable[[np.ndarray], np.ndarray]:
    """Radial p-harmonic function |x|^((p-N)/(p-1)), or log|x| when p == N.

    Singular at ``center``; restrict to domains avoiding it.
    """
    if p < 2:
        raise InvalidExponent(f"p must satisfy p >= 2, got {p}")
    c = np.zeros(N) if center is None else np.asarray(center, dtype=float)

    if p == N:

        def u(x):
            return np.log(np.linalg.norm(np.atleast_2d(x) - c, axis=1))

    else:
        k = (p - N) / (p - 1)

        def u(x):
            return np.linalg.norm(np.atleast_2d(x) - c, axis=1) ** k

    u.exponent = None if p == N else (p - N) / (p - 1)
    return u


@numba.njit(cache=True)
def _psor_1d(u, psi, omega, tol, max_sweeps):
    # Local solve at node i: phi_p((u[i+1]-u[i])/h) = phi_p((u[i]-u[i-1])/h) with
    # phi_p(s) = |s|^(p-2) s strictly increasing, hence u[i] = midpoint for every p.
    m = u.size
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(1, m - 1):
            mid = 0.5 * (u[i - 1] + u[i + 1])
            new = u[i] + omega * (mid - u[i])
            if new < psi[i]:
                new = psi[i]
            d = abs(new - u[i])
            if d > change:
                change = d
            u[i] = new
        if change <= tol:
            return sweep + 1
    return -1


def _upper_hull_values(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least concave majorant of the points (x_i, y_i), evaluated at x."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], y[hull])


@dataclass
class Reference1D:
    x: np.ndarray
    values: np.ndarray
    psor_values: np.ndarray
    hull_values: np.ndarray
    disagreement: float
    sweeps: int

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1)
        return np.interp(pts, self.x, self.values)


def reference_1d_obstacle(
    F_left: float,
    F_right: float,
    Psi: Callable[[np.ndarray], np.ndarray],
    fine_m: int = 10_000,
    interval=(0.0, 1.0),
    tol: float = 1e-6,
) -> Reference1D:
    """Continuum 1D obstacle solution, computed two ways that must agree.

    In one dimension p-superharmonic means concave for every p >= 2, so the
    solution is the least concave majorant of the obstacle with the given
    end values.  The first route runs projected SOR on the discrete
    p-Laplacian complementarity system; the second builds the upper convex
    hull directly.  Raises :class:`OracleDisagreement` when they differ by
    more than ``tol``.
    """
    if fine_m < 10_000:
        raise ValueError("fine_m must be at least 10**4")
    a, b = interval
    x = np.linspace(a, b, fine_m + 1)
    psi = np.asarray(Psi(x), dtype=float)
    if psi[0] > F_left or psi[-1] > F_right:
        raise ValueError("obstacle exceeds the boundary values at an endpoint")
    psi_in = psi.copy()
    psi_in[0], psi_in[-1] = F_left, F_right

    # nested iteration: each level starts from the interpolated coarser solve
    levels = [fine_m]
    while levels[-1] % 2 == 0 and levels[-1] // 2 >= 64:
        levels.append(levels[-1] // 2)
    scale = max(1.0, abs(F_left), abs(F_right), float(np.max(np.abs(psi))))
    u = None
    sweeps = 0
    for m in reversed(levels):
        xm = np.linspace(a, b, m + 1)
        psi_m = np.asarray(Psi(xm), dtype=float)
        psi_m[0], psi_m[-1] = F_left, F_right
        start = np.linspace(F_left, F_right, m + 1) if u is None else np.interp(xm, x_prev, u)
        u = np.maximum(start, psi_m)
        omega = 2.0 / (1.0 + math.sin(math.pi / m))
        # over-relaxed sweeps jitter at about m ulps, so a fixed change tolerance can stall
        stop = max(1e-13, 2 * m * np.finfo(float).eps * scale)
        n = _psor_1d(u, psi_m, omega, stop, 1_000_000)
        if n < 0:
            raise OracleDisagreement(f"projected SOR did not converge on {m} cells")
        sweeps += n
        x_prev = xm
    hull = _upper_hull_values(x, psi_in)
    gap = float(np.max(np.abs(u - hull)))
    if gap > tol:
        raise OracleDisagreement(f"PSOR and concave-majorant references differ by {gap:.2e}")
    return Reference1D(x, hull, u, hull, gap, sweeps)


@dataclass
class InstanceFamily:
    """Domain, exponent and data from which instances at any scale are built."""

    name: str
    domain: DomainSpec
    p: float
    F: Callable[[np.ndarray], np.ndarray]
    Psi: Callable[[np.ndarray], np.ndarray] | None
    reference: Callable[[np.ndarray], np.ndarray] | None = None
    probe: tuple = ()


def _parabola_obstacle(x):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
    return 0.5 - 4.0 * (x - 0.5) ** 2


def obstacle_1d_family(p: float = 2.0) -> InstanceFamily:
    """Interval (0, 1), zero boundary data, parabolic obstacle peaking at 1/2."""
    ref = reference_1d_obstacle(0.0, 0.0, lambda s: 0.5 - 4.0 * (s - 0.5) ** 2)
    return InstanceFamily(
        f"obstacle_1d_p{p:g}",
        DomainSpec.interval(0.0, 1.0),
        p,
        lambda x: np.zeros(len(x)),
        _parabola_obstacle,
        lambda x: ref(np.asarray(x)[:, 0]),
        probe=(0.2,),
    )


def _disc_obstacle(x):
    return 0.4 - 2.0 * np.sum((np.atleast_2d(x) - np.array([0.2, 0.1])) ** 2, axis=1)


def disc_family(p: float = 3.0) -> InstanceFamily:
    """Unit disc, affine boundary data x1/2 and a bump obstacle near the centre.

    No closed-form reference; used for solver and game experiments.
    """
    return InstanceFamily(
        f"disc_p{p:g}",
        DomainSpec.disc((0.0, 0.0), 1.0),
        p,
        lambda x: 0.5 * np.atleast_2d(x)[:, 0],
        _disc_obstacle,
        None,
        probe=(-0.5, 0.0),
    )


def annulus_family(p: float = 4.0) -> InstanceFamily:
    """Annulus 1 < |x| < 2 with the radial p-harmonic trace and no active obstacle."""
    ref = reference_radial_pharmonic(p, 2)
    return InstanceFamily(
        f"annulus_p{p:g}",
        DomainSpec.annulus((0.0, 0.0), 1.0, 2.0),
        p,
        ref,
        None,
        ref,
        probe=(1.5, 0.0),
    )


def constant_family(c: float = 1.0, domain: DomainSpec | None = None, p: float = 3.0) -> InstanceFamily:
    domain = DomainSpec.disc((0.0, 0.0), 1.0) if domain is None else domain
    return InstanceFamily(
        "constant",
        domain,
        p,
        lambda x: np.full(len(x), c),
        lambda x: np.full(len(x), c - 1.0),
        lambda x: np.full(len(x), c),
        probe=tuple([0.0] * domain.dim),
    )


FAMILIES = {
    "obstacle_1d": obstacle_1d_family,
    "disc": disc_family,
    "annulus": annulus_family,
    "constant": constant_family,
}


def make_instance(family: InstanceFamily, eps: float, h: float, eps0: float | None = None) -> ProblemInstance:
    """Instance at scale ``eps`` on a lattice of spacing ``h``.

    The fattening defaults to ``eps + h``: the largest radius in use plus
    one lattice layer.
    """
    eps0 = eps + h if eps0 is None else eps0
    grid = build_grid(family.domain, h, eps0)
    return ProblemInstance.build(grid, eps, family.F, family.Psi, p=family.p)


@dataclass
class ExperimentConfig:
    family: InstanceFamily
    eps_ladder: tuple
    h_ratio: float = 1.0 / 6.0
    tol: float = 1e-10
    max_iter: int = 100_000
    method: str = "anderson"
    init: str = "lower"
    osc_r: float = 0.2

    def __post_init__(self):
        ladder = tuple(float(e) for e in self.eps_ladder)
        if not ladder or any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("eps ladder must be non-empty and strictly decreasing")
        if not 0 < self.h_ratio <= 1.0 / 6.0 + 1e-12:
            raise ValueError("h_ratio must lie in (0, 1/6]")
        self.eps_ladder = ladder


@dataclass
class ErrorRow:
    eps: float
    h: float
    sup_error: float
    residual: float
    iterations: int
    contact_nodes: int
    osc_r: float
    converged: bool = True
    seconds: float = 0.0


CSV_HEADER = ("eps", "h", "sup_error", "residual", "iterations", "contact_nodes", "osc_r")


@dataclass
class ErrorTable:
    family: str
    rows: list = field(default_factory=list)
    solutions: list = field(default_factory=list, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                d = asdict(row)
                writer.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in CSV_HEADER])


def run_convergence(config: ExperimentConfig, keep_solutions: bool = False) -> ErrorTable:
    """Solve the DPP along the eps ladder and tabulate errors and diagnostics.

    A row whose solve fails to converge keeps the last iterate, is marked
    ``converged=False`` and the experiment moves on.
    """
    family = config.family
    if family.reference is None:
        raise ValueError(f"family {family.name!r} has no reference solution")
    table = ErrorTable(family.name)
    for eps in config.eps_ladder:
        h = eps * config.h_ratio
        start = time.perf_counter()
        inst = make_instance(family, eps, h)
        try:
            u, report = solve_dpp(
                inst, tol=config.tol, max_iter=config.max_iter, init=config.init, method=config.method
            )
            ok = True
        except NoConvergence as exc:
            logger.warning("eps=%g: %s", eps, exc)
            u, report, ok = exc.field, exc.report, False
        elapsed = time.perf_counter() - start
        grid = inst.grid
        interior = grid.interior
        ref = family.reference(grid.nodes[interior])
        row = ErrorRow(
            eps=eps,
            h=h,
            sup_error=float(np.max(np.abs(u[interior] - ref))),
            residual=report.final_residual,
            iterations=report.iterations,
            contact_nodes=int(contact_mask(inst, u, 10 * config.tol).sum()),
            osc_r=boundary_oscillation(u, grid, config.osc_r),
            converged=ok,
            seconds=elapsed,
        )
        logger.info("%s eps=%g err=%.3e (%.1fs)", family.name, eps, row.sup_error, elapsed)
        table.rows.append(row)
        if keep_solutions:
            table.solutions.append((inst, u))
    return table


def boundary_oscillation(field, grid: Grid, r: float) -> float:
    """Largest |u(x) - u(y)| over nodes x and boundary-adjacent nodes y with |x - y| < r.

    Boundary-adjacent nodes are boundary nodes within one lattice spacing
    of the closed domain, the discrete stand-in for the topological boundary.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    values = field.values if hasattr(field, "values") else np.asarray(field, dtype=float)
    nodes = grid.nodes
    bnd = grid.boundary
    adjacent = bnd[grid.domain.distance(nodes[bnd]) < grid.h]
    if adjacent.size == 0:
        return 0.0
    tree = cKDTree(nodes)
    # query_ball_point includes the sphere; shrink slightly for a strict ball
    close = tree.query_ball_point(nodes[adjacent], r * (1.0 - 1e-9))
    worst = 0.0
    for y, members in zip(adjacent, close):
        if members:
            worst = max(worst, float(np.max(np.abs(values[members] - values[y]))))
    return worst


@dataclass
class ProbeResult:
    node: int
    grid_value: float
    mean: float
    stderr: float
    slack: float

    @property
    def gap(self) -> float:
        return abs(self.mean - self.grid_value)

    @property
    def agrees(self) -> bool:
        return self.gap <= 3.0 * self.stderr + self.slack


def probe_consistency(
    instance: ProblemInstance,
    u,
    point,
    n_paths: int = 10_000,
    seed: int = 0,
    tol: float = 1e-8,
    slack: float = 2e-2,
    cap: int | None = None,
    workers: int = 1,
) -> ProbeResult:
    """Monte Carlo value at ``point`` under greedy play and contact stopping vs the grid value."""
    grid = instance.grid
    node = grid.nearest_node(point)
    game = TugOfWar(instance)
    est = game.estimate_value(
        node,
        greedy_sup(u, instance.eps, grid),
        greedy_inf(u, instance.eps, grid),
        contact_rule(u, instance.Psi, tol, grid),
        n_paths,
        seed,
        cap,
        workers,
    )
    return ProbeResult(node, float(u[node]), est.mean, est.stderr, slack)
