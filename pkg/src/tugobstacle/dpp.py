"""Dynamic programming principle for the p-Laplacian obstacle problem.

At interior nodes the operator is

    (T v)(x) = max{ Psi(x), a/2 max_B v + a/2 min_B v + b mean_B v },

with B the open eps-ball around x intersected with the grid, and T leaves
boundary values untouched.  Its unique fixed point with boundary data F is
the eps-p-superharmonious function.  Iterating T from the lower
initialization (F on the boundary, min Psi inside) increases monotonically
to the fixed point.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Literal

import numba
import numpy as np

from .errors import DataCompatibilityError, InvalidExponent, NoConvergence
from .geometry import Grid, grid_from_json, grid_to_json

__all__ = [
    "alpha_beta",
    "ProblemInstance",
    "ScalarField",
    "SolveReport",
    "apply_T",
    "initial_lower",
    "initial_upper",
    "residual",
    "solve_dpp",
    "contact_mask",
    "write_contact_csv",
    "write_field_json",
]

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10**6


def alpha_beta(p: float, N: int) -> tuple[float, float]:
    """Mixing weights of the tug-of-war and noise terms for exponent ``p``."""
    if not p >= 2:
        raise InvalidExponent(f"p must satisfy p >= 2, got {p}")
    if N < 1:
        raise ValueError("dimension must be at least 1")
    return (p - 2) / (N + p), (2 + N) / (N + p)


def _evaluate(data, grid: Grid) -> np.ndarray:
    if callable(data):
        values = np.asarray(data(grid.nodes), dtype=float)
    else:
        values = np.asarray(data, dtype=float)
    if values.ndim == 0:
        values = np.full(grid.n_nodes, float(values))
    if values.shape != (grid.n_nodes,):
        raise ValueError(f"field has shape {values.shape}, expected ({grid.n_nodes},)")
    return values


@dataclass(eq=False)
class ProblemInstance:
    """Grid, scale ``eps``, weights ``alpha``/``beta`` and data ``F``, ``Psi``.

    ``F`` and ``Psi`` are arrays over all grid nodes; only the boundary
    entries of ``F`` are read.  Use :meth:`build` to construct one from
    callables or constants with validation.
    """

    grid: Grid
    eps: float
    alpha: float
    beta: float
    F: np.ndarray
    Psi: np.ndarray
    p: float | None = None

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.Psi = np.asarray(self.Psi, dtype=float)
        self.validate()

    @classmethod
    def build(
        cls,
        grid: Grid,
        eps: float,
        F,
        Psi=None,
        p: float | None = None,
        alpha: float | None = None,
        beta: float | None = None,
    ) -> "ProblemInstance":
        """``Psi=None`` means no obstacle (encoded as ``min F - 1``)."""
        if p is not None:
            if alpha is not None or beta is not None:
                raise ValueError("give either p or (alpha, beta), not both")
            alpha, beta = alpha_beta(p, grid.dim)
        elif alpha is None or beta is None:
            raise ValueError("need p or both alpha and beta")
        F_vals = _evaluate(F, grid)
        if Psi is None:
            Psi_vals = np.full(grid.n_nodes, F_vals[grid.boundary].min() - 1.0)
        else:
            Psi_vals = _evaluate(Psi, grid)
        return cls(grid, float(eps), float(alpha), float(beta), F_vals, Psi_vals, p)

    def validate(self) -> None:
        a, b = self.alpha, self.beta
        if not (0.0 <= a < 1.0) or not (0.0 < b <= 1.0) or abs(a + b - 1.0) > 1e-12:
            raise DataCompatibilityError(
                f"need alpha in [0,1), beta = 1 - alpha > 0; got alpha={a}, beta={b}"
            )
        self.grid.check_radius(self.eps)
        if self.eps < self.grid.h:
            logger.warning("eps=%g below h=%g: every ball is a single node", self.eps, self.grid.h)
        for name, arr in (("F", self.F), ("Psi", self.Psi)):
            if arr.shape != (self.grid.n_nodes,):
                raise ValueError(f"{name} must have one value per node")
        bnd = self.grid.boundary
        if not np.all(np.isfinite(self.F[bnd])) or not np.all(np.isfinite(self.Psi)):
            raise DataCompatibilityError("F and Psi must be finite")
        bad = self.Psi[bnd] > self.F[bnd]
        if bad.any():
            worst = float(np.max(self.Psi[bnd] - self.F[bnd]))
            raise DataCompatibilityError(
                f"hypothesis Ψ ≤ F in Γ̄ violated at {int(bad.sum())} boundary nodes "
                f"(max excess {worst:.3g})"
            )

    @property
    def payoff(self) -> np.ndarray:
        """G = F on boundary nodes, Psi on interior nodes."""
        return np.where(self.grid.is_interior, self.Psi, self.F)

    @property
    def upper_bound(self) -> float:
        return max(float(self.F[self.grid.boundary].max()), float(self.Psi.max()))

    def translated(self, k) -> "ProblemInstance":
        """Same data shifted by the lattice vector ``k`` (integer units of h)."""
        from .geometry import build_grid

        k = np.asarray(k, dtype=np.int64).reshape(self.grid.dim)
        grid = build_grid(self.grid.domain.translated(k * self.grid.h), self.grid.h, self.grid.eps0)
        src = self.grid.index_of(grid.lattice - k)
        if (src < 0).any():
            raise ValueError("translated grid does not match the original node set")
        return ProblemInstance(grid, self.eps, self.alpha, self.beta, self.F[src], self.Psi[src], self.p)


@dataclass
class ScalarField:
    """Values on the nodes of a grid, in grid order."""

    grid: Grid
    values: np.ndarray

    def to_json(self) -> dict:
        return {"grid": grid_to_json(self.grid), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ScalarField":
        grid = grid_from_json(doc["grid"])
        values = np.asarray(doc["values"], dtype=float)
        if values.shape != (grid.n_nodes,):
            raise ValueError("value count does not match grid")
        return cls(grid, values)


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    monotone_violation: float
    init_mode: str
    method: str = "jacobi"
    converged: bool = True
    residual_history: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc.pop("residual_history")
        return doc


@numba.njit(cache=True)
def _apply_T_kernel(v, nbr, interior, psi, half_alpha, beta, out):
    n, K = nbr.shape
    for r in range(n):
        mx = -np.inf
        mn = np.inf
        s = 0.0
        for j in range(K):
            val = v[nbr[r, j]]
            if val > mx:
                mx = val
            if val < mn:
                mn = val
            s += val
        t = half_alpha * mx + half_alpha * mn + beta * (s / K)
        i = interior[r]
        out[i] = t if t > psi[i] else psi[i]


@numba.njit(cache=True)
def _gauss_seidel_sweep(v, nbr, interior, psi, half_alpha, beta):
    n, K = nbr.shape
    change = 0.0
    for r in range(n):
        mx = -np.inf
        mn = np.inf
        s = 0.0
        for j in range(K):
            val = v[nbr[r, j]]
            if val > mx:
                mx = val
            if val < mn:
                mn = val
            s += val
        t = half_alpha * mx + half_alpha * mn + beta * (s / K)
        i = interior[r]
        new = t if t > psi[i] else psi[i]
        d = abs(new - v[i])
        if d > change:
            change = d
        v[i] = new
    return change


def apply_T(instance: ProblemInstance, v) -> np.ndarray:
    """One application of the DPP operator; boundary values are copied."""
    v = np.ascontiguousarray(v, dtype=float)
    grid = instance.grid
    table = grid.neighbor_table(instance.eps)
    out = v.copy()
    _apply_T_kernel(
        v, table.nbr, grid.interior, instance.Psi, 0.5 * instance.alpha, instance.beta, out
    )
    return out


def initial_lower(instance: ProblemInstance) -> np.ndarray:
    interior = instance.grid.is_interior
    return np.where(interior, instance.Psi.min(), instance.F)


def initial_upper(instance: ProblemInstance) -> np.ndarray:
    interior = instance.grid.is_interior
    return np.where(interior, instance.upper_bound, instance.F)


def residual(instance: ProblemInstance, v) -> float:
    """Sup-norm of ``v - T v`` over interior nodes."""
    v = np.asarray(v, dtype=float)
    interior = instance.grid.interior
    return float(np.max(np.abs(apply_T(instance, v)[interior] - v[interior])))


def _jacobi(instance, u, tol, max_iter, sign, history):
    """Iterate u <- T u. ``sign`` is +1 for an increasing sequence, -1 for decreasing."""
    interior = instance.grid.interior
    violation = 0.0
    res = np.inf
    for it in range(1, max_iter + 1):
        new = apply_T(instance, u)
        step = new[interior] - u[interior]
        res = float(np.max(np.abs(step)))
        violation = max(violation, float(np.max(-sign * step, initial=0.0)))
        history.append(res)
        u = new
        if res <= tol:
            return u, it, violation, True
    return u, max_iter, violation, False


def _gauss_seidel(instance, u, tol, max_iter, history):
    grid = instance.grid
    table = grid.neighbor_table(instance.eps)
    u = u.copy()
    for it in range(1, max_iter + 1):
        change = _gauss_seidel_sweep(
            u, table.nbr, grid.interior, instance.Psi, 0.5 * instance.alpha, instance.beta
        )
        history.append(change)
        if change <= tol:
            return u, it, True
    return u, max_iter, False


def _anderson(instance, u, tol, max_iter, depth, history):
    """Anderson-mixed fixed-point iteration on the interior values.

    Mixing breaks monotonicity of the iterates; the history restarts
    whenever the residual grows by more than a factor of 10 over the best
    seen so far.
    """
    interior = instance.grid.interior
    xs, fs = [], []
    best_res, best_u = np.inf, u
    for it in range(1, max_iter + 1):
        g = apply_T(instance, u)
        f = g[interior] - u[interior]
        res = float(np.max(np.abs(f)))
        history.append(res)
        if res < best_res:
            best_res, best_u = res, u
        elif res > 10.0 * best_res:
            xs.clear()
            fs.clear()
            u = apply_T(instance, best_u)
            continue
        if res <= tol:
            return u, it, True
        xs.append(g[interior].copy())
        fs.append(f)
        if len(xs) > depth + 1:
            xs.pop(0)
            fs.pop(0)
        if len(fs) == 1:
            u = g
            continue
        dF = np.diff(np.asarray(fs), axis=0).T
        dX = np.diff(np.asarray(xs), axis=0).T
        gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
        u = g.copy()
        u[interior] = xs[-1] - dX @ gamma
    return best_u, max_iter, False


def solve_dpp(
    instance: ProblemInstance,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init: Literal["lower", "upper"] = "lower",
    method: Literal["jacobi", "gauss_seidel", "anderson"] = "jacobi",
    anderson_depth: int = 10,
) -> tuple[np.ndarray, SolveReport]:
    """Fixed point of the DPP operator.

    ``jacobi`` is plain ``u <- T u`` and the reference semantics.
    ``gauss_seidel`` sweeps in ascending node order; ``anderson`` mixes
    past iterates.  Both are accelerators: whatever the method, the
    returned field is ``T`` applied to the final iterate, and
    ``final_residual`` is its residual under ``T``.

    Raises :class:`NoConvergence` (carrying the last field and the report)
    when the tolerance is not reached within ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    init = init.lower()
    if init == "lower":
        u0, sign = initial_lower(instance), 1.0
    elif init == "upper":
        u0, sign = initial_upper(instance), -1.0
    else:
        raise ValueError(f"init must be 'lower' or 'upper', got {init!r}")

    history: list[float] = []
    violation = float("nan")
    if method == "jacobi":
        u, iters, violation, ok = _jacobi(instance, u0, tol, max_iter, sign, history)
    elif method == "gauss_seidel":
        u, iters, ok = _gauss_seidel(instance, u0, tol, max_iter, history)
    elif method == "anderson":
        u, iters, ok = _anderson(instance, u0, tol, max_iter, anderson_depth, history)
    else:
        raise ValueError(f"unknown method {method!r}")

    if method != "jacobi":
        u = apply_T(instance, u)
    final = residual(instance, u)
    report = SolveReport(
        iterations=iters,
        final_residual=final,
        monotone_violation=violation,
        init_mode=init,
        method=method,
        converged=ok and final <= tol,
        residual_history=history,
    )
    if not report.converged:
        raise NoConvergence(
            f"residual {final:.3e} > tol {tol:.1e} after {iters} iterations ({method})",
            field=u,
            report=report,
        )
    return u, report


def contact_mask(instance: ProblemInstance, u, tol: float) -> np.ndarray:
    """Interior nodes where ``u - Psi <= tol``."""
    u = np.asarray(u, dtype=float)
    return instance.grid.is_interior & (u - instance.Psi <= tol)


def write_contact_csv(path, instance: ProblemInstance, u, tol: float) -> None:
    """CSV of node coordinates, class, u, Psi and contact flag (u - Psi <= 10 tol)."""
    grid = instance.grid
    contact = contact_mask(instance, u, 10.0 * tol)
    coords = [f"x{d}" for d in range(grid.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", *coords, "class", "u", "psi", "contact"])
        for i in range(grid.n_nodes):
            writer.writerow(
                [
                    i,
                    *(repr(float(c)) for c in grid.nodes[i]),
                    "I" if grid.is_interior[i] else "B",
                    repr(float(u[i])),
                    repr(float(instance.Psi[i])),
                    int(contact[i]),
                ]
            )


def write_field_json(path, grid: Grid, u) -> None:
    with open(path, "w") as fh:
        json.dump(ScalarField(grid, np.asarray(u, dtype=float)).to_json(), fh)
        fh.write("\n")


def as_values(field_or_array) -> np.ndarray:
    if isinstance(field_or_array, ScalarField):
        return field_or_array.values
    return np.asarray(field_or_array, dtype=float)

