"""Domains, lattice discretizations X = interior + fattened boundary, and
epsilon-ball neighborhoods on the lattice.

Grid nodes are ``h * k`` for integer vectors ``k`` (anchored at the origin)
and are ordered lexicographically by ``k``.  Because of that ordering, a
neighborhood built from lexicographically sorted lattice offsets lists its
members in ascending node index, which fixes the summation order used by
the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import EmptyInterior, FatteningTooThin, RadiusExceedsFattening

__all__ = [
    "DomainSpec",
    "Grid",
    "Neighborhood",
    "NeighborTable",
    "build_grid",
    "ball_neighborhood",
    "distance_to_domain",
    "grid_to_json",
    "grid_from_json",
]

# Lattice points whose distance is within this relative margin below the
# radius are treated as lying on the sphere, hence outside the open ball.
# Keeps |y - x| < eps robust when eps is an exact multiple of h.
_STRICT_MARGIN = 1e-9

SHAPES = ("interval", "box", "disc", "annulus")


@dataclass(frozen=True)
class DomainSpec:
    """An open primitive domain in R^N.

    ``params`` holds the shape parameters as plain tuples:
    interval -> (a, b); box -> (lo, hi); disc -> (center, radius);
    annulus -> (center, r_in, r_out).
    """

    shape: str
    params: tuple
    dim: int

    @classmethod
    def interval(cls, a: float, b: float) -> "DomainSpec":
        if not a < b:
            raise ValueError(f"interval needs a < b, got ({a}, {b})")
        return cls("interval", (float(a), float(b)), 1)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "DomainSpec":
        lo = tuple(float(t) for t in lo)
        hi = tuple(float(t) for t in hi)
        if len(lo) != len(hi) or not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"box needs lo < hi componentwise, got {lo}, {hi}")
        return cls("box", (lo, hi), len(lo))

    @classmethod
    def disc(cls, center: Sequence[float], radius: float) -> "DomainSpec":
        center = tuple(float(t) for t in center)
        if radius <= 0:
            raise ValueError("disc radius must be positive")
        return cls("disc", (center, float(radius)), len(center))

    @classmethod
    def annulus(cls, center: Sequence[float], r_in: float, r_out: float) -> "DomainSpec":
        center = tuple(float(t) for t in center)
        if not 0 < r_in < r_out:
            raise ValueError("annulus needs 0 < r_in < r_out")
        return cls("annulus", (center, float(r_in), float(r_out)), len(center))

    def _as_points(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        if self.dim == 1 and pts.ndim <= 1:
            pts = pts.reshape(-1, 1)
        return np.atleast_2d(pts)

    def contains(self, x) -> np.ndarray:
        """Membership in the open set, vectorized over rows of ``x``."""
        pts = self._as_points(x)
        if self.shape == "interval":
            a, b = self.params
            return (pts[:, 0] > a) & (pts[:, 0] < b)
        if self.shape == "box":
            lo, hi = (np.asarray(t) for t in self.params)
            return np.all((pts > lo) & (pts < hi), axis=1)
        rho = np.linalg.norm(pts - np.asarray(self.params[0]), axis=1)
        if self.shape == "disc":
            return rho < self.params[1]
        return (rho > self.params[1]) & (rho < self.params[2])

    def distance(self, x) -> np.ndarray:
        """Euclidean distance to the closure, vectorized over rows of ``x``."""
        pts = self._as_points(x)
        if self.shape in ("interval", "box"):
            if self.shape == "interval":
                lo, hi = np.array([self.params[0]]), np.array([self.params[1]])
            else:
                lo, hi = (np.asarray(t) for t in self.params)
            gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
            return np.linalg.norm(gap, axis=1)
        rho = np.linalg.norm(pts - np.asarray(self.params[0]), axis=1)
        if self.shape == "disc":
            return np.maximum(rho - self.params[1], 0.0)
        r_in, r_out = self.params[1], self.params[2]
        return np.maximum(np.maximum(r_in - rho, rho - r_out), 0.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "interval":
            return np.array([self.params[0]]), np.array([self.params[1]])
        if self.shape == "box":
            return np.asarray(self.params[0]), np.asarray(self.params[1])
        c = np.asarray(self.params[0])
        r = self.params[-1]
        return c - r, c + r

    def translated(self, shift: Sequence[float]) -> "DomainSpec":
        s = np.asarray(shift, dtype=float).reshape(self.dim)
        if self.shape == "interval":
            a, b = self.params
            return DomainSpec.interval(a + s[0], b + s[0])
        if self.shape == "box":
            lo, hi = self.params
            return DomainSpec.box(np.add(lo, s), np.add(hi, s))
        center = tuple(np.add(self.params[0], s))
        return DomainSpec(self.shape, (center,) + tuple(self.params[1:]), self.dim)

    def to_json(self) -> dict:
        if self.shape == "interval":
            return {"shape": "interval", "a": self.params[0], "b": self.params[1]}
        if self.shape == "box":
            return {"shape": "box", "lo": list(self.params[0]), "hi": list(self.params[1])}
        if self.shape == "disc":
            return {"shape": "disc", "center": list(self.params[0]), "radius": self.params[1]}
        return {
            "shape": "annulus",
            "center": list(self.params[0]),
            "r_in": self.params[1],
            "r_out": self.params[2],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DomainSpec":
        shape = doc.get("shape")
        if shape == "interval":
            return cls.interval(doc["a"], doc["b"])
        if shape == "box":
            return cls.box(doc["lo"], doc["hi"])
        if shape == "disc":
            return cls.disc(doc["center"], doc["radius"])
        if shape == "annulus":
            return cls.annulus(doc["center"], doc["r_in"], doc["r_out"])
        raise ValueError(f"unknown domain shape {shape!r}; expected one of {SHAPES}")


def distance_to_domain(domain: DomainSpec, x) -> float:
    """Distance from a single point ``x`` to the closure of ``domain``."""
    return float(domain.distance(x)[0])


def _ball_offsets(radius_in_h: float, dim: int) -> np.ndarray:
    """Integer offsets ``k`` with ``|k| < radius_in_h``, lexicographically sorted."""
    bound = int(math.floor(radius_in_h))
    r2 = radius_in_h * radius_in_h * (1.0 - _STRICT_MARGIN)
    axes = [np.arange(-bound, bound + 1)] * dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    keep = np.sum(mesh * mesh, axis=1) < r2
    # meshgrid with 'ij' indexing already enumerates lexicographically
    return mesh[keep]


@dataclass(frozen=True)
class Neighborhood:
    center: int
    radius: float
    members: np.ndarray


@dataclass(frozen=True)
class NeighborTable:
    """Full-stencil neighborhoods of every interior node for one radius.

    ``nbr[r]`` lists (ascending) the node indices in the open ball around
    ``grid.interior[r]``; every row has the same length because the
    fattening guarantees full stencils for interior nodes.
    """

    eps: float
    offsets: np.ndarray
    nbr: np.ndarray

    @property
    def size(self) -> int:
        return self.nbr.shape[1]


@dataclass(eq=False)
class Grid:
    domain: DomainSpec
    h: float
    eps0: float
    lattice: np.ndarray  # (n, N) integer coordinates, lexicographic order
    is_interior: np.ndarray  # (n,) bool
    _lookup: np.ndarray = field(repr=False)
    _lookup_origin: np.ndarray = field(repr=False)
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.lattice.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.lattice.shape[0]

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.lattice * self.h

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.is_interior)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(~self.is_interior)

    @cached_property
    def interior_row(self) -> np.ndarray:
        """Map node index -> row in neighbor tables (-1 for boundary nodes)."""
        row = np.full(self.n_nodes, -1, dtype=np.int64)
        row[self.is_interior] = np.arange(int(self.is_interior.sum()))
        return row

    def index_of(self, k) -> np.ndarray:
        """Node indices of lattice points ``k`` (rows); -1 where absent."""
        k = np.atleast_2d(np.asarray(k, dtype=np.int64))
        rel = k - self._lookup_origin
        shape = np.asarray(self._lookup.shape)
        inside = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.full(k.shape[0], -1, dtype=np.int64)
        if inside.any():
            flat = np.ravel_multi_index(tuple(rel[inside].T), self._lookup.shape)
            out[inside] = self._lookup.ravel()[flat]
        return out

    def nearest_node(self, x) -> int:
        """Index of the grid node closest to point ``x`` (ties: lowest index)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        d2 = np.sum((self.nodes - x) ** 2, axis=1)
        return int(np.argmin(d2))

    def check_radius(self, eps: float) -> None:
        if eps <= 0:
            raise ValueError("radius must be positive")
        if eps > self.eps0 * (1.0 + 1e-12):
            raise RadiusExceedsFattening(
                f"eps={eps} exceeds the fattening width eps0={self.eps0}"
            )

    def neighbor_table(self, eps: float) -> NeighborTable:
        eps = float(eps)
        table = self._tables.get(eps)
        if table is not None:
            return table
        self.check_radius(eps)
        offsets = _ball_offsets(eps / self.h, self.dim)
        base = self.lattice[self.is_interior]
        nbr = np.empty((base.shape[0], offsets.shape[0]), dtype=np.int64)
        for j, off in enumerate(offsets):
            nbr[:, j] = self.index_of(base + off)
        if (nbr < 0).any():
            # cannot happen when eps <= eps0; guards against lookup bugs
            raise RuntimeError("interior stencil leaves the grid")
        table = NeighborTable(eps, offsets, nbr)
        self._tables[eps] = table
        return table

    def in_ball(self, x: int, y, eps: float) -> np.ndarray:
        """Whether nodes ``y`` lie in the open eps-ball around node ``x``."""
        diff = self.lattice[np.atleast_1d(y)] - self.lattice[x]
        r = eps / self.h
        return np.sum(diff * diff, axis=1) < r * r * (1.0 - _STRICT_MARGIN)


def build_grid(domain: DomainSpec, h: float, eps0: float) -> Grid:
    """Lattice of spacing ``h`` restricted to points within ``eps0`` of the domain.

    Lattice points in the open domain are Interior; the rest (including
    points on the topological boundary) are Boundary.
    """
    if h <= 0 or eps0 <= 0:
        raise ValueError("h and eps0 must be positive")
    if eps0 <= h * (1.0 + 1e-12):
        raise FatteningTooThin(f"eps0={eps0} must exceed the spacing h={h}")
    lo, hi = domain.bounds()
    kmin = np.floor((lo - eps0) / h).astype(np.int64) - 1
    kmax = np.ceil((hi + eps0) / h).astype(np.int64) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    pts = lattice * h
    keep = domain.distance(pts) < eps0
    lattice = lattice[keep]
    is_interior = domain.contains(lattice * h)
    if not is_interior.any():
        raise EmptyInterior("no lattice point lies inside the domain")

    shape = tuple((kmax - kmin + 1).tolist())
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[tuple((lattice - kmin).T)] = np.arange(lattice.shape[0])
    return Grid(domain, float(h), float(eps0), lattice, is_interior, lookup, kmin)


def ball_neighborhood(grid: Grid, node: int, eps: float) -> Neighborhood:
    """Grid nodes ``y`` with ``|y - x| < eps`` (the center included)."""
    grid.check_radius(eps)
    node = int(node)
    if grid.is_interior[node]:
        row = grid.interior_row[node]
        members = grid.neighbor_table(eps).nbr[row]
    else:
        offsets = _ball_offsets(eps / grid.h, grid.dim)
        idx = grid.index_of(grid.lattice[node] + offsets)
        members = idx[idx >= 0]
    return Neighborhood(node, float(eps), members)


def grid_to_json(grid: Grid) -> dict:
    return {
        "h": grid.h,
        "eps0": grid.eps0,
        "N": grid.dim,
        "nodes": grid.nodes.tolist(),
        "class": ["I" if c else "B" for c in grid.is_interior],
        "domain": grid.domain.to_json(),
    }


def grid_from_json(doc: dict) -> Grid:
    """Rebuild a grid from its JSON document and check it matches."""
    grid = build_grid(DomainSpec.from_json(doc["domain"]), doc["h"], doc["eps0"])
    nodes = np.asarray(doc["nodes"], dtype=float).reshape(-1, grid.dim)
    classes = np.array([c == "I" for c in doc["class"]])
    if nodes.shape != grid.nodes.shape or not np.allclose(nodes, grid.nodes):
        raise ValueError("grid document does not match its domain/h/eps0")
    if not np.array_equal(classes, grid.is_interior):
        raise ValueError("grid document classification does not match")
    return grid
