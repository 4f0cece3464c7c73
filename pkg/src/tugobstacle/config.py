"""JSON run configuration: parsing, defaults, validation and instance building.

Boundary data and obstacles are named function families with parameters,
for example ``{"kind": "bump", "center": [0.2, 0.1], "height": 0.4,
"curvature": 2.0}``.  Nothing in a config is evaluated as code.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import harness
from .calculus import QuadraticTest
from .dpp import ProblemInstance
from .errors import DataCompatibilityError
from .geometry import DomainSpec, build_grid

__all__ = [
    "ConfigError",
    "FUNCTION_KINDS",
    "STRATEGY_NAMES",
    "STOP_NAMES",
    "SOLVER_DEFAULTS",
    "RunConfig",
    "make_function",
    "load_config",
]

STRATEGY_NAMES = ("greedy_sup", "greedy_inf", "pull_toward", "noise_only")
STOP_NAMES = ("exit", "contact")

SOLVER_DEFAULTS = {
    "tol": 1e-10,
    "max_iter": 100_000,
    "init": "lower",
    "method": "jacobi",
    "contact_tol": 1e-8,
}
GAME_DEFAULTS = {
    "x0": None,
    "strategy_I": "greedy_sup",
    "strategy_II": "greedy_inf",
    "stop": "exit",
    "pull_target_I": None,
    "pull_target_II": None,
    "n_paths": 10_000,
    "seed": 0,
    "cap": None,
    "write_paths": True,
}
EXPERIMENT_DEFAULTS = {
    "family": None,
    "eps_ladder": None,
    "h_ratio": 1.0 / 6.0,
    "osc_r": 0.2,
}
MEANVALUE_DEFAULTS = {
    "A": None,
    "b": None,
    "c": 0.0,
    "x": None,
    "p": None,
    "eps_list": [0.1, 0.05, 0.025],
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _fn_constant(dim, value):
    return lambda x: np.full(len(np.atleast_2d(x)), float(value))


def _fn_affine(dim, a, c=0.0):
    a = np.asarray(a, dtype=float).reshape(dim)
    return lambda x: np.asarray(x, dtype=float).reshape(-1, dim) @ a + float(c)


def _fn_quadratic(dim, A, b=None, c=0.0):
    q = QuadraticTest(A, np.zeros(dim) if b is None else b, c)

    def f(x):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        return 0.5 * np.einsum("ij,jk,ik->i", x, q.A, x) + x @ q.b + q.c

    return f


def _fn_bump(dim, center, height, curvature):
    center = np.asarray(center, dtype=float).reshape(dim)

    def f(x):
        d = np.asarray(x, dtype=float).reshape(-1, dim) - center
        return float(height) - float(curvature) * np.sum(d * d, axis=1)

    return f


def _fn_radial_pharmonic(dim, p, center=None):
    return harness.reference_radial_pharmonic(float(p), dim, center)


FUNCTION_KINDS: dict[str, Callable[..., Callable]] = {
    "constant": _fn_constant,
    "affine": _fn_affine,
    "quadratic": _fn_quadratic,
    "bump": _fn_bump,
    "radial_pharmonic": _fn_radial_pharmonic,
}


def make_function(spec, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized function on (n, dim) point arrays from a named spec."""
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"function spec must be a number or an object with 'kind', got {spec!r}")
    kind = spec["kind"]
    if kind not in FUNCTION_KINDS:
        raise ConfigError(f"unknown function kind {kind!r}; valid kinds: {', '.join(FUNCTION_KINDS)}")
    params = {k: v for k, v in spec.items() if k != "kind"}
    try:
        return FUNCTION_KINDS[kind](dim, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for function kind {kind!r}: {exc}") from None


def _merge(defaults: dict, given: dict | None, section: str) -> dict:
    given = {} if given is None else dict(given)
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(sorted(unknown))}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class RunConfig:
    """Resolved configuration; ``doc`` is the fully defaulted JSON document."""

    doc: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {"family", "domain", "p", "alpha", "beta", "eps", "h", "h_ratio", "eps0", "F", "Psi",
                 "solver", "game", "experiment", "meanvalue", "workers"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
        doc: dict[str, Any] = {}
        fam = raw.get("family")
        if fam is not None:
            doc["family"] = _family_doc(fam)
        for key in ("domain", "p", "alpha", "beta", "eps", "h", "h_ratio", "eps0", "F", "Psi"):
            if key in raw:
                doc[key] = copy.deepcopy(raw[key])
        if "eps" in doc and "h" not in doc:
            doc["h_ratio"] = doc.get("h_ratio", 1.0 / 6.0)
        doc["solver"] = _merge(SOLVER_DEFAULTS, raw.get("solver"), "solver")
        doc["game"] = _merge(GAME_DEFAULTS, raw.get("game"), "game")
        doc["experiment"] = _merge(EXPERIMENT_DEFAULTS, raw.get("experiment"), "experiment")
        doc["meanvalue"] = _merge(MEANVALUE_DEFAULTS, raw.get("meanvalue"), "meanvalue")
        doc["workers"] = raw.get("workers")
        cfg = cls(doc)
        cfg.validate_common()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    # validation -------------------------------------------------------

    def validate_common(self) -> None:
        d = self.doc
        s = d["solver"]
        if s["init"] not in ("lower", "upper"):
            raise ConfigError("solver.init must be 'lower' or 'upper'")
        if s["method"] not in ("jacobi", "gauss_seidel", "anderson"):
            raise ConfigError("solver.method must be one of jacobi, gauss_seidel, anderson")
        if not (_is_number(s["tol"]) and s["tol"] > 0):
            raise ConfigError("solver.tol must be positive")
        if not (isinstance(s["max_iter"], int) and s["max_iter"] > 0):
            raise ConfigError("solver.max_iter must be a positive integer")
        if "alpha" in d or "beta" in d:
            if "p" in d:
                raise ConfigError("give either p or (alpha, beta), not both")
            if not (_is_number(d.get("alpha")) and _is_number(d.get("beta"))):
                raise ConfigError("alpha and beta must both be given as numbers")
            if abs(d["alpha"] + d["beta"] - 1.0) > 1e-12:
                raise DataCompatibilityError(
                    f"alpha + beta must equal 1, got {d['alpha']} + {d['beta']}"
                )
        w = d["workers"]
        if w is not None and not (isinstance(w, int) and w >= 1):
            raise ConfigError("workers must be a positive integer")

    # instance building ------------------------------------------------

    def _family(self) -> harness.InstanceFamily | None:
        fam = self.doc.get("family")
        if fam is None:
            return None
        return _build_family(fam)

    def family(self) -> harness.InstanceFamily:
        """Instance family from either a named family or explicit domain/F/Psi."""
        fam = self._family()
        if fam is not None:
            return fam
        d = self.doc
        if "domain" not in d or "F" not in d:
            raise ConfigError("config needs either 'family' or both 'domain' and 'F'")
        try:
            domain = DomainSpec.from_json(d["domain"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad domain: {exc}") from None
        F = make_function(d["F"], domain.dim)
        Psi = None if d.get("Psi") is None else make_function(d["Psi"], domain.dim)
        return harness.InstanceFamily("custom", domain, d.get("p"), F, Psi)

    def instance(self) -> ProblemInstance:
        d = self.doc
        if not _is_number(d.get("eps")) or d["eps"] <= 0:
            raise ConfigError("eps must be a positive number")
        eps = float(d["eps"])
        h = float(d["h"]) if "h" in d else eps * float(d["h_ratio"])
        if h <= 0:
            raise ConfigError("h must be positive")
        eps0 = float(d["eps0"]) if "eps0" in d else eps + h
        fam = self.family()
        grid = build_grid(fam.domain, h, eps0)
        p = d.get("p", fam.p)
        if p is None and "alpha" not in d:
            raise ConfigError("config needs p or (alpha, beta)")
        if "alpha" in d:
            return ProblemInstance.build(grid, eps, fam.F, fam.Psi, alpha=d["alpha"], beta=d["beta"])
        return ProblemInstance.build(grid, eps, fam.F, fam.Psi, p=float(p))

    def experiment(self) -> harness.ExperimentConfig:
        e = self.doc["experiment"]
        fam_doc = e["family"] if e["family"] is not None else self.doc.get("family")
        if fam_doc is None:
            raise ConfigError("experiment.family (or top-level family) is required")
        fam_doc = _family_doc(fam_doc)
        e["family"] = fam_doc
        fam = _build_family(fam_doc)
        if not e["eps_ladder"]:
            raise ConfigError("experiment.eps_ladder is required")
        s = self.doc["solver"]
        method = s["method"]
        return harness.ExperimentConfig(
            fam,
            tuple(e["eps_ladder"]),
            h_ratio=float(e["h_ratio"]),
            tol=float(s["tol"]),
            max_iter=int(s["max_iter"]),
            method=method,
            init=s["init"],
            osc_r=float(e["osc_r"]),
        )

    def quadratic(self) -> tuple[QuadraticTest, np.ndarray, float]:
        m = self.doc["meanvalue"]
        if m["A"] is None or m["b"] is None or m["x"] is None or m["p"] is None:
            raise ConfigError("meanvalue needs A, b, x and p")
        try:
            phi = QuadraticTest(m["A"], m["b"], m["c"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        x = np.asarray(m["x"], dtype=float)
        if x.shape != (phi.dim,):
            raise ConfigError("meanvalue.x must match the dimension of b")
        return phi, x, float(m["p"])


def _family_doc(fam) -> dict:
    doc = {"name": fam} if isinstance(fam, str) else dict(fam)
    name = doc.get("name")
    if name not in harness.FAMILIES:
        raise ConfigError(f"unknown family {name!r}; valid families: {', '.join(harness.FAMILIES)}")
    return doc


def _build_family(doc: dict) -> harness.InstanceFamily:
    kwargs = {k: v for k, v in doc.items() if k != "name"}
    try:
        return harness.FAMILIES[doc["name"]](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family {doc['name']!r}: {exc}") from None


def load_config(path) -> RunConfig:
    """Read and resolve a config file.  OSError propagates (I/O failure)."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return RunConfig.from_dict(raw)
