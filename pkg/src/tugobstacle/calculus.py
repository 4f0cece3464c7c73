"""Mean-value expansion of the p-Laplacian checked on quadratic test functions.

For phi(x) = 1/2 <Ax, x> + <b, x> + c the ball average is exact,

    avg_{B_eps(x)} phi = phi(x) + eps**2 * trace(A) / (2 (N + 2)),

and the extrema over the closed ball solve a trust-region subproblem, which
we solve exactly through the eigen-decomposition of A.  The defect

    a/2 sup phi + a/2 inf phi + b avg phi - phi(x)

divided by eps**2 tends to b / (2 (N + 2)) * (Lap phi + (p - 2) Lap_inf phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dpp import alpha_beta
from .errors import VanishingGradient

__all__ = [
    "QuadraticTest",
    "ExpansionCheck",
    "p_laplacian_quadratic",
    "infinity_laplacian_quadratic",
    "ball_min",
    "ball_max",
    "ball_average",
    "mean_value_defect",
    "expansion_limit_check",
    "minimizer_direction",
]


@dataclass(frozen=True)
class QuadraticTest:
    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape != (b.size, b.size):
            raise ValueError(f"A has shape {A.shape}, b has length {b.size}")
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.b.size

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b

    @property
    def laplacian(self) -> float:
        return float(np.trace(self.A))

    def scaled(self, lam: float) -> "QuadraticTest":
        return QuadraticTest(lam * self.A, lam * self.b, lam * self.c)

    def shifted(self, const: float) -> "QuadraticTest":
        return QuadraticTest(self.A, self.b, self.c + const)


def _unit_gradient(phi: QuadraticTest, x) -> tuple[np.ndarray, float]:
    g = phi.gradient(x)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise VanishingGradient(f"gradient vanishes at {np.asarray(x).tolist()}")
    return g / norm, norm


def infinity_laplacian_quadratic(phi: QuadraticTest, x) -> float:
    nu, _ = _unit_gradient(phi, x)
    return float(nu @ phi.A @ nu)


def p_laplacian_quadratic(phi: QuadraticTest, x, p: float) -> float:
    """|grad phi|^(p-2) (Lap phi + (p-2) Lap_inf phi) at ``x``."""
    nu, norm = _unit_gradient(phi, x)
    return norm ** (p - 2) * (phi.laplacian + (p - 2) * float(nu @ phi.A @ nu))


def _trust_region_min(g: np.ndarray, H: np.ndarray, r: float) -> np.ndarray:
    """Minimizer of g.z + 1/2 z.H.z over |z| <= r (exact, via eigen-decomposition).

    Off the interior case the minimizer is z(mu) = -(H + mu I)^-1 g with
    mu >= max(0, -lambda_min) chosen so that |z(mu)| = r; |z(mu)| is
    decreasing in mu, so the root is bracketed and found with Brent's method.
    When g has no component along the lowest eigenvectors (the "hard case")
    the remaining length is made up along one of them.
    """
    lam, Q = np.linalg.eigh(H)
    gt = Q.T @ g
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam[0] > 1e-12 * scale:
        z = -gt / lam
        if np.linalg.norm(z) <= r:
            return Q @ z

    lo = max(0.0, -lam[0])
    low = lam + lo <= 1e-12 * scale
    gnorm = float(np.linalg.norm(gt))
    hard = not np.any(low & (np.abs(gt) > 1e-14 * max(gnorm, scale * r)))
    rest = ~low if hard else np.ones_like(low)

    def norm_z(mu):
        return float(np.linalg.norm(gt[rest] / (lam[rest] + mu)))

    if hard:
        z = np.zeros_like(gt)
        z[rest] = -gt[rest] / (lam[rest] + lo)
        if np.linalg.norm(z) <= r:
            if np.any(low):
                z[np.flatnonzero(low)[0]] = np.sqrt(max(r * r - float(z @ z), 0.0))
            return Q @ z

    delta = 1e-8 * scale
    while norm_z(lo + delta) <= r:
        delta *= 1e-4
    hi = lo + gnorm / r + scale
    mu = brentq(lambda m: norm_z(m) - r, lo + delta, hi, xtol=1e-300, maxiter=500)
    z = np.zeros_like(gt)
    z[rest] = -gt[rest] / (lam[rest] + mu)
    return Q @ z


def ball_min(phi: QuadraticTest, x, eps: float) -> tuple[float, np.ndarray]:
    """Minimum of ``phi`` over the closed ball and a minimizer."""
    x = np.asarray(x, dtype=float)
    z = _trust_region_min(phi.gradient(x), phi.A, eps)
    return phi(x + z), x + z


def ball_max(phi: QuadraticTest, x, eps: float) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    z = _trust_region_min(-phi.gradient(x), -phi.A, eps)
    return phi(x + z), x + z


def ball_average(phi: QuadraticTest, x, eps: float) -> float:
    return phi(x) + eps**2 * phi.laplacian / (2 * (phi.dim + 2))


def mean_value_defect(phi: QuadraticTest, x, eps: float, alpha: float, beta: float) -> float:
    x = np.asarray(x, dtype=float)
    g = phi.gradient(x)
    # increments over phi(x) are formed directly to avoid cancellation
    z_min = _trust_region_min(g, phi.A, eps)
    z_max = _trust_region_min(-g, -phi.A, eps)
    up = g @ z_max + 0.5 * z_max @ phi.A @ z_max
    down = g @ z_min + 0.5 * z_min @ phi.A @ z_min
    return float(
        0.5 * alpha * up + 0.5 * alpha * down + beta * eps**2 * phi.laplacian / (2 * (phi.dim + 2))
    )


def minimizer_direction(phi: QuadraticTest, x, eps: float) -> np.ndarray:
    """(argmin over the closed ball - x) / eps; tends to -grad/|grad|."""
    _, xbar = ball_min(phi, x, eps)
    return (xbar - np.asarray(x, dtype=float)) / eps


@dataclass(frozen=True)
class ExpansionCheck:
    estimated_limit: float
    reference: float
    rel_error: float
    ratios: tuple


def expansion_limit_check(
    phi: QuadraticTest, x, p: float, N: int | None = None, eps_list=(0.1, 0.05, 0.025)
) -> ExpansionCheck:
    """Extrapolate defect/eps**2 to eps -> 0 and compare with the p-Laplacian term.

    defect/eps**2 is even in eps for quadratics, so it is fitted as a
    polynomial in eps**2 (Richardson extrapolation); the constant term is
    the estimated limit.  When the reference vanishes the absolute error is
    reported, which is 0 for affine ``phi``.
    """
    N = phi.dim if N is None else N
    if N != phi.dim:
        raise ValueError(f"N={N} does not match the test function dimension {phi.dim}")
    eps = np.asarray(eps_list, dtype=float)
    if eps.size < 3 or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_list needs at least 3 strictly decreasing entries")
    nu, _ = _unit_gradient(phi, x)
    alpha, beta = alpha_beta(p, N)
    reference = beta / (2 * (N + 2)) * (phi.laplacian + (p - 2) * float(nu @ phi.A @ nu))
    ratios = np.array([mean_value_defect(phi, x, e, alpha, beta) / e**2 for e in eps])
    deg = min(eps.size - 1, 2)
    coeffs = np.polyfit(eps**2, ratios, deg)
    limit = float(coeffs[-1])
    err = abs(limit - reference)
    rel = err / abs(reference) if abs(reference) > 1e-14 else (0.0 if err <= 1e-12 else err)
    return ExpansionCheck(limit, reference, rel, tuple(ratios.tolist()))
