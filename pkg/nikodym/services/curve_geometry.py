"""
Curves on I = [-1, 1], their non-degeneracy structure and the rescaling maps.

A curve is an immutable value carrying a vectorized derivative oracle
``oracle(i, s) -> array of shape s.shape + (d,)``. Closed-form oracles ship for
the registry curves; arbitrary callables get central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq
from scipy.special import binom, factorial

from ..config import settings
from ..errors import DegenerateCurveError, InvalidInputError
from ..schemas import NondegeneracyReport

logger = logging.getLogger(__name__)

DerivativeOracle = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Curve:
    name: str
    d: int
    oracle: DerivativeOracle = field(repr=False, compare=False)
    B: float = 10.0

    def eval(self, i: int, s) -> np.ndarray:
        if i < 0 or i > 2 * self.d:
            raise InvalidInputError(f"derivative order {i} outside 0..{2 * self.d}")
        s_arr = np.asarray(s, dtype=float)
        return np.asarray(self.oracle(i, s_arr), dtype=float)

    def derivatives(self, s, L: int) -> np.ndarray:
        """Matrix (γ'(s) … γ^(L)(s)) of shape s.shape + (d, L)."""
        cols = [self.eval(i, s) for i in range(1, L + 1)]
        return np.stack(cols, axis=-1)


# ── Registry curves ─────────────────────────────────────────────────────────

def moment_curve(d: int) -> Curve:
    j = np.arange(1, d + 1)

    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        k = j - i
        kk = np.maximum(k, 0)
        vals = np.power(s[..., None], kk) / factorial(kk)
        return np.where(k >= 0, vals, 0.0)

    return Curve(name=f"moment(d={d})", d=d, oracle=oracle)


def circle_lift() -> Curve:
    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        phase = s + i * np.pi / 2
        return np.stack([np.cos(phase), np.sin(phase)], axis=-1)

    return Curve(name="circle2d", d=2, oracle=oracle)


def helix() -> Curve:
    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        phase = s + i * np.pi / 2
        if i == 0:
            third = s
        elif i == 1:
            third = np.ones_like(s)
        else:
            third = np.zeros_like(s)
        return np.stack([np.cos(phase), np.sin(phase), third], axis=-1)

    return Curve(name="helix", d=3, oracle=oracle)


def straight_line(d: int) -> Curve:
    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        out = np.zeros(s.shape + (d,))
        if i == 0:
            out[..., 0] = s
        elif i == 1:
            out[..., 0] = 1.0
        return out

    return Curve(name=f"line(d={d})", d=d, oracle=oracle)


def perturbed_moment_curve(d: int, eps: float) -> Curve:
    base = moment_curve(d)
    odd = (np.arange(1, d + 1) % 2) == 1

    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        phase = s[..., None] + i * np.pi / 2
        wiggle = np.where(odd, np.sin(phase), np.cos(phase))
        return base.oracle(i, s) + eps * wiggle

    return Curve(name=f"perturbed-moment(d={d},eps={eps:g})", d=d, oracle=oracle)


def from_function(name: str, d: int, fn: Callable[[np.ndarray], np.ndarray]) -> Curve:
    """Curve from a vectorized callable; derivatives by central differences."""
    eps = np.finfo(float).eps

    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        if i == 0:
            return np.asarray(fn(s), dtype=float)
        h = np.asarray(max(1e-4, eps ** (1.0 / (i + 2))) * np.maximum(1.0, np.abs(s)))
        total = 0.0
        for k in range(i + 1):
            shift = (i / 2.0 - k) * h
            total = total + ((-1) ** k) * binom(i, k) * np.asarray(fn(s + shift), dtype=float)
        return total / (h ** i)[..., None]

    return Curve(name=name, d=d, oracle=oracle)


CURVE_KEYS = ("moment", "circle2d", "helix", "line", "perturbed-moment")


def get_curve(key: str, d: Optional[int] = None) -> Curve:
    """Resolve a registry key such as ``moment`` or ``perturbed-moment:eps=1e-3``."""
    base, _, params = key.partition(":")
    opts = {}
    for part in filter(None, params.split(",")):
        k, _, v = part.partition("=")
        opts[k.strip()] = v.strip()

    if base == "circle2d":
        if d not in (None, 2):
            raise InvalidInputError("circle2d lives in d=2")
        return circle_lift()
    if base == "helix":
        if d not in (None, 3):
            raise InvalidInputError("helix lives in d=3")
        return helix()
    dim = 2 if d is None else int(d)
    if dim < 1:
        raise InvalidInputError(f"dimension must be positive, got {dim}")
    if base == "moment":
        return moment_curve(dim)
    if base == "line":
        return straight_line(dim)
    if base == "perturbed-moment":
        return perturbed_moment_curve(dim, float(opts.get("eps", "1e-3")))
    raise InvalidInputError(f"unknown curve '{key}' (known: {', '.join(CURVE_KEYS)})")


# ── Non-degeneracy ──────────────────────────────────────────────────────────

def generalized_determinant(curve: Curve, s, L: int):
    """Volume of the parallelepiped spanned by γ'(s), …, γ^(L)(s) (Gram convention)."""
    if not 1 <= L <= curve.d:
        raise InvalidInputError(f"L must be in 1..{curve.d}, got {L}")
    M = curve.derivatives(s, L)
    gram = np.swapaxes(M, -1, -2) @ M
    det = np.linalg.det(gram)
    out = np.sqrt(np.maximum(det, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def _sampled_statistics(curve: Curve, L: int, s_samples: int) -> tuple[float, float]:
    s = np.linspace(-1.0, 1.0, s_samples)
    min_det = float(np.min(generalized_determinant(curve, s, L)))
    max_cnorm = max(
        float(np.max(np.linalg.norm(curve.eval(i, s), axis=-1))) for i in range(2 * curve.d + 1)
    )
    return min_det, max_cnorm


def check_class_membership(
    curve: Curve, B: float, L: int, s_samples: Optional[int] = None
) -> NondegeneracyReport:
    n = s_samples or settings.MEMBERSHIP_SAMPLES
    if B <= 1:
        raise InvalidInputError("B must exceed 1")
    if n < 2:
        raise InvalidInputError("need at least two s-samples")
    min_det, max_cnorm = _sampled_statistics(curve, L, n)
    return NondegeneracyReport(
        curve=curve.name,
        L=L,
        B=B,
        min_gen_det=min_det,
        max_cnorm=max_cnorm,
        samples=n,
        passes=bool(min_det >= 1.0 / B and max_cnorm <= B),
    )


def class_bound(curve: Curve, L: int, s_samples: Optional[int] = None) -> float:
    """Smallest B for which the sampled membership check in 𝔊(B, L) passes."""
    min_det, max_cnorm = _sampled_statistics(curve, L, s_samples or settings.MEMBERSHIP_SAMPLES)
    if min_det <= 0:
        return float("inf")
    return max(max_cnorm, 1.0 / min_det)


def frenet_frame(curve: Curve, s: float, tol: Optional[float] = None) -> np.ndarray:
    """Rows e_1(s), …, e_d(s) by re-orthogonalized Gram–Schmidt on the derivatives."""
    tol = settings.FRAME_PIVOT_TOL if tol is None else tol
    M = curve.derivatives(float(s), curve.d)
    basis: list[np.ndarray] = []
    for k in range(curve.d):
        col = M[:, k]
        v = col.copy()
        for _ in range(2):
            for e in basis:
                v -= (e @ v) * e
        norm = np.linalg.norm(v)
        if norm < tol * max(1.0, np.linalg.norm(col)):
            raise DegenerateCurveError(f"frame pivot vanishes at order {k + 1} (s={s:g})", order=k + 1)
        basis.append(v / norm)
    return np.array(basis)


def frenet_frames(curve: Curve, s, tol: Optional[float] = None) -> np.ndarray:
    """Vectorized frames: shape s.shape + (d, d), rows e_k(s)."""
    tol = settings.FRAME_PIVOT_TOL if tol is None else tol
    M = curve.derivatives(np.asarray(s, dtype=float), curve.d)
    rows: list[np.ndarray] = []
    for k in range(curve.d):
        col = M[..., :, k]
        v = col.copy()
        for _ in range(2):
            for e in rows:
                v = v - np.sum(e * v, axis=-1, keepdims=True) * e
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(norm < tol * np.maximum(1.0, np.linalg.norm(col, axis=-1, keepdims=True))):
            raise DegenerateCurveError(f"frame pivot vanishes at order {k + 1}", order=k + 1)
        rows.append(v / norm)
    return np.stack(rows, axis=-2)


# ── σ(ξ) ────────────────────────────────────────────────────────────────────

def _check_sigma_args(curve: Curve, N: int) -> None:
    if not 2 <= N <= curve.d:
        raise InvalidInputError(f"N must be in 2..{curve.d}, got {N}")


def solve_sigma(curve: Curve, xi, N: int, grid: Optional[int] = None) -> Optional[float]:
    """Root of s ↦ ⟨γ^(N-1)(s), ξ⟩ on I, or None when no sign change is bracketed."""
    xi = np.asarray(xi, dtype=float)
    norm = np.linalg.norm(xi)
    if norm == 0:
        raise InvalidInputError("σ(ξ) is undefined at ξ = 0")
    _check_sigma_args(curve, N)

    def f(s: float) -> float:
        return float(curve.eval(N - 1, s) @ xi)

    s_grid = np.linspace(-1.0, 1.0, grid or settings.SIGMA_GRID)
    vals = curve.eval(N - 1, s_grid) @ xi
    roots = [float(s) for s, v in zip(s_grid, vals) if v == 0.0]
    for k in np.nonzero(vals[:-1] * vals[1:] < 0)[0]:
        roots.append(brentq(f, s_grid[k], s_grid[k + 1], xtol=settings.SIGMA_TOL))
    if not roots:
        return None
    residual = np.array([abs(f(r)) for r in roots])
    best = residual.min() + 1e-10 * norm
    return min(r for r, res in zip(roots, residual) if res <= best)


def solve_sigma_many(curve: Curve, xis: np.ndarray, N: int, grid: Optional[int] = None) -> np.ndarray:
    """Vectorized σ for rows of ``xis``; NaN where no root is bracketed on I."""
    _check_sigma_args(curve, N)
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    if xis.shape[0] == 0:
        return np.empty(0)
    s_grid = np.linspace(-1.0, 1.0, grid or settings.SIGMA_GRID)
    F = curve.eval(N - 1, s_grid) @ xis.T
    bracket = F[:-1] * F[1:] <= 0
    has_root = bracket.any(axis=0)
    first = np.argmax(bracket, axis=0)
    cols = np.arange(xis.shape[0])
    lo = s_grid[first].copy()
    hi = s_grid[first + 1].copy()
    f_lo = F[first, cols]
    while np.max(hi - lo) > settings.SIGMA_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = np.einsum("md,md->m", curve.eval(N - 1, mid), xis)
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    return np.where(has_root, 0.5 * (lo + hi), np.nan)


# ── Rescaling ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class RescalingMap:
    s0: float
    rho: float
    N: int
    matrix: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)
    inverse_transpose: np.ndarray = field(repr=False)
    basis_condition: float = 1.0

    @property
    def expected_determinant(self) -> float:
        d = self.matrix.shape[0]
        return self.rho ** (self.N * (self.N + 1) // 2 + self.N * (d - self.N))

    def residuals(self, curve: Curve) -> dict:
        """Relative residuals of the defining eigen-relations and the norm bound."""
        V = curve.derivatives(self.s0, self.N)
        eig = max(
            np.linalg.norm(self.matrix @ V[:, i - 1] - self.rho ** i * V[:, i - 1])
            / (self.rho ** i * np.linalg.norm(V[:, i - 1]))
            for i in range(1, self.N + 1)
        )
        W = null_space(V.T)
        perp = 0.0
        if W.size:
            perp = float(np.max(np.linalg.norm(self.matrix @ W - self.rho ** self.N * W, axis=0))) / self.rho ** self.N
        inv_norm = float(np.linalg.norm(self.inverse, 2)) * self.rho ** self.N
        det_rel = abs(abs(np.linalg.det(self.matrix)) - self.expected_determinant) / self.expected_determinant
        return {
            "eigen_residual": float(eig),
            "complement_residual": perp,
            "inverse_norm_scaled": inv_norm,
            "inverse_norm_bound": self.basis_condition,
            "determinant_residual": float(det_rel),
        }


def build_rescaling_map(curve: Curve, s0: float, rho: float, N: int) -> RescalingMap:
    if not 0 < rho < 1:
        raise InvalidInputError(f"rho must lie in (0,1), got {rho}")
    if s0 - rho < -1 - 1e-12 or s0 + rho > 1 + 1e-12:
        raise InvalidInputError(f"window [s0-rho, s0+rho] = [{s0 - rho:g}, {s0 + rho:g}] leaves I")
    if not 1 <= N <= curve.d:
        raise InvalidInputError(f"N must be in 1..{curve.d}")
    if generalized_determinant(curve, s0, N) <= settings.FRAME_PIVOT_TOL:
        raise DegenerateCurveError(f"derivative span degenerate at s0={s0:g}", order=N)

    V = curve.derivatives(s0, N)
    P = np.hstack([V, null_space(V.T)])
    exps = np.concatenate([np.arange(1, N + 1), np.full(curve.d - N, N)])
    scale = rho ** exps.astype(float)
    P_inv = np.linalg.inv(P)
    T = P @ np.diag(scale) @ P_inv
    T_inv = P @ np.diag(1.0 / scale) @ P_inv
    return RescalingMap(
        s0=float(s0),
        rho=float(rho),
        N=N,
        matrix=T,
        inverse=T_inv,
        inverse_transpose=T_inv.T,
        basis_condition=float(np.linalg.cond(P)),
    )


def rescale_curve(curve: Curve, tmap: RescalingMap) -> Curve:
    """γ̃(s) = T⁻¹(γ(s0+ρs) − γ(s0)), with derivatives ρ^i T⁻¹ γ^(i)(s0+ρs)."""
    s0, rho, Tinv_T = tmap.s0, tmap.rho, tmap.inverse.T
    anchor = curve.eval(0, s0)

    def oracle(i: int, s: np.ndarray) -> np.ndarray:
        u = s0 + rho * s
        if i == 0:
            return (curve.eval(0, u) - anchor) @ Tinv_T
        return rho ** i * (curve.eval(i, u) @ Tinv_T)

    name = f"{curve.name}|rescaled(s0={s0:.6g},rho={rho:.6g},N={tmap.N})"
    return Curve(name=name, d=curve.d, oracle=oracle, B=curve.B)
