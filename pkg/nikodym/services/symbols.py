"""
Cutoff functions and the symbols a(ξ, s, t) of the decomposition.

Symbols are lazy: each one is a closure over cutoffs and a curve, evaluated
pointwise on arrays. ``xi`` has shape (..., d); ``s`` and ``t`` broadcast
against ``xi.shape[:-1]``. Every symbol carries a sampler that draws candidate
points from a box known to contain its support.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import jv
from scipy.stats import qmc

from ..errors import CalibrationError, InvalidInputError
from .curve_geometry import (
    Curve,
    RescalingMap,
    frenet_frames,
    rescale_curve,
    solve_sigma,
    solve_sigma_many,
)
from .tube_geometry import ScaleVector, ball_volume, check_admissible

logger = logging.getLogger(__name__)


# ── Smooth building blocks ──────────────────────────────────────────────────

def _exp_inv(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def smooth_step(x):
    """C^∞ step: 0 for x ≤ 0, 1 for x ≥ 1, and S(x) + S(1-x) = 1."""
    a = _exp_inv(x)
    b = _exp_inv(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def _bump(r):
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 0.5
    with np.errstate(divide="ignore", over="ignore"):
        val = np.exp(-1.0 / np.where(inside, 1.0 - 4.0 * r * r, 1.0))
    return np.where(inside, val, 0.0)


@dataclass(frozen=True, eq=False)
class CutoffLibrary:
    psi: Callable = field(repr=False)
    psi_check: Callable = field(repr=False)
    eta: Callable = field(repr=False)
    beta: Callable = field(repr=False)
    eta1: Callable = field(repr=False)
    beta1: Callable = field(repr=False)
    zeta: Callable = field(repr=False)
    zeta_tilde: Callable = field(repr=False)
    chi_tilde_I: Callable = field(repr=False)
    chi_interior: Callable = field(repr=False)
    c0: float = 0.0
    residuals: dict = field(default_factory=dict)


def _make_psi():
    # ψ = (b * b) / (b * b)(0) for an even bump b on [-1/2, 1/2], so ψ̌ = |b̌|² / ‖b‖² ≥ 0
    m = 4097
    r = np.linspace(-0.5, 0.5, m)
    dr = r[1] - r[0]
    b = _bump(r)
    auto = np.convolve(b, b) * dr
    grid = np.linspace(-1.0, 1.0, 2 * m - 1)
    auto = auto / auto[m - 1]
    half = grid >= 0
    spline = CubicSpline(grid[half], auto[half], bc_type=((1, 0.0), (1, 0.0)))

    def psi(x):
        a = np.abs(np.asarray(x, dtype=float))
        return np.where(a < 1.0, spline(np.minimum(a, 1.0)), 0.0)

    nodes, weights = np.polynomial.legendre.leggauss(256)
    nodes = 0.5 * nodes
    weights = 0.5 * weights
    b_nodes = _bump(nodes)
    b_sq = float(np.sum(weights * b_nodes ** 2))

    def psi_check(y):
        y = np.asarray(y, dtype=float)
        bc = np.cos(np.multiply.outer(y, nodes)) @ (weights * b_nodes)
        return bc ** 2 / b_sq

    return psi, psi_check


def _verify_cutoffs(lib: CutoffLibrary) -> dict:
    out: dict[str, float] = {}
    r = np.linspace(-2.0 ** 9, 2.0 ** 9, 10_000)
    total = lib.eta(r) + sum(lib.beta(r / 2.0 ** j) for j in range(1, 11))
    out["littlewood_paley"] = float(np.max(np.abs(total - 1.0)))
    r1 = np.linspace(-4.0 ** 8, 4.0 ** 8, 10_000)
    total1 = lib.eta1(r1) + sum(lib.beta1(r1 / 4.0 ** n) for n in range(1, 10))
    out["littlewood_paley_1"] = float(np.max(np.abs(total1 - 1.0)))
    z = np.linspace(-5.0, 5.0, 10_000)
    out["zeta_partition"] = float(np.max(np.abs(sum(lib.zeta(z - nu) for nu in range(-7, 8)) - 1.0)))
    zz = np.linspace(-6.0, 6.0, 10_000)
    zt = lib.zeta_tilde(zz)
    out["zeta_tilde"] = float(max(
        np.max(np.abs(zt[np.abs(zz) <= 3] - 1.0)), np.max(np.abs(zt[np.abs(zz) >= 4]))
    ))
    supports = [
        (lib.psi, 1.0, None), (lib.eta, 2.0, None), (lib.beta, 2.0, 0.5),
        (lib.eta1, 4.0, None), (lib.beta1, 4.0, 0.25), (lib.zeta, 1.0, None),
    ]
    worst = 0.0
    probe = np.linspace(-10.0, 10.0, 20_001)
    for fn, outer, hole in supports:
        mask = np.abs(probe) >= outer
        if hole is not None:
            mask |= np.abs(probe) <= hole
        worst = max(worst, float(np.max(np.abs(fn(probe[mask])))))
    out["support_leak"] = worst
    y = np.linspace(-200.0, 200.0, 10_000)
    out["psi_check_min"] = float(np.min(lib.psi_check(y)))
    return out


@functools.lru_cache(maxsize=1)
def build_cutoffs() -> CutoffLibrary:
    psi, psi_check = _make_psi()

    def phi(x, inner, outer):
        return smooth_step((outer - np.abs(np.asarray(x, dtype=float))) / (outer - inner))

    eta = functools.partial(phi, inner=1.0, outer=2.0)
    eta1 = functools.partial(phi, inner=1.0, outer=4.0)

    def beta(x):
        return eta(x) - eta(2.0 * np.asarray(x, dtype=float))

    def beta1(x):
        return eta1(x) - eta1(4.0 * np.asarray(x, dtype=float))

    def zeta(x):
        return smooth_step(1.0 - np.abs(np.asarray(x, dtype=float)))

    zeta_tilde = functools.partial(phi, inner=3.0, outer=4.0)
    chi_interior = functools.partial(phi, inner=0.75, outer=1.0)

    c0 = float(np.min(psi_check(np.linspace(-1.0, 1.0, 10_000))))
    lib = CutoffLibrary(
        psi=psi, psi_check=psi_check, eta=eta, beta=beta, eta1=eta1, beta1=beta1,
        zeta=zeta, zeta_tilde=zeta_tilde, chi_tilde_I=eta, chi_interior=chi_interior, c0=c0,
    )
    residuals = _verify_cutoffs(lib)
    if c0 <= 0 or residuals["psi_check_min"] < 0:
        raise CalibrationError("inverse transform of psi is not positive", worst_point=residuals)
    logger.info("cutoffs built: c0=%.4g, residuals=%s", c0, residuals)
    return replace(lib, residuals=residuals)


# ── Symbols ─────────────────────────────────────────────────────────────────

Sampler = Callable[..., tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class SymbolMeta:
    lam: float = 0.0
    A: Optional[float] = None
    L: Optional[int] = None
    curve: Optional[Curve] = None
    support_hint: Optional[Callable] = None
    sampler: Optional[Sampler] = None
    s_window: Optional[Callable] = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Symbol:
    name: str
    fn: Callable = field(repr=False)
    meta: SymbolMeta = field(default_factory=SymbolMeta)

    def eval(self, xi, s, t) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(xi.shape[:-1], s.shape, t.shape)
        return np.broadcast_to(np.asarray(self.fn(xi, s, t)), shape)

    __call__ = eval

    def times(self, factor: Callable, name: str, **meta_changes) -> "Symbol":
        base = self.fn

        def fn(xi, s, t):
            return base(xi, s, t) * factor(xi, s, t)

        return Symbol(name=name, fn=fn, meta=replace(self.meta, **meta_changes))


def inner(curve: Curve, i: int, xi: np.ndarray, s) -> np.ndarray:
    """⟨γ^(i)(s), ξ⟩ broadcast over xi.shape[:-1] and s."""
    xi = np.asarray(xi, dtype=float)
    s = np.asarray(s, dtype=float)
    shape = np.broadcast_shapes(xi.shape[:-1], s.shape)
    g = curve.eval(i, np.broadcast_to(s, shape))
    return np.einsum("...d,...d->...", g, np.broadcast_to(xi, shape + xi.shape[-1:]))


def _sobol(dim: int, n: int, seed: int) -> np.ndarray:
    m = max(1, math.ceil(math.log2(max(n, 2))))
    return qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)[:n]


def annulus_sampler(d: int, r_min: float, r_max: float) -> Sampler:
    """Candidates with r_min ≤ |ξ| ≤ r_max, s ∈ I, t = 0."""

    def sample(n: int, seed: int, s_range: Optional[tuple[float, float]] = None):
        lo, hi = s_range or (-1.0, 1.0)
        u = _sobol(d + 1, 4 * n, seed)
        xi = (2.0 * u[:, :d] - 1.0) * r_max
        norm = np.linalg.norm(xi, axis=-1)
        keep = (norm >= r_min) & (norm <= r_max)
        xi = xi[keep][:n]
        s = lo + (hi - lo) * u[keep, d][:n]
        return xi, s, np.zeros(len(s))

    return sample


def dual_box_sampler(curve: Curve, v_bounds: np.ndarray, r_min: float, r_max: float) -> Sampler:
    """Candidates parametrized by v_i = ⟨γ^(i)(s), ξ⟩ ∈ [-v_bounds_i, v_bounds_i], i = 1..d."""
    d = curve.d

    def sample(n: int, seed: int, s_range: Optional[tuple[float, float]] = None):
        lo, hi = s_range or (-1.0, 1.0)
        u = _sobol(d + 1, 8 * n, seed)
        s = lo + (hi - lo) * u[:, 0]
        v = (2.0 * u[:, 1:] - 1.0) * v_bounds
        M = curve.derivatives(s, d)
        xi = np.linalg.solve(np.swapaxes(M, -1, -2), v[..., None])[..., 0]
        norm = np.linalg.norm(xi, axis=-1)
        keep = (norm >= r_min) & (norm <= r_max)
        return xi[keep][:n], s[keep][:n], np.zeros(int(min(n, keep.sum())))

    return sample


def support_points(symbol: Symbol, n: int, seed: int, s_range=None, threshold: float = 1e-14):
    """Sampled points where the symbol does not vanish."""
    if symbol.meta.sampler is None:
        raise InvalidInputError(f"symbol '{symbol.name}' has no sampler")
    xi, s, t = symbol.meta.sampler(n, seed, s_range)
    if len(s) == 0:
        return xi, s, t
    vals = np.abs(symbol.eval(xi, s, t))
    keep = vals > threshold
    return xi[keep], s[keep], t[keep]


def build_a_delta(lib: CutoffLibrary, delta: float, curve: Optional[Curve] = None, d: Optional[int] = None) -> Symbol:
    """a_δ(ξ,s,t) = ψ(δ|ξ|) χ̃_I(s) χ̃_I(t)."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0,1), got {delta}")
    dim = curve.d if curve is not None else (d or 2)

    def fn(xi, s, t):
        return lib.psi(delta * np.linalg.norm(xi, axis=-1)) * lib.chi_tilde_I(s) * lib.chi_tilde_I(t)

    meta = SymbolMeta(
        lam=1.0 / delta,
        curve=curve,
        support_hint=lambda xi, s, t: np.linalg.norm(xi, axis=-1) <= 1.0 / delta,
        sampler=annulus_sampler(dim, 0.0, 1.0 / delta),
        extra={"delta": delta},
    )
    return Symbol(name=f"a_delta({delta:g})", fn=fn, meta=meta)


def _is_dyadic(lam: float) -> bool:
    if lam < 2:
        return False
    k = math.log2(lam)
    return abs(k - round(k)) < 1e-12


def littlewood_paley_piece(a: Symbol, lib: CutoffLibrary, lam: float) -> Symbol:
    """a^λ = a·η(|ξ|) for λ = 0 and a·β(|ξ|/λ) for dyadic λ ≥ 2."""
    if lam == 0:
        factor = lambda xi, s, t: lib.eta(np.linalg.norm(xi, axis=-1))  # noqa: E731
        r_min, r_max = 0.0, 2.0
    elif _is_dyadic(lam):
        factor = lambda xi, s, t: lib.beta(np.linalg.norm(xi, axis=-1) / lam)  # noqa: E731
        r_min, r_max = lam / 2.0, 2.0 * lam
    else:
        raise InvalidInputError(f"lambda must be 0 or a power of two >= 2, got {lam}")
    dim = a.meta.curve.d if a.meta.curve is not None else 2
    return a.times(
        factor,
        name=f"{a.name}^{lam:g}",
        lam=float(lam) if lam else 1.0,
        sampler=annulus_sampler(dim, r_min, r_max),
        support_hint=lambda xi, s, t: (np.linalg.norm(xi, axis=-1) >= r_min) & (np.linalg.norm(xi, axis=-1) <= r_max),
        extra={**a.meta.extra, "annulus": (r_min, r_max)},
    )


def calibrate_type_constant(a: Symbol, curve: Curve, L: int, samples: int = 4096, seed: int = 0) -> float:
    """Smallest A with A⁻¹|ξ| ≤ Σ_{i≤L} |⟨γ^(i)(s), ξ⟩| ≤ A|ξ| on sampled supp a."""
    xi, s, _ = support_points(a, samples, seed)
    if len(s) == 0:
        raise CalibrationError(f"no support points for '{a.name}'")
    total = sum(np.abs(inner(curve, i, xi, s)) for i in range(1, L + 1))
    ratio = total / np.linalg.norm(xi, axis=-1)
    return float(max(ratio.max(), 1.0 / ratio.min()))


def build_base_case_symbol(lib: CutoffLibrary, curve: Curve, lam: float, A: float) -> Symbol:
    """Type-(λ, 2A, 1) symbol vanishing smoothly at the ends of I in s."""

    def fn(xi, s, t):
        r = np.linalg.norm(xi, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, inner(curve, 1, xi, s) / np.where(r > 0, r, 1.0), 0.0)
        return lib.beta(r / lam) * (1.0 - lib.eta(2.0 * A * ratio)) * lib.chi_interior(s) * lib.chi_tilde_I(t)

    return Symbol(
        name=f"base_case(lambda={lam:g})",
        fn=fn,
        meta=SymbolMeta(lam=lam, A=2.0 * A, L=1, curve=curve, sampler=annulus_sampler(curve.d, lam / 2, 2 * lam)),
    )


def build_tube_symbol(curve: Curve, delta: Optional[float] = None, r: Optional[tuple] = None) -> Symbol:
    """Fourier transform of the normalized tube cross-section (exact averaging multiplier)."""
    d = curve.d
    if delta is not None:
        volume = 2.0 * ball_volume(d) * delta ** d

        def fn(xi, s, t):
            k = np.linalg.norm(xi, axis=-1) * delta
            small = k < 1e-8
            ks = np.where(small, 1.0, k)
            val = (2.0 * np.pi / ks) ** (d / 2.0) * jv(d / 2.0, ks) * delta ** d
            val = np.where(small, ball_volume(d) * delta ** d, val)
            return val / volume * np.ones(np.shape(s)) * np.ones(np.shape(t))

        name = f"tube_iso({delta:g})"
    elif r is not None:
        r_arr = np.asarray(r, dtype=float)
        volume = 2.0 * float(np.prod(2.0 * r_arr))

        def fn(xi, s, t):
            frames = frenet_frames(curve, s)
            proj = np.einsum("...kd,...d->...k", frames, xi)
            return np.prod(2.0 * r_arr * np.sinc(proj * r_arr / np.pi), axis=-1) / volume * np.ones(np.shape(t))

        name = f"tube_aniso({','.join(f'{x:g}' for x in r_arr)})"
    else:
        raise InvalidInputError("need delta or r")
    return Symbol(name=name, fn=fn, meta=SymbolMeta(curve=curve, extra={"exact_tube": True}))


# ── H, G and the localized pieces ───────────────────────────────────────────

def build_H(curve: Curve, lam: float, A_prime: float, N: int, lib: CutoffLibrary) -> Symbol:
    """H(ξ,s) = ∏_{i<N} η(A'λ⁻¹⟨γ^(i)(s), ξ⟩)."""
    if A_prime <= 1:
        raise InvalidInputError("A' must exceed 1")

    def fn(xi, s, t):
        out = 1.0
        for i in range(1, N):
            out = out * lib.eta(A_prime / lam * inner(curve, i, xi, s))
        return out * np.ones(np.shape(t))

    return Symbol(name=f"H(A'={A_prime:g})", fn=fn, meta=SymbolMeta(lam=lam, curve=curve, extra={"A_prime": A_prime}))


def split_by_H(a: Symbol, H: Symbol) -> tuple[Symbol, Symbol]:
    curve = a.meta.curve or H.meta.curve
    A_prime = H.meta.extra["A_prime"]
    N = a.meta.L or curve.d
    lam = a.meta.lam
    cnorm = max(float(np.max(np.linalg.norm(curve.eval(i, np.linspace(-1, 1, 257)), axis=-1))) for i in range(1, curve.d + 1))
    r_min, r_max = a.meta.extra.get("annulus", (lam / 2.0, 2.0 * lam))
    v_bounds = np.array([2.0 * lam / A_prime if i < N else cnorm * r_max for i in range(1, curve.d + 1)])
    aH = a.times(H.fn, name=f"{a.name}*H", sampler=dual_box_sampler(curve, v_bounds, max(r_min, 1e-3), r_max),
                 extra={**a.meta.extra, "A_prime": A_prime, "v_bounds": v_bounds})
    rest = a.times(lambda xi, s, t: 1.0 - H.fn(xi, s, t), name=f"{a.name}*(1-H)", A=2.0 * A_prime, L=N - 1)
    return aH, rest


@dataclass(frozen=True, eq=False)
class DistanceFunction:
    """G(ξ,s) = Σ_{i<N} |ε₀⁻¹λ⁻¹⟨γ^(i)(σ(ξ)),ξ⟩|^{2/(N-i)} + ε₀⁻²|s − σ(ξ)|²; NaN where σ is undefined."""

    curve: Curve
    lam: float
    N: int
    eps0: float

    def sigma(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 1:
            val = solve_sigma(self.curve, xi, self.N) if np.any(xi) else None
            return np.asarray(np.nan if val is None else val)
        flat = xi.reshape(-1, xi.shape[-1])
        nonzero = np.any(flat != 0, axis=-1)
        out = np.full(flat.shape[0], np.nan)
        if nonzero.any():
            out[nonzero] = solve_sigma_many(self.curve, flat[nonzero], self.N)
        return out.reshape(xi.shape[:-1])

    def __call__(self, xi, s) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        sig = self.sigma(xi)
        sig_safe = np.nan_to_num(sig)
        total = (np.asarray(s, dtype=float) - sig) ** 2 / self.eps0 ** 2
        for i in range(1, self.N):
            v = inner(self.curve, i, xi, sig_safe) / (self.eps0 * self.lam)
            total = total + np.abs(v) ** (2.0 / (self.N - i))
        return total


def build_G(curve: Curve, lam: float, N: int, eps0: float) -> DistanceFunction:
    if not 2 <= N <= curve.d:
        raise InvalidInputError(f"N must be in 2..{curve.d}")
    return DistanceFunction(curve=curve, lam=lam, N=N, eps0=eps0)


def _s_window(G: DistanceFunction, half_width: float) -> Callable:
    def window(xi):
        sig = float(G.sigma(np.asarray(xi, dtype=float)))
        if not np.isfinite(sig):
            return -1.0, 1.0
        return max(-1.0, sig - half_width), min(1.0, sig + half_width)

    return window


def build_a_n(a: Symbol, G: DistanceFunction, eps1: float, n: int, lib: CutoffLibrary) -> Symbol:
    """a⁰ = a·η₁(ε₁²λ^{2/N}G), aⁿ = a·β₁(ε₁²2^{-2n}λ^{2/N}G); points without σ go to a⁰."""
    if n < 0:
        raise InvalidInputError("n must be non-negative")
    lam, N = G.lam, G.N
    scale = eps1 ** 2 * 2.0 ** (-2 * n) * lam ** (2.0 / N)
    cut = lib.eta1 if n == 0 else lib.beta1

    def factor(xi, s, t):
        g = G(xi, s)
        if n == 0:
            return np.where(np.isnan(g), 1.0, cut(scale * np.nan_to_num(g)))
        return np.where(np.isnan(g), 0.0, cut(scale * np.nan_to_num(g)))

    rho = 2.0 ** n * lam ** (-1.0 / N)
    return a.times(
        factor,
        name=f"{a.name}^n={n}",
        s_window=_s_window(G, 2.0 * G.eps0 * rho / eps1),
        extra={**a.meta.extra, "n": n, "eps0": G.eps0, "eps1": eps1, "rho": rho, "G": G},
    )


def nu_range(n: int, lam: float, N: int) -> range:
    rho = 2.0 ** n * lam ** (-1.0 / N)
    reach = math.ceil((1.0 + rho) / rho)
    return range(-reach, reach + 1)


def build_a_n_nu(a_n: Symbol, lib: CutoffLibrary, n: int, nu: int, lam: float, N: int) -> Symbol:
    """a^{n,ν} = aⁿ·ζ(2^{-n}λ^{1/N}(s − s_{n,ν})) with s_{n,ν} = 2ⁿλ^{-1/N}ν."""
    rho = 2.0 ** n * lam ** (-1.0 / N)
    center = rho * nu

    def factor(xi, s, t):
        return lib.zeta((np.asarray(s, dtype=float) - center) / rho)

    return a_n.times(
        factor,
        name=f"{a_n.name},nu={nu}",
        s_window=lambda xi: (max(-1.0, center - rho), min(1.0, center + rho)),
        extra={**a_n.meta.extra, "nu": nu, "s_center": center, "rho": rho},
    )


def inner_product_constants(eps0: float, eps1: float, A: float, B: float, N: int) -> tuple[float, float]:
    """A-priori two-sided constants for Σ_{i<N} ρ^{i-N}|⟨γ^(i)(s),ξ⟩| / λ on supp a^{n,ν}."""
    c_N = (4.0 * N) ** (-N)
    lower = eps0 / eps1 * min(1.0 / (80.0 * A), c_N / 2.0)
    upper = (N + 2.0 * B) * sum((2.0 / eps1) ** k for k in range(1, N))
    return lower, upper


def verify_inner_product_bounds(
    a_n_nu: Symbol,
    samples: int = 10_000,
    seed: int = 0,
    bounds: Optional[tuple[float, float]] = None,
    quantile: float = 0.99,
) -> "AuditReport":
    from ..schemas import AuditReport

    meta = a_n_nu.meta
    curve, lam = meta.curve, meta.lam
    ex = meta.extra
    n, nu, rho = ex.get("n"), ex.get("nu"), ex["rho"]
    N = ex["G"].N
    lo, hi = meta.s_window(None) if meta.s_window and nu is not None else (-1.0, 1.0)
    xi, s, _ = support_points(a_n_nu, samples, seed, s_range=(lo, hi))
    base = dict(symbol_id=a_n_nu.name, lemma="localized-inner-products", n=n, nu=nu, lam=lam)
    if len(s) == 0:
        return AuditReport(**base, passed=False, empty=True)
    ratio = sum(rho ** (i - N) * np.abs(inner(curve, i, xi, s)) for i in range(1, N)) / lam
    c, C = bounds if bounds is not None else (0.0, np.inf)
    within = float(np.mean((ratio >= c) & (ratio <= C)))
    return AuditReport(
        **base,
        min_ratio=float(ratio.min()),
        max_ratio=float(ratio.max()),
        passed=within >= quantile,
        samples=int(len(s)),
        details={"c": c, "C": C, "fraction_within": within, "rho": rho},
    )


def rescale_symbol(a: Symbol, tmap: RescalingMap) -> Symbol:
    """ã(η, s, t) = a(T^{-⊤}η, s₀ + ρs, t), so that ⟨γ(s₀+ρs) − γ(s₀), ξ⟩ = ⟨γ̃(s), T^⊤ξ⟩."""
    s0, rho = tmap.s0, tmap.rho
    to_parent = tmap.inverse
    base = a.fn

    def fn(xi, s, t):
        return base(np.asarray(xi, dtype=float) @ to_parent, s0 + rho * np.asarray(s, dtype=float), t)

    sampler = None
    if a.meta.sampler is not None:
        parent_sampler = a.meta.sampler

        def sampler(n: int, seed: int, s_range: Optional[tuple[float, float]] = None):
            lo, hi = s_range or (-1.0, 1.0)
            window = (max(-1.0, s0 + rho * lo), min(1.0, s0 + rho * hi))
            xi, s, t = parent_sampler(n, seed, window)
            return xi @ tmap.matrix, (s - s0) / rho, t

    curve = rescale_curve(a.meta.curve, tmap) if a.meta.curve is not None else None
    return Symbol(
        name=f"{a.name}~",
        fn=fn,
        meta=SymbolMeta(
            lam=rho ** tmap.N * a.meta.lam,
            L=tmap.N - 1,
            curve=curve,
            sampler=sampler,
            extra={"parent": a.name, "s0": s0, "rho": rho},
        ),
    )


def build_anisotropic_symbol(lib: CutoffLibrary, curve: Curve, r: ScaleVector | tuple) -> Symbol:
    """a_r(ξ,s,t) = ∏_j ψ(⟨ξ, e_j(s)⟩ r_j) χ̃_I(s) χ̃_I(t)."""
    sv = r if isinstance(r, ScaleVector) else ScaleVector(tuple(r))
    verdict = check_admissible(sv)
    if not verdict.admissible:
        logger.warning("scale vector %s is not admissible (%s)", sv.r, verdict.violated)
    r_arr = np.array(sv.r)

    def fn(xi, s, t):
        xi = np.asarray(xi, dtype=float)
        s = np.asarray(s, dtype=float)
        shape = np.broadcast_shapes(xi.shape[:-1], s.shape)
        frames = frenet_frames(curve, np.broadcast_to(s, shape))
        proj = np.einsum("...kd,...d->...k", frames, np.broadcast_to(xi, shape + xi.shape[-1:]))
        return np.prod(lib.psi(proj * r_arr), axis=-1) * lib.chi_tilde_I(s) * lib.chi_tilde_I(t)

    return Symbol(
        name=f"a_r({','.join(f'{x:g}' for x in sv.r)})",
        fn=fn,
        meta=SymbolMeta(curve=curve, lam=float(1.0 / r_arr.min()), extra={"r": sv.r, "admissible": verdict.admissible}),
    )


def h_split_violation(aH: Symbol, A: float, N: int, kappa: float, samples: int, seed: int) -> tuple[float, Optional[dict]]:
    """Worst relative violation of (10A)⁻¹|ξ| ≤ |v_N| ≤ A|ξ| and Σ_{i<N}|v_i| ≤ κ|ξ|/A on sampled supp aH."""
    curve = aH.meta.curve
    xi, s, _ = support_points(aH, samples, seed)
    if len(s) == 0:
        return 0.0, None
    r = np.linalg.norm(xi, axis=-1)
    vN = np.abs(inner(curve, N, xi, s))
    low = sum((np.abs(inner(curve, i, xi, s)) for i in range(1, N)), np.zeros_like(r))
    excess = np.maximum.reduce([
        r / (10.0 * A) - vN,
        vN - A * r,
        low - kappa * r / A,
    ]) / r
    k = int(np.argmax(excess))
    worst = {"xi": xi[k].tolist(), "s": float(s[k]), "excess": float(excess[k])}
    return float(excess[k]), worst


def calibrate_A_prime(
    a: Symbol,
    lib: CutoffLibrary,
    A: float,
    N: int,
    kappa: float,
    a_prime_max: float,
    samples: int = 4096,
    seed: int = 0,
) -> tuple[float, Symbol, Symbol]:
    """Smallest power of two A' for which the sampled H-split bounds hold; returns (A', aH, a(1-H))."""
    curve, lam = a.meta.curve, a.meta.lam
    A_prime = 2.0
    worst = None
    while A_prime <= a_prime_max:
        H = build_H(curve, lam, A_prime, N, lib)
        aH, rest = split_by_H(replace(a, meta=replace(a.meta, L=N)), H)
        excess, point = h_split_violation(aH, A, N, kappa, samples, seed)
        if excess <= 0:
            logger.info("calibrated A'=%g for %s (A=%.4g, N=%d)", A_prime, a.name, A, N)
            return A_prime, aH, rest
        worst = point
        logger.debug("A'=%g rejected: excess %.3g", A_prime, excess)
        A_prime *= 2.0
    raise CalibrationError(f"no A' <= {a_prime_max:g} satisfies the H-split bounds", worst_point=worst)
