"""
Averaging operators, the Nikodym maximal function and the FIO machinery.

Two backends compute tube averages:

* direct: product quadrature over the tube cross-section and t, applied to a
  pointwise callable, a sampled ``Field`` (interpolated) or an indicator test
  function (exact slice overlaps via ball lens volumes);
* spectral: ``averaging_fio`` with a symbol, per-frequency blocks
  M_ξ[s, t] = dt · a(ξ, s, t) · e^{-it⟨γ(s), ξ⟩}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtri
from scipy.stats import qmc

from ..config import settings
from ..errors import ConfigurationError, InvalidGridError, InvalidInputError
from .curve_geometry import Curve, frenet_frames
from .sampled_fields import (
    Field,
    GridSpec,
    SpectralField,
    _origin_phase,
    apply_multiplier,
    fractional_s_derivative,
    inverse_partial_ft_x,
    partial_ft_x,
)
from .symbols import CutoffLibrary, Symbol, build_tube_symbol, inner, support_points
from .tube_geometry import ball_lens_volume, ball_volume

logger = logging.getLogger(__name__)

PAIR_CHUNK = 1 << 21
MIN_CROSS_NODES = 8

OperatorKind = Literal[
    "averaging_direct", "averaging_fio", "maximal", "fractional_fio", "kernel", "multiplier", "identity"
]


# ── Operator handles ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class OperatorHandle:
    kind: OperatorKind
    curve: Optional[Curve] = None
    symbol: Optional[Symbol] = None
    delta: Optional[float] = None
    r: Optional[tuple[float, ...]] = None
    grid: Optional[GridSpec] = None
    s_step: Optional[float] = None
    cross_nodes: int = MIN_CROSS_NODES
    t_nodes: int = 32
    refine: bool = False
    multiplier: Optional[Callable] = field(default=None, repr=False)
    allow_high_dim: bool = False

    def __post_init__(self):
        if self.cross_nodes < MIN_CROSS_NODES:
            raise ConfigurationError(f"need at least {MIN_CROSS_NODES} quadrature nodes across the tube")
        if self.kind in ("averaging_direct", "maximal"):
            if self.curve is None or (self.delta is None and self.r is None):
                raise InvalidInputError(f"{self.kind} needs a curve and delta or r")
        if self.kind == "maximal":
            limit = self.width / 2.0
            step = self.s_step if self.s_step is not None else limit
            if step > limit * (1 + 1e-12):
                raise ConfigurationError(f"s-grid step {step:g} exceeds half the tube width {limit:g}")
            object.__setattr__(self, "s_step", step)
        if self.kind in ("averaging_fio", "fractional_fio", "kernel") and self.symbol is None:
            raise InvalidInputError(f"{self.kind} needs a symbol")
        if self.kind == "multiplier" and self.multiplier is None:
            raise InvalidInputError("multiplier handle needs a callable")
        if self.grid is not None and self.grid.d >= 4 and self.kind in ("averaging_fio", "fractional_fio") \
                and not self.allow_high_dim:
            raise InvalidGridError("full-field backends are disabled for d >= 4")

    @property
    def width(self) -> float:
        return float(self.delta) if self.delta is not None else float(min(self.r))

    @property
    def is_linear(self) -> bool:
        return self.kind != "maximal"

    @property
    def name(self) -> str:
        if self.symbol is not None:
            return f"{self.kind}[{self.symbol.name}]"
        if self.kind in ("averaging_direct", "maximal"):
            scale = f"delta={self.delta:g}" if self.delta is not None else f"r={self.r}"
            return f"{self.kind}[{self.curve.name},{scale}]"
        return self.kind

    def s_grid(self) -> np.ndarray:
        n = int(math.ceil(2.0 / self.s_step)) + 1
        return np.linspace(-1.0, 1.0, n)


# ── Cross-section quadrature ────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CrossSection:
    """Quadrature on the ball of radius δ or the box ∏[-r_j, r_j] (Frenet coordinates)."""

    kind: Literal["ball", "box"]
    d: int
    coords: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    volume: float = 0.0

    def offsets(self, curve: Curve, s: np.ndarray) -> np.ndarray:
        """Cross-section nodes in R^d, shape s.shape + (m, d)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "ball":
            return np.broadcast_to(self.coords, s.shape + self.coords.shape)
        return np.einsum("mk,...kd->...md", self.coords, frenet_frames(curve, s))


def _sphere_directions(d: int, n: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    u = qmc.Sobol(d=d, scramble=True, seed=0).random(n)
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def cross_section(d: int, delta: Optional[float] = None, r: Optional[Sequence[float]] = None,
                  nodes: int = MIN_CROSS_NODES) -> CrossSection:
    if nodes < MIN_CROSS_NODES:
        raise ConfigurationError(f"need at least {MIN_CROSS_NODES} nodes across the tube")
    x, w = np.polynomial.legendre.leggauss(nodes)
    if delta is not None:
        rad = 0.5 * delta * (x + 1.0)
        rw = 0.5 * delta * w * rad ** (d - 1)
        n_dir = {1: 2, 2: 4 * nodes}.get(d, 8 * nodes * (d - 1))
        dirs = _sphere_directions(d, n_dir)
        sphere_area = d * ball_volume(d)
        coords = (rad[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        weights = (rw[:, None] * np.full(len(dirs), sphere_area / len(dirs))[None, :]).reshape(-1)
        return CrossSection("ball", d, coords, weights, ball_volume(d) * delta ** d)
    if r is None or len(r) != d:
        raise InvalidInputError(f"need delta or {d} half-widths")
    r = np.asarray(r, dtype=float)
    axes = [0.5 * 2 * rj * x for rj in r]
    wts = [rj * w for rj in r]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    weights = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), axis=-1).reshape(-1, d), axis=-1)
    return CrossSection("box", d, coords, weights, float(np.prod(2.0 * r)))


# ── Test functions with exact slice overlaps ────────────────────────────────

@runtime_checkable
class SliceIntegrable(Protocol):
    def t_window(self, x: np.ndarray, s: np.ndarray, curve: Curve, delta: float) -> tuple[np.ndarray, np.ndarray]: ...

    def slice_overlap(self, x, s, t, curve: Curve, delta: float) -> np.ndarray: ...

    def s_candidates(self, x: np.ndarray, s_grid: np.ndarray, curve: Curve, delta: float) -> np.ndarray: ...


def _min_offset(p: np.ndarray, q: np.ndarray, lo, hi) -> np.ndarray:
    """min over t ∈ [lo, hi] of |p + t q|, broadcast over leading axes."""
    qq = np.einsum("...d,...d->...", q, q)
    pq = np.einsum("...d,...d->...", p, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(qq > 0, -pq / np.where(qq > 0, qq, 1.0), 0.0)
    t = np.clip(t, lo, hi)
    return np.linalg.norm(p + t[..., None] * q, axis=-1)


@dataclass(frozen=True, eq=False)
class BallIndicator:
    """χ_{B(center, radius)} on R^{d+1}; center = (y₀, t₀)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def d(self) -> int:
        return self.center.shape[0] - 1

    def __call__(self, points) -> np.ndarray:
        return (np.linalg.norm(np.asarray(points) - self.center, axis=-1) <= self.radius).astype(float)

    def lp_norm(self, p: float) -> float:
        if p == np.inf:
            return 1.0
        return float((ball_volume(self.d + 1) * self.radius ** (self.d + 1)) ** (1.0 / p))

    def t_window(self, x, s, curve, delta):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(s))
        t0 = self.center[-1]
        return (np.full(shape, max(-1.0, t0 - self.radius)), np.full(shape, min(1.0, t0 + self.radius)))

    def slice_overlap(self, x, s, t, curve, delta):
        t = np.asarray(t, dtype=float)
        gam = curve.eval(0, s)
        c = np.linalg.norm(np.asarray(x) - t[..., None] * gam - self.center[:-1], axis=-1)
        R_t = np.sqrt(np.maximum(self.radius ** 2 - (t - self.center[-1]) ** 2, 0.0))
        return ball_lens_volume(delta, R_t, c, self.d)

    def s_candidates(self, x, s_grid, curve, delta):
        lo, hi = max(-1.0, self.center[-1] - self.radius), min(1.0, self.center[-1] + self.radius)
        if lo > hi:
            return np.zeros((len(x), len(s_grid)), dtype=bool)
        p = (np.asarray(x) - self.center[:-1])[:, None, :]
        q = -curve.eval(0, s_grid)[None, :, :]
        return _min_offset(p, q, lo, hi) <= delta + self.radius


@dataclass(frozen=True, eq=False)
class TubeIndicator:
    """Indicator of offset + {(y, t) : |y + tγ(r)| ≤ radius, |t| ≤ 1}."""

    curve: Curve
    r_param: float
    offset: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))

    @property
    def d(self) -> int:
        return self.curve.d

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        t = points[..., -1]
        y = points[..., :-1] - self.offset + t[..., None] * self.curve.eval(0, self.r_param)
        return ((np.linalg.norm(y, axis=-1) <= self.radius) & (np.abs(t) <= 1.0)).astype(float)

    def lp_norm(self, p: float) -> float:
        if p == np.inf:
            return 1.0
        return float((2.0 * ball_volume(self.d) * self.radius ** self.d) ** (1.0 / p))

    def _pq(self, x, s, curve):
        p = np.asarray(x, dtype=float) - self.offset
        q = self.curve.eval(0, self.r_param) - curve.eval(0, s)
        return p, q

    def t_window(self, x, s, curve, delta):
        p, q = self._pq(x, s, curve)
        p, q = np.broadcast_arrays(p, q)
        a = np.einsum("...d,...d->...", q, q)
        b = 2.0 * np.einsum("...d,...d->...", p, q)
        c = np.einsum("...d,...d->...", p, p) - (delta + self.radius) ** 2
        flat = a < 1e-14
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        a_safe = np.where(flat, 1.0, a)
        lo = np.where(flat, np.where(c <= 0, -1.0, 1.0), (-b - root) / (2 * a_safe))
        hi = np.where(flat, np.where(c <= 0, 1.0, -1.0), (-b + root) / (2 * a_safe))
        empty = ~flat & (disc < 0)
        lo = np.where(empty, 1.0, np.clip(lo, -1.0, 1.0))
        hi = np.where(empty, -1.0, np.clip(hi, -1.0, 1.0))
        return lo, hi

    def slice_overlap(self, x, s, t, curve, delta):
        p, q = self._pq(x, s, curve)
        t = np.asarray(t, dtype=float)
        c = np.linalg.norm(p + t[..., None] * q, axis=-1)
        return ball_lens_volume(delta, self.radius, c, self.d)

    def s_candidates(self, x, s_grid, curve, delta):
        p = (np.asarray(x, dtype=float) - self.offset)[:, None, :]
        q = (self.curve.eval(0, self.r_param) - curve.eval(0, s_grid))[None, :, :]
        return _min_offset(p, q, -1.0, 1.0) <= delta + self.radius


def indicator_field(fn: Callable, grid: GridSpec, mollify: Optional[float] = None) -> Field:
    """Sample an indicator on the grid; optionally mollify with a Gaussian of width ``mollify``."""
    pts = np.concatenate(
        [np.broadcast_to(grid.x_points()[..., None, :], grid.shape + (grid.d,)),
         np.broadcast_to(grid.t_axis, grid.shape)[..., None]],
        axis=-1,
    )
    f = Field(grid, np.asarray(fn(pts), dtype=float))
    if mollify:
        f = apply_multiplier(f, lambda xi: np.exp(-0.5 * (mollify * np.linalg.norm(xi, axis=-1)) ** 2))
    return f


# ── Pointwise evaluation of g ───────────────────────────────────────────────

def field_sampler(f: Field, method: str = "linear") -> Callable[[np.ndarray], np.ndarray]:
    """Interpolating callable for a sampled field; constant extension in t, zero outside [-X, X)."""
    g = f.grid
    t_axis = np.concatenate([[-1.0], g.t_axis, [1.0]])
    vals = np.concatenate([f.values[..., :1], f.values, f.values[..., -1:]], axis=-1)
    interp = RegularGridInterpolator(
        [g.x_axis] * g.d + [t_axis], vals, method=method, bounds_error=False, fill_value=0.0
    )

    def sample(points):
        points = np.asarray(points, dtype=float)
        return interp(points.reshape(-1, g.d + 1)).reshape(points.shape[:-1])

    return sample


def _pointwise(g) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(g, Field):
        return field_sampler(g)
    if callable(g):
        return g
    raise InvalidInputError(f"cannot evaluate {type(g).__name__} pointwise")


def _pair_averages(curve: Curve, g, xs: np.ndarray, ss: np.ndarray, section: CrossSection,
                   t_nodes: int) -> np.ndarray:
    """Tube averages for paired rows xs[k], ss[k]."""
    out = np.empty(len(ss))
    if len(ss) == 0:
        return out
    tx, tw = np.polynomial.legendre.leggauss(t_nodes)
    exact = isinstance(g, SliceIntegrable) and section.kind == "ball"
    normalizer = 2.0 * section.volume
    if exact:
        delta = _ball_radius(section)
        chunk = max(1, PAIR_CHUNK // (t_nodes * 8))
        for lo_i in range(0, len(ss), chunk):
            x, s = xs[lo_i:lo_i + chunk], ss[lo_i:lo_i + chunk]
            lo, hi = g.t_window(x, s, curve, delta)
            half = np.maximum(hi - lo, 0.0) / 2.0
            t = lo[:, None] + half[:, None] * (tx[None, :] + 1.0)
            ov = g.slice_overlap(x[:, None, :], s[:, None], t, curve, delta)
            out[lo_i:lo_i + chunk] = np.sum(ov * tw[None, :], axis=-1) * half / normalizer
        return out

    fn = _pointwise(g)
    m = len(section.weights)
    chunk = max(1, PAIR_CHUNK // (t_nodes * m))
    for lo_i in range(0, len(ss), chunk):
        x, s = xs[lo_i:lo_i + chunk], ss[lo_i:lo_i + chunk]
        gam = curve.eval(0, s)
        u = section.offsets(curve, s)
        y = x[:, None, None, :] - tx[None, :, None, None] * gam[:, None, None, :] - u[:, None, :, :]
        t = np.broadcast_to(tx[None, :, None, None], y.shape[:-1] + (1,))
        vals = np.asarray(fn(np.concatenate([y, t], axis=-1)))
        out[lo_i:lo_i + chunk] = np.einsum("ptm,t,m->p", vals, tw, section.weights) / normalizer
    return out


def _ball_radius(section: CrossSection) -> float:
    return float((section.volume / ball_volume(section.d)) ** (1.0 / section.d))


def averaging_direct(curve: Curve, delta_or_r, g, x, s, cross_nodes: int = MIN_CROSS_NODES,
                     t_nodes: int = 32):
    """(1/|T(s)|) ∫_{T(s)} g(x − y, t) dy dt for broadcast x (..., d) and s."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape[-1] != curve.d:
        raise InvalidInputError(f"x must have {curve.d} components")
    section = _section_for(curve.d, delta_or_r, cross_nodes)
    shape = np.broadcast_shapes(x.shape[:-1], s.shape)
    xs = np.broadcast_to(x, shape + (curve.d,)).reshape(-1, curve.d)
    ss = np.broadcast_to(s, shape).reshape(-1)
    nodes = max(t_nodes, 48) if isinstance(g, SliceIntegrable) else t_nodes
    vals = _pair_averages(curve, g, xs, ss, section, nodes).reshape(shape)
    return float(vals) if vals.ndim == 0 else vals


def _section_for(d: int, delta_or_r, nodes: int) -> CrossSection:
    if np.ndim(delta_or_r) == 0:
        return cross_section(d, delta=float(delta_or_r), nodes=nodes)
    return cross_section(d, r=tuple(delta_or_r), nodes=nodes)


# ── Maximal function ────────────────────────────────────────────────────────

def nikodym_maximal(handle: OperatorHandle, g, x_points, return_argmax: bool = False):
    """max over the s-grid of |averages|, a lower bound on the supremum over I.

    Indicator test functions prune (x, s) pairs whose tube cannot meet the
    support; pruned pairs contribute exactly zero.
    """
    if handle.kind != "maximal":
        raise InvalidInputError("nikodym_maximal needs a maximal handle")
    curve = handle.curve
    xs = np.atleast_2d(np.asarray(x_points, dtype=float))
    s_grid = handle.s_grid()
    section = cross_section(curve.d, delta=handle.delta, r=handle.r if handle.delta is None else None,
                            nodes=handle.cross_nodes)
    t_nodes = max(handle.t_nodes, 48) if isinstance(g, SliceIntegrable) else handle.t_nodes
    values = np.zeros(len(xs))
    argmax = np.full(len(xs), np.nan)
    x_chunk = max(1, PAIR_CHUNK // (8 * len(s_grid)))

    for lo_i in range(0, len(xs), x_chunk):
        x = xs[lo_i:lo_i + x_chunk]
        if isinstance(g, SliceIntegrable) and section.kind == "ball":
            mask = g.s_candidates(x, s_grid, curve, handle.delta)
        else:
            mask = np.ones((len(x), len(s_grid)), dtype=bool)
        pi, si = np.nonzero(mask)
        if len(pi) == 0:
            continue
        avg = np.abs(_pair_averages(curve, g, x[pi], s_grid[si], section, t_nodes))
        table = np.full(mask.shape, -np.inf)
        table[pi, si] = avg
        best = np.argmax(table, axis=1)
        top = table[np.arange(len(x)), best]
        hit = np.isfinite(top)
        values[lo_i:lo_i + x_chunk] = np.where(hit, top, 0.0)
        argmax[lo_i:lo_i + x_chunk] = np.where(hit, s_grid[best], np.nan)

        if handle.refine:
            refined = _parabolic_refine(curve, g, x, table, best, s_grid, section, t_nodes)
            improved = refined[0] > values[lo_i:lo_i + x_chunk]
            values[lo_i:lo_i + x_chunk] = np.where(improved, refined[0], values[lo_i:lo_i + x_chunk])
            argmax[lo_i:lo_i + x_chunk] = np.where(improved, refined[1], argmax[lo_i:lo_i + x_chunk])

    logger.debug("maximal function at %d points over %d directions", len(xs), len(s_grid))
    return (values, argmax) if return_argmax else values


def _parabolic_refine(curve, g, x, table, best, s_grid, section, t_nodes):
    h = s_grid[1] - s_grid[0]
    k = np.clip(best, 1, len(s_grid) - 2)
    rows = np.arange(len(x))
    f0, fm, fp = table[rows, k], table[rows, k - 1], table[rows, k + 1]
    ok = np.isfinite(f0) & np.isfinite(fm) & np.isfinite(fp) & (best == k)
    curv = fp - 2 * f0 + fm
    ok &= curv < 0
    step = np.where(ok, -0.5 * h * (fp - fm) / np.where(ok, curv, 1.0), 0.0)
    s_star = np.clip(s_grid[k] + step, -1.0, 1.0)
    vals = np.zeros(len(x))
    if ok.any():
        vals[ok] = np.abs(_pair_averages(curve, g, x[ok], s_star[ok], section, t_nodes))
    return vals, s_star


def nikodym_maximal_field(handle: OperatorHandle, g: Field) -> np.ndarray:
    """Maximal function of a sampled field on the grid's x-lattice, via the exact tube multiplier."""
    symbol = build_tube_symbol(handle.curve, delta=handle.delta, r=handle.r if handle.delta is None else None)
    s_grid = handle.s_grid()
    out = np.zeros(g.values.shape[:-1])
    chunk = max(1, g.grid.nt // 2)
    sf = partial_ft_x(g)
    phase = _origin_phase(g.grid)
    axes = tuple(range(g.grid.d))
    for lo in range(0, len(s_grid), chunk):
        s = s_grid[lo:lo + chunk]
        H = apply_blocks(fio_blocks(symbol, handle.curve, g.grid, s), sf.coefficients)
        vals = np.fft.ifftn(H / phase, axes=axes) / g.grid.h ** g.grid.d
        out = np.maximum(out, np.max(np.abs(vals), axis=-1))
    return out


# ── Spectral FIO ────────────────────────────────────────────────────────────

def fio_blocks(symbol: Symbol, curve: Curve, grid: GridSpec, s_axis: Optional[np.ndarray] = None) -> np.ndarray:
    """M_ξ[s, t] = dt · a(ξ, s, t) · e^{-it⟨γ(s), ξ⟩}, shape (nx,)*d + (ns, nt)."""
    s = grid.t_axis if s_axis is None else np.asarray(s_axis, dtype=float)
    t = grid.t_axis
    xi = grid.frequencies()[..., None, None, :]
    a = symbol.eval(xi, s[:, None], t[None, :])
    phase = np.exp(-1j * t[None, :] * inner(curve, 0, xi, s[:, None]))
    return grid.dt * a * phase


def apply_blocks(M: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    return np.einsum("...st,...t->...s", M, coeffs)


def apply_blocks_adjoint(M: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    return np.einsum("...st,...s->...t", M.conj(), coeffs)


def averaging_fio(symbol: Symbol, curve: Curve, g: Field, s_axis: Optional[np.ndarray] = None,
                  real: bool = False) -> Field:
    """𝒜[a, γ]g(x, s) = (2π)^{-d} ∫∫ e^{i⟨x − tγ(s), ξ⟩} a(ξ, s, t) ĝ(ξ, t) dξ dt."""
    if g.axis_label != "t":
        raise InvalidGridError("averaging_fio acts on fields over (x, t)")
    if curve.d != g.grid.d:
        raise InvalidGridError(f"curve dimension {curve.d} != grid dimension {g.grid.d}")
    if s_axis is not None and len(s_axis) != g.grid.nt:
        raise InvalidGridError("custom s axes must have nt points; use nikodym_maximal_field for finer grids")
    sf = partial_ft_x(g)
    H = apply_blocks(fio_blocks(symbol, curve, g.grid, s_axis), sf.coefficients)
    return inverse_partial_ft_x(SpectralField(g.grid, H, "s"), real=real)


def s_derivative_matrix(grid: GridSpec, order: float = 0.5) -> np.ndarray:
    """Matrix of the cropped multiplier (1+|σ|)^order on s-vectors (pad, FFT, multiply, crop)."""
    eye = np.eye(grid.nt)
    padded = np.pad(eye, ((grid.nt // 2, grid.nt // 2), (0, 0)))
    sig = 2.0 * np.pi * np.fft.fftfreq(2 * grid.nt, d=grid.dt)
    mult = ((1.0 + np.abs(sig)) ** order)[:, None]
    full = np.fft.ifft(np.fft.fft(padded, axis=0) * mult, axis=0)
    return full[grid.nt // 2: grid.nt // 2 + grid.nt]


def fractional_fio(symbol: Symbol, curve: Curve, g: Field, order: float = 0.5) -> Field:
    """𝔇_s𝒜 g = (1 + √(−∂_s²))^{1/2} 𝒜[a, γ] g, with 𝒜 g extended by zero to [-2, 2]."""
    return fractional_s_derivative(averaging_fio(symbol, curve, g), order)


# ── Kernel, symbol derivative and Schur test ───────────────────────────────

def _oscillation_nodes(lo: float, hi: float, freq: float, per_osc: int = 16, min_panels: int = 4):
    """Composite Gauss-Legendre on [lo, hi] with ≥ per_osc nodes per oscillation of frequency freq."""
    length = hi - lo
    if length <= 0:
        return np.empty(0), np.empty(0)
    panels = max(min_panels, int(math.ceil(abs(freq) * length / (2 * np.pi))))
    x, w = np.polynomial.legendre.leggauss(per_osc)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    return nodes, weights


def _phase_speed(curve: Curve, xi: np.ndarray, lo: float, hi: float) -> float:
    s = np.linspace(lo, hi, 65)
    return float(np.max(np.abs(inner(curve, 1, xi, s))))


def kernel_K(symbol: Symbol, curve: Curve, xi, t_prime: float, t) -> np.ndarray | complex:
    """K[a](ξ, t', t) = ∫_I e^{i(t−t')⟨γ(s),ξ⟩} a(ξ,s,t') conj a(ξ,s,t) ds."""
    xi = np.asarray(xi, dtype=float)
    scalar_t = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = -1.0, 1.0
    if symbol.meta.s_window is not None:
        lo, hi = symbol.meta.s_window(xi)
    gap = float(np.max(np.abs(t - t_prime))) if len(t) else 0.0
    s, w = _oscillation_nodes(lo, hi, gap * _phase_speed(curve, xi, lo, hi))
    if len(s) == 0:
        out = np.zeros(len(t), dtype=complex)
    else:
        a_prime = np.asarray(symbol.eval(xi, s, t_prime))
        a_t = np.asarray(symbol.eval(xi, s[:, None], t[None, :]))
        phase = np.exp(1j * np.outer(inner(curve, 0, xi, s), t - t_prime))
        out = np.einsum("s,s,st->t", w, a_prime, phase * np.conj(a_t))
    return complex(out[0]) if scalar_t else out


def d_s_symbol(symbol: Symbol, curve: Curve, h: float = 1e-5) -> Symbol:
    """𝔡_s a = ∂_s a − i t⟨γ'(s), ξ⟩ a, so that e^{-it⟨γ(s),ξ⟩} 𝔡_s a = ∂_s(e^{-it⟨γ(s),ξ⟩} a)."""
    base = symbol.fn

    def fn(xi, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        ds = (base(xi, s + h, t) - base(xi, s - h, t)) / (2 * h)
        return ds - 1j * t * inner(curve, 1, xi, s) * base(xi, s, t)

    meta = symbol.meta
    return Symbol(name=f"d_s[{symbol.name}]", fn=fn, meta=meta)


def _graded_t_nodes(t_prime: float, scale: float, per_panel: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on I with panels of width ~scale near t', growing geometrically away from it."""
    breaks = [t_prime]
    width = scale / 4.0
    for sign in (-1.0, 1.0):
        pos, step = t_prime, width
        for _ in range(8):
            pos += sign * step
            breaks.append(pos)
        while -1.0 < pos < 1.0:
            step *= 1.25
            pos += sign * step
            breaks.append(pos)
    edges = np.unique(np.clip(np.array(breaks), -1.0, 1.0))
    x, w = np.polynomial.legendre.leggauss(per_panel)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    keep = half > 0
    nodes = (mid[keep, None] + half[keep, None] * x[None, :]).reshape(-1)
    weights = (half[keep, None] * w[None, :]).reshape(-1)
    return nodes, weights


def kernel_row_integral(symbol: Symbol, curve: Curve, xi, t_prime: float, scale: float) -> float:
    t, w = _graded_t_nodes(t_prime, scale)
    return float(np.sum(w * np.abs(kernel_K(symbol, curve, xi, t_prime, t))))


def schur_bound(symbol: Symbol, curve: Curve, iota: int, xi_samples, tprime_samples,
                Lambda: Optional[float] = None, constant: Optional[float] = None) -> dict:
    """sup over sampled (ξ, t') of ∫_I |K[𝔡_s^ι a](ξ, t', t)| dt, compared against C·Λ^{2ι−1}."""
    if iota not in (0, 1):
        raise InvalidInputError("iota must be 0 or 1")
    sym = d_s_symbol(symbol, curve) if iota == 1 else symbol
    lam = symbol.meta.lam or 1.0
    Lam = float(Lambda if Lambda is not None else lam)
    constant = settings.SCHUR_CONSTANT if constant is None else constant
    xi_samples = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    sup = 0.0
    for xi in xi_samples:
        for tp in np.atleast_1d(tprime_samples):
            sup = max(sup, kernel_row_integral(sym, curve, xi, float(tp), scale=1.0 / max(lam, 1.0)))
    target = Lam ** (2 * iota - 1)
    normalized = sup / target
    row = {"lambda": lam, "iota": iota, "Lambda": Lam, "sup_value": sup, "normalized": normalized,
           "pass": bool(normalized <= constant)}
    logger.info("schur %s iota=%d: sup=%.4g, normalized=%.4g", symbol.name, iota, sup, normalized)
    return row


def schur_audit(symbol: Symbol, curve: Curve, Lambda: float, samples: int = 16, t_samples: int = 5,
                seed: int = 0, constant: Optional[float] = None) -> list[dict]:
    """Both Schur estimates (ι = 0, 1) at sampled support points of the symbol."""
    xi, _, _ = support_points(symbol, 8 * samples, seed)
    xi = xi[:samples]
    if len(xi) == 0:
        zero = {"lambda": symbol.meta.lam, "Lambda": Lambda, "sup_value": 0.0, "normalized": 0.0, "pass": True}
        return [{**zero, "iota": 0}, {**zero, "iota": 1}]
    tps = np.linspace(-0.8, 0.8, t_samples)
    return [schur_bound(symbol, curve, iota, xi, tps, Lambda=Lambda, constant=constant) for iota in (0, 1)]


# ── Error-term oscillatory integral ─────────────────────────────────────────

def chi3(lib: CutoffLibrary, sigma, C_cut: float, delta: float) -> np.ndarray:
    """χ̃₃(σ) = (1 + |σ|)(1 − χ̃(σ))^{1/2} with χ̃(σ) = η(σ δ / C)."""
    sigma = np.asarray(sigma, dtype=float)
    chi = lib.eta(sigma * delta / C_cut)
    return (1.0 + np.abs(sigma)) * np.sqrt(np.clip(1.0 - chi, 0.0, 1.0))


def b_delta_eval(symbol: Symbol, lib: CutoffLibrary, curve: Curve, xi, sigma, t: float, C_cut: float,
                 delta: float) -> np.ndarray:
    """b_δ(ξ, σ, t) = χ̃₃(σ) ∫ e^{−i(σ s + t⟨γ(s), ξ⟩)} a(ξ, s, t) ds over s ∈ supp χ̃_I = [-2, 2]."""
    xi = np.asarray(xi, dtype=float)
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    speed = float(np.max(np.abs(sigma))) + abs(t) * _phase_speed(curve, xi, -2.0, 2.0)
    s, w = _oscillation_nodes(-2.0, 2.0, speed, per_osc=16, min_panels=32)
    a = np.asarray(symbol.eval(xi, s, t))
    phase = np.exp(-1j * (np.outer(sigma, s) + t * inner(curve, 0, xi, s)[None, :]))
    return chi3(lib, sigma, C_cut, delta) * (phase @ (w * a))


def decay_fit(sigma, values, floor: float = 1e-12) -> dict:
    """Decay exponent N̂ from log|b| against log(1+|σ|) on the upper envelope above ``floor``."""
    sigma = np.abs(np.asarray(sigma, dtype=float))
    mag = np.abs(np.asarray(values))
    order = np.argsort(sigma)
    sigma, mag = sigma[order], mag[order]
    envelope = np.maximum.accumulate(mag[::-1])[::-1]
    keep = envelope > floor
    if keep.sum() < 2:
        return {"exponent": np.inf, "points": int(keep.sum()), "floor_reached": True}
    x = np.log1p(sigma[keep])
    y = np.log(envelope[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return {"exponent": float(-slope), "intercept": float(intercept), "points": int(keep.sum()),
            "floor_reached": bool(keep.sum() < len(sigma))}


def anisotropic_derivative_bound(r: Sequence[float]) -> dict:
    """Reported normalisations for anisotropic tubes: ∏ r_j^{-1/2} and max_k ∏_{j≤k} r_j / r_k^k."""
    r = np.asarray(r, dtype=float)
    ratios = [float(np.prod(r[:k + 1]) / r[k] ** (k + 1)) for k in range(len(r))]
    return {"volume_normalisation": float(np.prod(r ** -0.5)), "max_ratio": max(ratios), "ratios": ratios}
