"""
Sampled functions on [-X, X]^d × I with their partial Fourier transforms in x.

Conventions: ĝ(ξ) = ∫ e^{-i x·ξ} g(x) dx, discretized with cell weight h^d so
that Parseval reads ‖g‖² = (2π)^{-d} Σ |ĝ|² Δξ^d with Δξ = π / X. The t (or s)
axis uses midpoints t_k = -1 + (k + 1/2)·(2/nt).
"""

from __future__ import annotations

import inspect
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel

from ..errors import InvalidGridError, InvalidInputError

logger = logging.getLogger(__name__)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and not n & (n - 1)


@dataclass(frozen=True)
class GridSpec:
    d: int
    X: float
    nx: int
    nt: int
    periodic: bool = True

    def __post_init__(self):
        if not (_is_power_of_two(self.nx) and _is_power_of_two(self.nt)):
            raise InvalidGridError(f"nx={self.nx}, nt={self.nt} must be powers of two")
        if self.X <= 0 or self.d < 1:
            raise InvalidGridError("need X > 0 and d >= 1")

    @property
    def h(self) -> float:
        return 2.0 * self.X / self.nx

    @property
    def dt(self) -> float:
        return 2.0 / self.nt

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.d + (self.nt,)

    @property
    def x_axis(self) -> np.ndarray:
        return -self.X + self.h * np.arange(self.nx)

    @property
    def t_axis(self) -> np.ndarray:
        return -1.0 + self.dt * (np.arange(self.nt) + 0.5)

    @property
    def xi_axis(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.h)

    def x_points(self) -> np.ndarray:
        """Spatial lattice, shape (nx,)*d + (d,)."""
        axes = np.meshgrid(*([self.x_axis] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def frequencies(self) -> np.ndarray:
        """Frequency lattice (π/X)·Z^d (truncated), shape (nx,)*d + (d,)."""
        axes = np.meshgrid(*([self.xi_axis] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def check_reach(self, reach: float) -> None:
        if self.X < reach + 1:
            raise InvalidGridError(f"X={self.X} must be at least sup|γ| + 1 = {reach + 1:.3f}")


@dataclass(frozen=True, eq=False)
class Field:
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    axis_label: Literal["t", "s"] = "t"
    padded: bool = False

    def __post_init__(self):
        n_last = self.grid.nt * (2 if self.padded else 1)
        expected = (self.grid.nx,) * self.grid.d + (n_last,)
        if self.values.shape != expected:
            raise InvalidGridError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("field values must be finite")

    @property
    def last_axis(self) -> np.ndarray:
        if self.padded:
            return -2.0 + self.grid.dt * (np.arange(2 * self.grid.nt) + 0.5)
        return self.grid.t_axis

    def norm(self) -> float:
        return mixed_norm(self, 2, 2)

    def __add__(self, other: "Field") -> "Field":
        return replace(self, values=self.values + other.values)

    def scaled(self, alpha) -> "Field":
        return replace(self, values=alpha * self.values)


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: GridSpec
    coefficients: np.ndarray = field(repr=False)
    axis_label: Literal["t", "s"] = "t"

    def norm(self) -> float:
        dxi = np.pi / self.grid.X
        w = (dxi / (2 * np.pi)) ** self.grid.d * self.grid.dt
        return float(np.sqrt(np.sum(np.abs(self.coefficients) ** 2) * w))


def _spatial_axes(grid: GridSpec) -> tuple[int, ...]:
    return tuple(range(grid.d))


def _origin_phase(grid: GridSpec) -> np.ndarray:
    """e^{-i x_0·ξ} for the lattice origin x_0 = (-X, …, -X)."""
    xi = grid.frequencies()
    return np.exp(1j * grid.X * xi.sum(axis=-1))[..., None]


def partial_ft_x(f: Field) -> SpectralField:
    if not f.grid.periodic:
        raise InvalidGridError("spectral transforms need a periodic grid")
    if f.padded:
        raise InvalidGridError("partial_ft_x expects an unpadded field")
    g = f.grid
    coeffs = np.fft.fftn(f.values, axes=_spatial_axes(g)) * g.h ** g.d * _origin_phase(g)
    return SpectralField(grid=g, coefficients=coeffs, axis_label=f.axis_label)


def inverse_partial_ft_x(sf: SpectralField, real: bool = False) -> Field:
    g = sf.grid
    vals = np.fft.ifftn(sf.coefficients / _origin_phase(g), axes=_spatial_axes(g)) / g.h ** g.d
    return Field(grid=g, values=vals.real if real else vals, axis_label=sf.axis_label)


def evaluate_multiplier(m: Callable, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(inspect.signature(m).parameters) == 1:
        return np.asarray(m(xi))[..., None]
    return np.asarray(m(xi[..., None, :], t))


def apply_multiplier(f: Field, m: Callable) -> Field:
    """F⁻¹(m · F g) per t-slice; m takes ξ (shape (..., d)) or (ξ, t)."""
    sf = partial_ft_x(f)
    mult = evaluate_multiplier(m, f.grid.frequencies(), f.grid.t_axis)
    out = inverse_partial_ft_x(SpectralField(f.grid, sf.coefficients * mult, f.axis_label))
    if np.isrealobj(f.values) and np.isrealobj(mult):
        return replace(out, values=out.values.real)
    return out


def pad_s(f: Field) -> Field:
    """Extend the s-axis by zeros to [-2, 2]."""
    if f.padded:
        return f
    nt = f.grid.nt
    widths = [(0, 0)] * f.grid.d + [(nt // 2, nt // 2)]
    return Field(f.grid, np.pad(f.values, widths), axis_label=f.axis_label, padded=True)


def crop_s(f: Field) -> Field:
    if not f.padded:
        return f
    nt = f.grid.nt
    return Field(f.grid, f.values[..., nt // 2: nt // 2 + nt], axis_label=f.axis_label)


def sigma_axis(grid: GridSpec) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(2 * grid.nt, d=grid.dt)


def fractional_s_derivative(f: Field, order: float, crop: bool = True) -> Field:
    """Multiplier (1+|σ|)^order on the s-axis, after zero-padding to [-2, 2]."""
    if f.axis_label != "s":
        raise InvalidInputError("fractional_s_derivative acts on an s-axis field")
    if order not in (0.5, 1.0, -0.5):
        raise InvalidInputError(f"unsupported order {order}")
    padded = pad_s(f)
    mult = (1.0 + np.abs(sigma_axis(f.grid))) ** order
    vals = np.fft.ifft(np.fft.fft(padded.values, axis=-1) * mult, axis=-1)
    if np.isrealobj(f.values):
        vals = vals.real
    out = Field(f.grid, vals, axis_label="s", padded=True)
    return crop_s(out) if crop else out


def mixed_norm(f: Field, p_x: float, q_s: float) -> float:
    """‖ ‖g(x,·)‖_{q_s} ‖_{p_x} by midpoint quadrature; sup norms are grid maxima."""
    a = np.abs(f.values)
    if q_s == np.inf:
        inner = a.max(axis=-1)
    elif q_s == 2:
        inner = np.sqrt(np.sum(a ** 2, axis=-1) * f.grid.dt)
    else:
        raise InvalidInputError("q_s must be 2 or inf")
    if p_x == np.inf:
        return float(inner.max())
    return float((np.sum(inner ** p_x) * f.grid.h ** f.grid.d) ** (1.0 / p_x))


# ── Test-function factory ───────────────────────────────────────────────────

def smooth_window(grid: GridSpec) -> np.ndarray:
    """Smooth spatial window equal to 1 on |x| ≤ X-2 and vanishing outside |x| ≤ X-1."""
    x = grid.x_points()
    edge = np.max(np.abs(x), axis=-1)
    r = np.clip(grid.X - 1.0 - edge, 0.0, 1.0)
    f = np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)
    g = np.where(r < 1, np.exp(-1.0 / np.where(r < 1, 1.0 - r, 1.0)), 0.0)
    return (f / (f + g))[..., None]


def band_limited_field(
    grid: GridSpec,
    band: float,
    rng: np.random.Generator,
    nonnegative: bool = False,
    s_dependent: bool = True,
) -> Field:
    """Random real field with spatial frequencies ≲ band, supported in |x| ≤ X-1."""
    shape = grid.shape if s_dependent else grid.shape[:-1] + (1,)
    noise = rng.standard_normal(shape)
    xi = np.linalg.norm(grid.frequencies(), axis=-1)[..., None]
    spec = np.fft.fftn(noise, axes=_spatial_axes(grid)) * np.exp(-0.5 * (xi / band) ** 2)
    vals = np.fft.ifftn(spec, axes=_spatial_axes(grid)).real
    if nonnegative:
        vals = vals ** 2
    vals = vals * smooth_window(grid)
    scale = np.max(np.abs(vals))
    vals = vals / scale if scale > 0 else vals
    if not s_dependent:
        vals = np.broadcast_to(vals, grid.shape).copy()
    return Field(grid, vals)


# ── Serialization ───────────────────────────────────────────────────────────

class FieldHeader(BaseModel):
    d: int
    X: float
    nx: int
    nt: int
    dtype: str
    axis_label: str
    padded: bool


_HEADER_DTYPE = np.dtype([("d", "<i8"), ("X", "<f8"), ("nx", "<i8"), ("nt", "<i8"), ("complex", "<i8")])


def save_field(f: Field, path: str | Path) -> Path:
    """Flat binary (header then row-major values) plus a JSON sidecar."""
    path = Path(path)
    is_complex = np.iscomplexobj(f.values)
    dtype = "<c16" if is_complex else "<f8"
    header = np.array([(f.grid.d, f.grid.X, f.grid.nx, f.grid.nt, int(is_complex))], dtype=_HEADER_DTYPE)
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(f.values, dtype=dtype).tobytes())
    sidecar = FieldHeader(
        d=f.grid.d, X=f.grid.X, nx=f.grid.nx, nt=f.grid.nt,
        dtype=dtype, axis_label=f.axis_label, padded=f.padded,
    )
    path.with_suffix(path.suffix + ".json").write_text(sidecar.model_dump_json(indent=2))
    return path


def load_field(path: str | Path) -> Field:
    path = Path(path)
    meta = FieldHeader.model_validate_json(path.with_suffix(path.suffix + ".json").read_text())
    raw = path.read_bytes()
    header = np.frombuffer(raw[: _HEADER_DTYPE.itemsize], dtype=_HEADER_DTYPE)[0]
    grid = GridSpec(d=int(header["d"]), X=float(header["X"]), nx=int(header["nx"]), nt=int(header["nt"]))
    n_last = grid.nt * (2 if meta.padded else 1)
    vals = np.frombuffer(raw[_HEADER_DTYPE.itemsize:], dtype=meta.dtype).reshape(
        (grid.nx,) * grid.d + (n_last,)
    )
    return Field(grid, vals.copy(), axis_label=meta.axis_label, padded=meta.padded)
