"""
Isotropic and anisotropic tubes in R^{d+1}, exact volumes, Monte-Carlo
intersection volumes, the volume law for crossing tubes and the admissibility
test for anisotropic scale vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import betainc, gamma

from ..errors import InvalidInputError
from .curve_geometry import Curve, frenet_frame

logger = logging.getLogger(__name__)

MC_CHUNK = 1 << 18


def ball_volume(d: int) -> float:
    """Volume ω_d of the unit ball in R^d."""
    return float(np.pi ** (d / 2) / gamma(d / 2 + 1))


@dataclass(frozen=True)
class ScaleVector:
    r: tuple[float, ...]

    def __post_init__(self):
        r = tuple(float(x) for x in self.r)
        if any(not 0 < x < 1 for x in r):
            raise InvalidInputError(f"scale vector components must lie in (0,1): {r}")
        object.__setattr__(self, "r", r)

    @property
    def d(self) -> int:
        return len(self.r)

    @classmethod
    def isotropic(cls, delta: float, d: int) -> "ScaleVector":
        return cls((delta,) * d)

    @classmethod
    def graded(cls, delta: float, d: int) -> "ScaleVector":
        return cls(tuple(delta ** j for j in range(1, d + 1)))


class Admissibility(NamedTuple):
    admissible: bool
    violated: Optional[str]


def check_admissible(r: ScaleVector | Sequence[float], tol: float = 1e-12) -> Admissibility:
    """Monotonicity, r_1 ≤ r_2^{1/2} and log-convexity r_j ≤ r_i^{(k-j)/(k-i)} r_k^{(j-i)/(k-i)}."""
    sv = r if isinstance(r, ScaleVector) else ScaleVector(tuple(r))
    logs = np.log(np.array(sv.r))
    d = sv.d
    for j in range(1, d):
        if logs[j] > logs[j - 1] + tol:
            return Admissibility(False, f"r_{j + 1} <= r_{j}")
    if d >= 2 and logs[0] > 0.5 * logs[1] + tol:
        return Admissibility(False, "r_1 <= r_2^(1/2)")
    for i in range(d):
        for k in range(i + 2, d):
            for j in range(i + 1, k):
                bound = ((k - j) * logs[i] + (j - i) * logs[k]) / (k - i)
                if logs[j] > bound + tol:
                    return Admissibility(False, f"log-convexity (i,j,k)=({i + 1},{j + 1},{k + 1})")
    return Admissibility(True, None)


@dataclass(frozen=True, eq=False)
class Tube:
    curve: Curve
    kind: Literal["isotropic", "anisotropic"]
    s: float
    delta: Optional[float] = None
    r: Optional[tuple[float, ...]] = None
    center_shift: np.ndarray = field(default=None, repr=False)
    frame: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        d = self.curve.d
        shift = np.zeros(d + 1) if self.center_shift is None else np.asarray(self.center_shift, float)
        if shift.shape != (d + 1,):
            raise InvalidInputError(f"center_shift must have {d + 1} entries")
        object.__setattr__(self, "center_shift", shift)
        if self.kind == "isotropic":
            if self.delta is None or self.delta <= 0:
                raise InvalidInputError("isotropic tube needs delta > 0")
        elif self.kind == "anisotropic":
            if self.r is None or len(self.r) != d or min(self.r) <= 0:
                raise InvalidInputError(f"anisotropic tube needs {d} positive half-widths")
            object.__setattr__(self, "r", tuple(float(x) for x in self.r))
            object.__setattr__(self, "frame", frenet_frame(self.curve, self.s))
        else:
            raise InvalidInputError(f"unknown tube kind '{self.kind}'")

    @property
    def d(self) -> int:
        return self.curve.d

    @property
    def direction(self) -> np.ndarray:
        return self.curve.eval(0, self.s)

    @property
    def half_widths(self) -> np.ndarray:
        """Cross-section half-widths in the tube's own coordinates."""
        if self.kind == "isotropic":
            return np.full(self.d, self.delta)
        return np.array(self.r)

    @property
    def volume(self) -> float:
        if self.kind == "isotropic":
            return 2.0 * ball_volume(self.d) * self.delta ** self.d
        return 2.0 * float(np.prod(2.0 * np.array(self.r)))

    def local(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Cross-section offset u = y − tγ(s) (Frenet coordinates if anisotropic) and t."""
        p = np.asarray(points, dtype=float) - self.center_shift
        t = p[..., -1]
        u = p[..., :-1] - t[..., None] * self.direction
        if self.kind == "anisotropic":
            u = u @ self.frame.T
        return u, t

    def contains(self, points) -> np.ndarray:
        u, t = self.local(points)
        inside_t = np.abs(t) <= 1.0
        if self.kind == "isotropic":
            return inside_t & (np.linalg.norm(u, axis=-1) <= self.delta)
        return inside_t & np.all(np.abs(u) <= np.array(self.r), axis=-1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "isotropic":
            spread = np.full(self.d, self.delta)
        else:
            spread = np.abs(self.frame).T @ np.array(self.r)
        reach = np.abs(self.direction) + spread
        lo = np.concatenate([-reach, [-1.0]]) + self.center_shift
        hi = np.concatenate([reach, [1.0]]) + self.center_shift
        return lo, hi

    def sample_local_box(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Uniform points in the sheared box {|u_j| ≤ w_j, |t| ≤ 1}; unit Jacobian."""
        w = self.half_widths
        c = rng.uniform(-1.0, 1.0, size=(n, self.d)) * w
        t = rng.uniform(-1.0, 1.0, size=n)
        u = c @ self.frame if self.kind == "anisotropic" else c
        y = u + t[:, None] * self.direction
        pts = np.concatenate([y, t[:, None]], axis=1) + self.center_shift
        return pts, 2.0 * float(np.prod(2.0 * w))


def tube_contains(tube: Tube, point) -> np.ndarray | bool:
    out = tube.contains(point)
    return bool(out) if np.ndim(out) == 0 else out


def parse_tube(spec: str, curve: Curve) -> Tube:
    """``iso:s=<f>,delta=<f>`` or ``aniso:s=<f>,r=<f,f,...>``."""
    kind, _, body = spec.partition(":")
    values: dict[str, list[str]] = {}
    key = None
    for token in filter(None, (t.strip() for t in body.split(","))):
        if "=" in token:
            key, _, v = token.partition("=")
            values[key.strip()] = [v]
        elif key is not None:
            values[key].append(token)
        else:
            raise InvalidInputError(f"malformed tube spec '{spec}'")
    try:
        s = float(values["s"][0])
        if kind == "iso":
            return Tube(curve, "isotropic", s, delta=float(values["delta"][0]))
        if kind == "aniso":
            return Tube(curve, "anisotropic", s, r=tuple(float(x) for x in values["r"]))
    except KeyError as exc:
        raise InvalidInputError(f"tube spec '{spec}' misses {exc}") from exc
    raise InvalidInputError(f"unknown tube kind in '{spec}'")


def intersection_volume_mc(
    tube_a: Tube, tube_b: Tube, samples: int, seed: int, task_index: int = 0
) -> tuple[float, float]:
    """Unbiased estimate of |tube_a ∩ tube_b| and its standard error."""
    if samples < 1000:
        raise InvalidInputError("need at least 10^3 samples")
    lo_a, hi_a = tube_a.bounding_box()
    lo_b, hi_b = tube_b.bounding_box()
    if np.any(hi_a < lo_b) or np.any(hi_b < lo_a):
        return 0.0, 0.0

    small, other = (tube_a, tube_b) if tube_a.volume <= tube_b.volume else (tube_b, tube_a)
    rng = np.random.default_rng([seed, task_index])
    hits = 0
    box_volume = 0.0
    remaining = samples
    while remaining:
        n = min(remaining, MC_CHUNK)
        pts, box_volume = small.sample_local_box(n, rng)
        hits += int(np.count_nonzero(small.contains(pts) & other.contains(pts)))
        remaining -= n
    frac = hits / samples
    estimate = box_volume * frac
    stderr = box_volume * np.sqrt(frac * (1.0 - frac) / samples)
    return float(estimate), float(stderr)


def predicted_intersection_volume(delta: float, gamma_gap: float, d: int) -> float:
    if delta <= 0 or gamma_gap < 0:
        raise InvalidInputError("need delta > 0 and gamma_gap >= 0")
    return delta ** (d + 1) / (delta + gamma_gap)


def intersection_volume_constant(d: int) -> float:
    """Centre of the range [2ω_d, 22ω_d] of |T_{10δ} ∩ T_δ| / (δ^{d+1}/(δ+gap))."""
    return 2.0 * ball_volume(d) * np.sqrt(11.0)


def min_intersection_offset(offset, direction) -> float:
    """min over t ∈ I of |offset + t·direction|."""
    offset = np.asarray(offset, float)
    direction = np.asarray(direction, float)
    dd = direction @ direction
    t = 0.0 if dd == 0 else float(np.clip(-(offset @ direction) / dd, -1.0, 1.0))
    return float(np.linalg.norm(offset + t * direction))


def _cap_volume(R, h, d: int):
    """Volume of the cap of height h (0 ≤ h ≤ R) of a d-ball of radius R."""
    x = np.clip((2 * R * h - h * h) / np.where(R > 0, R * R, 1.0), 0.0, 1.0)
    return 0.5 * ball_volume(d) * R ** d * betainc((d + 1) / 2.0, 0.5, x)


def ball_lens_volume(R1, R2, c, d: int):
    """Volume of B(0,R1) ∩ B(c·e,R2) in R^d, vectorized over broadcast inputs."""
    R1, R2, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (R1, R2, c)))
    R1 = np.maximum(R1, 0.0)
    R2 = np.maximum(R2, 0.0)
    omega = ball_volume(d)
    out = np.zeros(R1.shape)

    nested = c <= np.abs(R1 - R2)
    out = np.where(nested, omega * np.minimum(R1, R2) ** d, out)
    partial = ~nested & (c < R1 + R2)
    if np.any(partial):
        cs = np.where(partial, c, 1.0)
        a1 = (cs ** 2 + R1 ** 2 - R2 ** 2) / (2 * cs)
        h1 = R1 - a1
        h2 = R2 - (cs - a1)

        def cap(R, h):
            h = np.clip(h, 0.0, 2 * R)
            low = _cap_volume(R, np.minimum(h, R), d)
            high = omega * R ** d - _cap_volume(R, np.clip(2 * R - h, 0.0, R), d)
            return np.where(h <= R, low, high)

        out = np.where(partial, cap(R1, h1) + cap(R2, h2), out)
    return float(out) if out.ndim == 0 else out
