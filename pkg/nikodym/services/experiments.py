"""
Empirical operator norms, the sharpness constructions, scaling-law fits and
the acceptance suites built from them.

Randomness is keyed by (seed, index) everywhere, so results do not depend on
the number of workers. Norm estimates are lower bounds: each one is the ratio
achieved by a stored witness.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, Optional, Sequence

import numpy as np
from scipy.stats import special_ortho_group

from ..config import settings
from ..errors import InsufficientDataError, InvalidInputError, InvalidStrategyError
from ..schemas import ExperimentReport, NormEstimate, ScalingFit
from .curve_geometry import Curve, circle_lift, generalized_determinant, helix, moment_curve
from .decomposition import n0_schur_rows, rescaling_suite, top_symbol
from .operators import (
    BallIndicator,
    OperatorHandle,
    TubeIndicator,
    apply_blocks,
    apply_blocks_adjoint,
    averaging_direct,
    averaging_fio,
    b_delta_eval,
    decay_fit,
    fio_blocks,
    fractional_fio,
    indicator_field,
    kernel_K,
    nikodym_maximal,
    nikodym_maximal_field,
    s_derivative_matrix,
    schur_audit,
)
from .parallel import SERIAL, ParallelContext
from .sampled_fields import (
    Field,
    GridSpec,
    SpectralField,
    apply_multiplier,
    band_limited_field,
    evaluate_multiplier,
    inverse_partial_ft_x,
    mixed_norm,
)
from .symbols import (
    CutoffLibrary,
    build_a_delta,
    build_anisotropic_symbol,
    build_base_case_symbol,
    build_cutoffs,
    support_points,
)
from .tube_geometry import (
    ScaleVector,
    Tube,
    check_admissible,
    intersection_volume_constant,
    intersection_volume_mc,
    predicted_intersection_volume,
)

logger = logging.getLogger(__name__)

Strategy = Literal["random", "adversarial", "power-iteration"]
STRATEGIES = ("random", "adversarial", "power-iteration")

RANGE_LEVEL = 1.0 / 64
RANGE_MEASURE_FLOOR = 1.0 / 32
LEVEL_FLOOR = 1e-2
EXPONENT_TOLERANCE = 0.1
DOMINATION_LIMIT = 1e2
VOLUME_FACTOR = 4.0
RAYLEIGH_TOL = 1e-6


def default_grid(curve: Curve, nx: int = 64, nt: int = 32) -> GridSpec:
    reach = float(np.max(np.linalg.norm(curve.eval(0, np.linspace(-1, 1, 257)), axis=-1)))
    return GridSpec(d=curve.d, X=max(4.0, math.ceil(reach + 1.0)), nx=nx, nt=nt)


def _nyquist_band(grid: GridSpec, band: float) -> float:
    return float(min(band, 0.5 * np.pi / grid.h))


def _lp(values, cell: float, p: float) -> float:
    a = np.abs(np.asarray(values))
    if p == np.inf:
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a ** p) * cell) ** (1.0 / p))


def _check_exponent(p: float) -> None:
    if not (p == np.inf or p > 1):
        raise InvalidInputError(f"exponent {p} outside (1, inf]")


def _direction(i: int) -> float:
    """i-th van der Corput point mapped to I: -1, 0, -1/2, 1/2, -3/4, 1/4, ..."""
    x, denom = 0.0, 1.0
    while i:
        denom *= 2.0
        x += (i & 1) / denom
        i >>= 1
    return 2.0 * x - 1.0


# ── Probing ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Quadrature points in R^d with cell weights."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * np.asarray(values, dtype=float)))

    def lq(self, values, q: float) -> float:
        if q == np.inf:
            return float(np.max(np.abs(values))) if len(self.weights) else 0.0
        return self.integrate(np.abs(values) ** q) ** (1.0 / q)


def shell_probes(center, r0: float, reach: float, per_shell: int, seed: int) -> ProbeSet:
    """Uniform points in nested sup-norm shells r_{j-1} < |x - center|_∞ ≤ r_j, r_j = 2^j r0 ≥ reach."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    radii = [r0]
    while radii[-1] < reach:
        radii.append(2.0 * radii[-1])
    pts, wts = [], []
    for j, outer in enumerate(radii):
        rng = np.random.default_rng([seed, j])
        inner = radii[j - 1] if j else 0.0
        chunks, need = [], per_shell
        while need > 0:
            cand = rng.uniform(-outer, outer, size=(2 * per_shell, d))
            if inner:
                cand = cand[np.max(np.abs(cand), axis=-1) > inner]
            cand = cand[:need]
            chunks.append(cand)
            need -= len(cand)
        pts.append(center + np.concatenate(chunks))
        wts.append(np.full(per_shell, ((2 * outer) ** d - (2 * inner) ** d) / per_shell))
    return ProbeSet(np.concatenate(pts), np.concatenate(wts))


def lattice_probes(base: np.ndarray, radius: float, spacing: float) -> ProbeSet:
    """Cells of a cubic lattice of the given spacing within ``radius`` of any base point."""
    base = np.atleast_2d(np.asarray(base, dtype=float))
    d = base.shape[1]
    m = int(math.ceil(radius / spacing)) + 1
    ax = np.arange(-m, m + 1)
    offs = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    offs = offs[np.linalg.norm(offs, axis=-1) * spacing <= radius + spacing]
    cells = np.rint(base / spacing).astype(np.int64)
    idx = np.unique((cells[:, None, :] + offs[None, :, :]).reshape(-1, d), axis=0)
    return ProbeSet(idx * spacing, np.full(len(idx), spacing ** d))


def _curve_samples(curve: Curve, spacing: float) -> np.ndarray:
    speed = float(np.max(np.linalg.norm(curve.eval(1, np.linspace(-1, 1, 257)), axis=-1)))
    n = int(math.ceil(2.0 * max(speed, 1e-12) / (spacing / 2.0))) + 1
    return np.linspace(-1.0, 1.0, n)


def ball_probes(curve: Curve, ball: BallIndicator, delta: float) -> ProbeSet:
    """Lattice covering the support of N χ_B: points within δ + R(1 + sup|γ|) of y₀ + t₀γ(I)."""
    spacing = min(delta, ball.radius) / 2.0
    s = _curve_samples(curve, spacing)
    gam = curve.eval(0, s)
    base = ball.center[:-1] + ball.center[-1] * gam
    sup = float(np.max(np.linalg.norm(gam, axis=-1)))
    return lattice_probes(base, delta + ball.radius * (1.0 + sup), spacing)


def tube_probes(curve: Curve, tube: TubeIndicator, delta: float, per_shell: int, seed: int) -> ProbeSet:
    """Shells around the tube offset reaching the support of N χ_tube."""
    s = np.linspace(-1.0, 1.0, 1025)
    reach = float(np.max(np.linalg.norm(curve.eval(0, s) - curve.eval(0, tube.r_param), axis=-1)))
    scale = delta + tube.radius
    return shell_probes(tube.offset, 2.0 * scale, reach + scale, per_shell, seed)


def _indicator_params(g) -> dict:
    if isinstance(g, BallIndicator):
        return {"kind": "ball", "center": [float(c) for c in g.center], "radius": float(g.radius)}
    return {"kind": "tube", "curve": g.curve.name, "r": float(g.r_param),
            "offset": [float(c) for c in g.offset], "radius": float(g.radius)}


# ── Witnesses and norm search ───────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Witness:
    """Test function achieving a norm estimate: a sampled Field or an exact indicator with its probes."""

    payload: Any
    probes: Optional[ProbeSet] = None

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        if isinstance(self.payload, Field):
            g = self.payload.grid
            h.update(json.dumps([g.d, g.X, g.nx, g.nt, self.payload.axis_label]).encode())
            h.update(np.ascontiguousarray(self.payload.values).tobytes())
        else:
            h.update(json.dumps(_indicator_params(self.payload), sort_keys=True).encode())
        if self.probes is not None:
            h.update(np.ascontiguousarray(self.probes.points).tobytes())
            h.update(np.ascontiguousarray(self.probes.weights).tobytes())
        return h.hexdigest()


def _test_scale(op: OperatorHandle, grid: Optional[GridSpec]) -> float:
    if op.delta is not None:
        return float(op.delta)
    if op.r is not None:
        return float(min(op.r))
    if op.symbol is not None:
        if "delta" in op.symbol.meta.extra:
            return float(op.symbol.meta.extra["delta"])
        if op.symbol.meta.lam:
            return 1.0 / float(op.symbol.meta.lam)
    return 4.0 * grid.h if grid is not None else 0.1


def _apply_on_grid(op: OperatorHandle, g: Field) -> tuple[np.ndarray, float]:
    """Operator output on the grid and its quadrature cell weight."""
    grid = g.grid
    cell = grid.h ** grid.d * grid.dt
    if op.kind == "identity":
        return g.values, cell
    if op.kind == "multiplier":
        return apply_multiplier(g, op.multiplier).values, cell
    if op.kind == "averaging_fio":
        return averaging_fio(op.symbol, op.curve, g).values, cell
    if op.kind == "fractional_fio":
        return fractional_fio(op.symbol, op.curve, g).values, cell
    if op.kind == "maximal":
        return nikodym_maximal_field(op, g), grid.h ** grid.d
    if op.kind == "averaging_direct":
        scale = op.delta if op.delta is not None else op.r
        x = grid.x_points()[..., None, :]
        vals = averaging_direct(op.curve, scale, g, x, grid.t_axis, cross_nodes=op.cross_nodes,
                                t_nodes=op.t_nodes)
        return vals, cell
    raise InvalidInputError(f"{op.kind} handles do not act on fields")


def evaluate_witness(op: OperatorHandle, witness: Witness, p: float = 2.0, q: float = 2.0) -> float:
    """‖op g‖_q / ‖g‖_p for the witness g, computed exactly as during the search."""
    g = witness.payload
    if isinstance(g, Field):
        out, cell = _apply_on_grid(op, g)
        den = _lp(g.values, g.grid.h ** g.grid.d * g.grid.dt, p)
        return _lp(out, cell, q) / den if den > 0 else 0.0
    if op.kind != "maximal":
        raise InvalidInputError("indicator witnesses are evaluated through the maximal function")
    vals = nikodym_maximal(op, g, witness.probes.points)
    return witness.probes.lq(vals, q) / g.lp_norm(p)


def _random_candidate(op: OperatorHandle, i: int, seed: int, grid: GridSpec) -> Witness:
    rng = np.random.default_rng([seed, i])
    band = _nyquist_band(grid, 1.0 / _test_scale(op, grid))
    return Witness(band_limited_field(grid, band, rng, nonnegative=op.kind == "maximal"))


def _indicator_candidate(curve: Optional[Curve], d: int, i: int, radius: float, t0: float):
    if i == 0 or curve is None:
        return BallIndicator(center=np.r_[np.zeros(d), t0], radius=radius)
    return TubeIndicator(curve=curve, r_param=_direction(i), offset=np.zeros(d), radius=radius)


def _adversarial_candidate(op: OperatorHandle, i: int, seed: int, grid: Optional[GridSpec]) -> Witness:
    delta = _test_scale(op, grid)
    if op.kind == "maximal":
        g = _indicator_candidate(op.curve, op.curve.d, i, delta, -1.0)
        if isinstance(g, BallIndicator):
            return Witness(g, ball_probes(op.curve, g, delta))
        return Witness(g, tube_probes(op.curve, g, delta, settings.PROBE_POINTS, seed))
    if grid is None:
        raise InvalidInputError("adversarial fields need a grid")
    g = _indicator_candidate(op.curve, grid.d, i, max(delta, grid.dt), 0.0)
    return Witness(indicator_field(g, grid, mollify=delta / 4.0))


def _spectral_operator(op: OperatorHandle, grid: GridSpec):
    """Per-frequency action and adjoint on partial Fourier coefficients."""
    if op.kind == "identity":
        return (lambda v: v), (lambda w: w)
    if op.kind == "multiplier":
        m = evaluate_multiplier(op.multiplier, grid.frequencies(), grid.t_axis)
        return (lambda v: m * v), (lambda w: np.conj(m) * w)
    if op.kind in ("averaging_fio", "fractional_fio"):
        M = fio_blocks(op.symbol, op.curve, grid)
        if op.kind == "fractional_fio":
            M = np.einsum("us,...st->...ut", s_derivative_matrix(grid, 0.5), M)
        return (lambda v: apply_blocks(M, v)), (lambda w: apply_blocks_adjoint(M, w))
    raise InvalidStrategyError(f"power iteration needs a spectral backend, not {op.kind}")


def _power_iteration(op: OperatorHandle, starts: int, seed: int, grid: GridSpec) -> tuple[float, Witness, list]:
    forward, adjoint = _spectral_operator(op, grid)
    best, best_v, best_hist = -1.0, None, []
    for start in range(starts):
        rng = np.random.default_rng([seed, start])
        v = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        v /= np.linalg.norm(v)
        history = []
        for _ in range(settings.POWER_ITERATIONS):
            w = forward(v)
            history.append(float(np.vdot(w, w).real))
            v = adjoint(w)
            norm = np.linalg.norm(v)
            if norm == 0:
                break
            v /= norm
        w = forward(v)
        value = float(np.sqrt(np.vdot(w, w).real / np.vdot(v, v).real))
        if value > best:
            best, best_v, best_hist = value, v, history
    field = inverse_partial_ft_x(SpectralField(grid, best_v))
    return best, Witness(field), best_hist


def rayleigh_monotone(history: Sequence[float], tol: float = RAYLEIGH_TOL) -> bool:
    """Successive Rayleigh quotients never drop by more than a relative `tol`."""
    return all(b >= a * (1.0 - tol) for a, b in zip(history, history[1:]))


def search_norm(
    op: OperatorHandle,
    p: float = 2.0,
    q: float = 2.0,
    strategy: Strategy = "random",
    trials: int = 4,
    seed: int = 0,
    grid: Optional[GridSpec] = None,
) -> tuple[NormEstimate, Witness]:
    """Largest ‖op g‖_q / ‖g‖_p over the candidate family, with the witness achieving it."""
    _check_exponent(p)
    _check_exponent(q)
    if strategy not in STRATEGIES:
        raise InvalidStrategyError(f"unknown strategy '{strategy}'")
    if trials < 1:
        raise InvalidInputError("need at least one trial")
    if op.kind == "kernel":
        raise InvalidInputError("kernel handles have no norm to estimate")
    grid = grid or op.grid
    if grid is None and op.curve is not None and not (op.kind == "maximal" and strategy == "adversarial"):
        grid = default_grid(op.curve)

    if strategy == "power-iteration":
        if not op.is_linear:
            raise InvalidStrategyError("power iteration needs a linear operator; the maximal function is not")
        if p != 2 or q != 2:
            raise InvalidStrategyError("power iteration estimates L2 -> L2 norms only")
        if grid is None:
            raise InvalidInputError("power iteration needs a grid")
        value, witness, history = _power_iteration(op, trials, seed, grid)
        monotone = rayleigh_monotone(history)
        if not monotone:
            logger.warning("%s: Rayleigh quotients decreased during power iteration", op.name)
    else:
        if grid is None and strategy == "random":
            raise InvalidInputError("random fields need a grid")
        candidate = _random_candidate if strategy == "random" else _adversarial_candidate
        value, witness, history = -1.0, None, []
        monotone = None
        for i in range(trials):
            w = candidate(op, i, seed, grid)
            ratio = evaluate_witness(op, w, p, q)
            history.append(ratio)
            logger.debug("%s trial %d: ratio %.6g", op.name, i, ratio)
            if ratio > value:
                value, witness = ratio, w

    estimate = NormEstimate(
        operator=op.name, p=p, q=q, strategy=strategy, value=value, trials=trials, seed=seed,
        witness_hash=witness.digest, history=history, monotone=monotone,
    )
    logger.info("norm %s (%s, p=%g, q=%g): %.6g", op.name, strategy, p, q, value)
    return estimate, witness


def empirical_norm(
    op: OperatorHandle,
    p: float = 2.0,
    q: float = 2.0,
    strategy: Strategy = "random",
    trials: int = 4,
    seed: int = 0,
    grid: Optional[GridSpec] = None,
) -> NormEstimate:
    return search_norm(op, p, q, strategy, trials, seed, grid)[0]


# ── Scaling laws ────────────────────────────────────────────────────────────

def linear_fit(x, y) -> tuple[float, float, float, float]:
    """Least squares y = slope·x + intercept; returns slope, intercept, r², slope standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise InsufficientDataError("need at least two distinct abscissae")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    n = len(x)
    stderr = math.sqrt(ss_res / (n - 2) / float(np.sum((x - x.mean()) ** 2))) if n > 2 else math.nan
    return float(slope), float(intercept), float(r2), stderr


def scaling_law_fit(
    scales: Sequence[float],
    norms: Sequence[float],
    claimed_exponent: float,
    kind: Literal["delta", "lambda"] = "delta",
    slack: Optional[float] = None,
    bound: Literal["upper", "lower"] = "upper",
) -> ScalingFit:
    """Slope of log(norm) against log log δ⁻¹ (or log log(2+λ)), judged against the claimed exponent."""
    if len(scales) != len(norms):
        raise InvalidInputError("scales and norms differ in length")
    if len(scales) < 4:
        raise InsufficientDataError(f"need at least 4 grid points, got {len(scales)}")
    scales = np.asarray(scales, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if np.any(norms <= 0):
        raise InvalidInputError("norms must be positive")
    if kind == "delta":
        if np.any((scales <= 0) | (scales >= 1)):
            raise InvalidInputError("delta values must lie in (0,1)")
        x = np.log(np.log(1.0 / scales))
    else:
        x = np.log(np.log(2.0 + scales))
    y = np.log(norms)
    slope, intercept, r2, stderr = linear_fit(x, y)
    slack = settings.SLACK if slack is None else slack
    passed = slope <= claimed_exponent + slack if bound == "upper" else slope >= claimed_exponent - slack
    return ScalingFit(
        x=x.tolist(), y=y.tolist(), slope=slope, intercept=intercept, r2=r2, slope_stderr=stderr,
        claimed_exponent=claimed_exponent, slack=slack, bound=bound, passed=bool(passed),
    )


def theorem1_scaling(
    curve: Curve,
    deltas: Sequence[float],
    p: float = 2.0,
    q: float = 2.0,
    trials: int = 3,
    seed: int = 0,
    slack: Optional[float] = None,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    """Adversarial L^p norms of N_δ across δ; the fitted log-log slope is an upper-bound check at d/2."""

    def one(delta: float) -> NormEstimate:
        op = OperatorHandle("maximal", curve=curve, delta=float(delta))
        return empirical_norm(op, p, q, "adversarial", trials, seed)

    estimates = ctx.map(one, deltas)
    values = [e.value for e in estimates]
    upper = scaling_law_fit(deltas, values, curve.d / 2.0, "delta", slack, "upper")
    lower = scaling_law_fit(deltas, values, 1.0 / p, "delta", slack, "lower")
    rows = [
        {"delta": float(d), "norm": e.value, "x": x, "y": y, "witness": e.witness_hash}
        for d, e, x, y in zip(deltas, estimates, upper.x, upper.y)
    ]
    return ExperimentReport(
        experiment="theorem1-scaling",
        passed=upper.passed,
        summary={"upper_fit": upper.model_dump(), "lower_fit": lower.model_dump()},
        rows=rows,
    )


def fio_lambda_scaling(
    curve: Curve,
    lambdas: Sequence[float],
    grid: Optional[GridSpec] = None,
    trials: int = 2,
    seed: int = 0,
    slack: Optional[float] = None,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    """‖𝔇_s𝒜[a^λ]‖₂→₂ by power iteration across λ against (log(2+λ))^{(d-1)/2}."""
    lib = build_cutoffs()
    grid = grid or default_grid(curve, nx=128)

    def one(lam: float) -> NormEstimate:
        op = OperatorHandle("fractional_fio", curve=curve, symbol=top_symbol(lib, curve, lam), grid=grid)
        return empirical_norm(op, 2.0, 2.0, "power-iteration", trials, seed, grid)

    estimates = ctx.map(one, lambdas)
    fit = scaling_law_fit(lambdas, [e.value for e in estimates], (curve.d - 1) / 2.0, "lambda", slack)
    rows = [{"lambda": float(l), "norm": e.value, "rayleigh_last": e.history[-1] if e.history else None,
             "rayleigh_monotone": e.monotone}
            for l, e in zip(lambdas, estimates)]
    converged = all(e.monotone for e in estimates)
    return ExperimentReport(experiment="prop-main-scaling", passed=fit.passed and converged,
                            summary={"fit": fit.model_dump()}, rows=rows)


# ── Sharpness of the range ──────────────────────────────────────────────────

def sharpness_range_experiment(curve: Curve, delta: float, p: float = 2.0, seed: int = 0,
                               level: float = RANGE_LEVEL) -> dict:
    """Superlevel set {N g_δ ≥ cδ} for g_δ the δ-ball at (0, -1), measured on a lattice around -γ."""
    d = curve.d
    ball = BallIndicator(center=np.r_[np.zeros(d), -1.0], radius=delta)
    handle = OperatorHandle("maximal", curve=curve, delta=delta)
    probes = lattice_probes(-curve.eval(0, _curve_samples(curve, delta / 2.0)), 4.0 * delta, delta / 2.0)
    vals = nikodym_maximal(handle, ball, probes.points)
    threshold = level * delta
    measure = probes.integrate(vals >= threshold)

    rng = np.random.default_rng([seed, 0])
    s = rng.uniform(-1.0, 1.0, 200)
    v = rng.standard_normal((200, d))
    v *= (0.5 * delta * rng.uniform(0.0, 1.0, 200) ** (1.0 / d) / np.linalg.norm(v, axis=-1))[:, None]
    near = nikodym_maximal(handle, ball, -curve.eval(0, s) + v)

    return {
        "delta": float(delta),
        "p": float(p),
        "measure": measure,
        "measure_ratio": measure / delta ** (d - 1),
        "max_value": float(vals.max()) if len(vals) else 0.0,
        "min_value": float(vals.min()) if len(vals) else 0.0,
        "containment": float(np.mean(near >= threshold)),
        "norm_lower_bound": threshold * measure ** (1.0 / p) / ball.lp_norm(p),
        "probes": int(len(vals)),
    }


def sharpness_range_sweep(curve: Curve, deltas: Sequence[float], p: float = 2.0, seed: int = 0,
                          slack: Optional[float] = None, ctx: ParallelContext = SERIAL) -> ExperimentReport:
    """Per-δ superlevel measures and the exponent p_min = d + 1 − m forced by |{N g_δ ≥ cδ}| ~ δ^m."""
    slack = settings.SLACK if slack is None else slack
    rows = ctx.map(lambda delta: sharpness_range_experiment(curve, delta, p, seed), deltas)
    summary: dict[str, Any] = {"level": RANGE_LEVEL, "measure_floor": RANGE_MEASURE_FLOOR}
    passed = all(
        r["measure_ratio"] >= RANGE_MEASURE_FLOOR and r["max_value"] <= 1 + 1e-9 and r["min_value"] >= 0
        and r["containment"] >= 0.95
        for r in rows
    )
    if len(rows) >= 2:
        m, _, r2, stderr = linear_fit(np.log(deltas), np.log([max(r["measure"], 1e-300) for r in rows]))
        p_min = curve.d + 1 - m
        summary.update(measure_exponent=m, r2=r2, stderr=stderr, implied_p_min=p_min)
        passed = passed and p_min >= 2.0 - slack
    return ExperimentReport(experiment="sharpness-range", passed=bool(passed), summary=summary, rows=rows)


# ── Sharpness of the operator norm ──────────────────────────────────────────

def _check_normalization(curve: Curve) -> None:
    size = np.linalg.norm(curve.eval(0, np.linspace(-1, 1, 257)), axis=-1)
    if size.min() <= 0.05 or size.max() / size.min() > 10.0:
        raise InvalidInputError(f"{curve.name} violates |γ(s)| ~ 1 on I")


def sharpness_log_experiment(
    curve: Curve,
    delta: float,
    p: float = 2.0,
    x: Optional[Sequence[float]] = None,
    r: float = -1.0,
    tube_factor: float = 1.0,
    per_shell: Optional[int] = None,
    seed: int = 0,
) -> dict:
    """Level sets A_k = {2^{-k-1} < N f ≤ 2^{-k}} of f = χ of the tube of radius tube_factor·δ about γ(r) through x.

    Levels are resolved while 2^{k+2}(1 + tube_factor)δ stays within the reach of
    the cone x + t(γ(r) − γ(s)); the per-level constant and the growth exponent of
    Σ_{1≤k≤K} 2^{-pk}|A_k| use resolved levels only.
    """
    _check_normalization(curve)
    d = curve.d
    w = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    K = int(math.floor(math.log2(1.0 / delta)))
    f = TubeIndicator(curve=curve, r_param=r, offset=w, radius=tube_factor * delta)
    handle = OperatorHandle("maximal", curve=curve, delta=delta)
    probes = tube_probes(curve, f, delta, per_shell or settings.PROBE_POINTS, seed)
    vals = nikodym_maximal(handle, f, probes.points)

    s = np.linspace(-1.0, 1.0, 1025)
    reach = float(np.max(np.linalg.norm(curve.eval(0, s) - curve.eval(0, r), axis=-1)))
    scale = (1.0 + tube_factor) * delta
    levels = []
    for k in range(K + 1):
        measure = probes.integrate((vals > 2.0 ** (-k - 1)) & (vals <= 2.0 ** (-k)))
        levels.append({
            "k": k,
            "measure": measure,
            "ratio": measure / (2.0 ** (2 * k) * delta ** d),
            "resolved": bool(2.0 ** (k + 2) * scale <= reach),
        })
    resolved = [lv for lv in levels if lv["resolved"]]
    K_fit = max((lv["k"] for lv in resolved), default=-1)

    mass = probes.integrate(vals ** p)
    lhs = sum(2.0 ** (-p * lv["k"]) * lv["measure"] for lv in levels)
    out: dict[str, Any] = {
        "delta": float(delta),
        "p": float(p),
        "r": float(r),
        "tube_factor": float(tube_factor),
        "K": K,
        "K_fit": K_fit,
        "levels": levels,
        "max_value": float(vals.max()) if len(vals) else 0.0,
        "min_value": float(vals.min()) if len(vals) else 0.0,
        "chebyshev_lhs": lhs,
        "chebyshev_rhs": 2.0 ** p * mass,
        "chebyshev_ok": bool(lhs <= 2.0 ** p * mass * (1 + 1e-12)),
        "norm_lower_bound": mass ** (1.0 / p) / f.lp_norm(p),
        "c_min": min((lv["ratio"] for lv in resolved), default=0.0),
        "degenerate": K_fit < 2,
    }
    if out["degenerate"]:
        out.update(exponent=None, exponent_stderr=None, passed=False)
        logger.warning("sharpness-log at delta=%g: fewer than two resolved levels", delta)
        return out

    partial = np.cumsum([2.0 ** (-p * lv["k"]) * lv["measure"] / delta ** d for lv in levels[1:K_fit + 1]])
    if np.any(partial <= 0):
        out.update(exponent=None, exponent_stderr=None, passed=False, degenerate=True)
        return out
    slope, _, _, stderr = linear_fit(np.log(np.arange(1, K_fit + 1)), np.log(partial))
    exponent = slope / p
    out.update(
        exponent=exponent,
        exponent_stderr=stderr / p if math.isfinite(stderr) else None,
        exponent_range=[exponent - 2 * stderr / p, exponent + 2 * stderr / p] if math.isfinite(stderr) else None,
        passed=bool(out["chebyshev_ok"] and out["c_min"] >= LEVEL_FLOOR and exponent >= 1.0 / p - EXPONENT_TOLERANCE
                    and out["max_value"] <= 1 + 1e-9 and out["min_value"] >= 0),
    )
    logger.info("sharpness-log delta=%g: exponent %.3f over %d levels, c_min %.3g", delta, exponent, K_fit, out["c_min"])
    return out


def sharpness_log_report(curve: Curve, delta: float, p: float = 2.0, seed: int = 0, **kwargs) -> ExperimentReport:
    res = sharpness_log_experiment(curve, delta, p, seed=seed, **kwargs)
    rows = [{"delta": res["delta"], **lv} for lv in res.pop("levels")]
    return ExperimentReport(experiment="sharpness-log", passed=res["passed"], summary=res, rows=rows)


# ── Sobolev embedding and backend domination ────────────────────────────────

def embedding_terms(symbol, curve: Curve, g: Field, delta: float) -> tuple[float, float]:
    """(‖𝒩[a]g‖_{L²_x L^∞_s}, √log δ⁻¹ ‖𝔇_s𝒜g‖₂ + ‖g‖₂)."""
    lhs = mixed_norm(averaging_fio(symbol, curve, g), 2, np.inf)
    rhs = math.sqrt(math.log(1.0 / delta)) * mixed_norm(fractional_fio(symbol, curve, g), 2, 2) + g.norm()
    return lhs, rhs


def sobolev_embedding_check(
    curve: Curve,
    delta_grid: Sequence[float],
    fields_per_delta: int = 20,
    seed: int = 0,
    grid: Optional[GridSpec] = None,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    """Smallest C per δ over random band-limited fields; uniform when max C ≤ 2 min C."""
    lib = build_cutoffs()
    grid = grid or default_grid(curve)

    def one(item: tuple[int, float]) -> dict:
        i, delta = item
        a = build_a_delta(lib, delta, curve=curve)
        band = _nyquist_band(grid, 1.0 / delta)
        worst = 0.0
        for j in range(fields_per_delta):
            g = band_limited_field(grid, band, np.random.default_rng([seed, i, j]))
            lhs, rhs = embedding_terms(a, curve, g, delta)
            if rhs > 0:
                worst = max(worst, lhs / rhs)
        return {"delta": float(delta), "constant": worst, "fields": fields_per_delta}

    rows = ctx.map(one, list(enumerate(delta_grid)))
    consts = [r["constant"] for r in rows]
    ratio = max(consts) / min(consts) if min(consts) > 0 else math.inf
    return ExperimentReport(
        experiment="sobolev-check",
        passed=bool(ratio <= 2.0),
        summary={"max_constant": max(consts), "min_constant": min(consts), "ratio": ratio},
        rows=rows,
    )


def backend_domination(
    curve: Curve,
    delta: float,
    grid: Optional[GridSpec] = None,
    fields: int = 10,
    points: int = 500,
    seed: int = 0,
) -> dict:
    """Smallest C with |𝒜_δ g| ≤ C |𝒜[a_δ]g| at sampled (x, s) for nonnegative smooth g."""
    lib = build_cutoffs()
    grid = grid or default_grid(curve)
    a = build_a_delta(lib, delta, curve=curve)
    interior = np.nonzero(np.abs(grid.x_axis) <= grid.X - 2.0)[0]
    worst = 0.0
    for j in range(fields):
        rng = np.random.default_rng([seed, j])
        g = band_limited_field(grid, _nyquist_band(grid, 1.0 / delta), rng, nonnegative=True)
        fio = averaging_fio(a, curve, g).values
        ix = interior[rng.integers(0, len(interior), size=(points, grid.d))]
        js = rng.integers(0, grid.nt, size=points)
        xs = grid.x_points()[tuple(ix.T)]
        direct = np.abs(averaging_direct(curve, delta, g, xs, grid.t_axis[js]))
        spectral = np.abs(fio[tuple(ix.T) + (js,)])
        keep = direct >= 0.1 * direct.max()
        with np.errstate(divide="ignore"):
            worst = max(worst, float(np.max(direct[keep] / spectral[keep])))
    return {"delta": float(delta), "domination_constant": worst,
            "passed": bool(math.isfinite(worst) and worst <= DOMINATION_LIMIT)}


def backend_check(curve: Curve, deltas: Sequence[float], grid: Optional[GridSpec] = None, seed: int = 0,
                  fields: int = 10, ctx: ParallelContext = SERIAL) -> ExperimentReport:
    rows = ctx.map(lambda delta: backend_domination(curve, delta, grid, fields=fields, seed=seed), deltas)
    return ExperimentReport(experiment="backend-check", passed=all(r["passed"] for r in rows),
                            summary={"limit": DOMINATION_LIMIT}, rows=rows)


# ── Acceptance suites ───────────────────────────────────────────────────────

def _rotated(curve: Curve, Q: np.ndarray) -> Curve:
    base = curve.oracle
    return Curve(name=f"rotated[{curve.name}]", d=curve.d, oracle=lambda i, s: base(i, s) @ Q.T)


def curve_suite(dims: Sequence[int] = (1, 2, 3, 4, 5, 6), points: int = 1000, seed: int = 0) -> ExperimentReport:
    """Moment-curve determinant ≡ 1 and rotation invariance of the generalized determinant."""
    s = np.linspace(-1.0, 1.0, points)
    rows = []
    for d in dims:
        rng = np.random.default_rng([seed, d])
        Q = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.array([[1.0]])
        curve = moment_curve(d)
        det = generalized_determinant(curve, s, d)
        rot = generalized_determinant(_rotated(curve, Q), s, d)
        rows.append({"curve": curve.name, "d": d, "det_error": float(np.max(np.abs(det - 1.0))),
                     "rotation_error": float(np.max(np.abs(rot - det)))})
    for curve in (circle_lift(), helix()):
        rng = np.random.default_rng([seed, 100 + curve.d])
        Q = special_ortho_group.rvs(curve.d, random_state=rng)
        det = generalized_determinant(curve, s, curve.d)
        rot = generalized_determinant(_rotated(curve, Q), s, curve.d)
        rows.append({"curve": curve.name, "d": curve.d, "det_error": None,
                     "rotation_error": float(np.max(np.abs(rot - det)))})
    passed = all((r["det_error"] is None or r["det_error"] <= 1e-10) and r["rotation_error"] <= 1e-10 for r in rows)
    return ExperimentReport(experiment="curve-suite", passed=passed, rows=rows)


def cutoff_suite(points: int = 10_000) -> ExperimentReport:
    lib: CutoffLibrary = build_cutoffs()
    y = np.linspace(-200.0, 200.0, points)
    check = lib.psi_check(y)
    partitions = {k: v for k, v in lib.residuals.items() if k != "psi_check_min"}
    rows = [{"check": k, "value": float(v)} for k, v in sorted(partitions.items())]
    rows.append({"check": "psi_check_min", "value": float(check.min())})
    rows.append({"check": "c0", "value": lib.c0})
    passed = all(v <= 1e-8 for v in partitions.values()) and check.min() >= 0 and lib.c0 > 0
    return ExperimentReport(experiment="cutoff-suite", passed=bool(passed), summary={"c0": lib.c0}, rows=rows)


def rescaling_acceptance(
    rhos: Sequence[float] = (2.0 ** -4, 2.0 ** -6, 2.0 ** -8),
    anchors: Sequence[float] = (0.0, 0.3, -0.6),
) -> ExperimentReport:
    rows, passed = [], True
    for curve, s0 in itertools.product((circle_lift(), moment_curve(3)), anchors):
        res = rescaling_suite(curve, rhos, s0=s0)
        passed &= res["passed"]
        rows.extend({"curve": curve.name, "spread": res["spread"], **row} for row in res["rows"])
    return ExperimentReport(experiment="rescaling-suite", passed=bool(passed), rows=rows)


def tube_volume_suite(
    dims: Sequence[int] = (2, 3),
    deltas: Sequence[float] = (2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6),
    s_values: Sequence[float] = (0.0, 0.1, 0.25, 0.5, 1.0),
    samples: Optional[int] = None,
    seed: int = 0,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    """|T_{10δ}(0) ∩ T_δ(s)| by Monte Carlo against C_d δ^{d+1}/(δ + |γ(0) − γ(s)|), within a factor 4."""
    samples = samples or settings.MC_SAMPLES
    pairs = [(d, delta, s) for d in dims for delta in deltas for s in s_values]

    def one(item: tuple[int, tuple[int, float, float]]) -> dict:
        index, (d, delta, s) = item
        curve = circle_lift() if d == 2 else moment_curve(d)
        big = Tube(curve, "isotropic", 0.0, delta=10.0 * delta)
        small = Tube(curve, "isotropic", s, delta=delta)
        vol, err = intersection_volume_mc(big, small, samples, seed, task_index=index)
        gap = float(np.linalg.norm(curve.eval(0, s) - curve.eval(0, 0.0)))
        predicted = intersection_volume_constant(d) * predicted_intersection_volume(delta, gap, d)
        ratio = vol / predicted
        return {"d": d, "delta": float(delta), "s": float(s), "gap": gap, "mc_volume": vol, "stderr": err,
                "predicted": predicted, "ratio": ratio,
                "pass": bool(1.0 / VOLUME_FACTOR <= ratio <= VOLUME_FACTOR)}

    rows = ctx.map(one, list(enumerate(pairs)))
    return ExperimentReport(experiment="tube-volume", passed=all(r["pass"] for r in rows),
                            summary={"pairs": len(rows), "samples": samples}, rows=rows)


def aniso_admissibility(
    curve: Curve,
    deltas: Optional[Sequence[float]] = None,
    points: int = 1000,
    seed: int = 0,
) -> ExperimentReport:
    """Admissibility of the isotropic and graded families, and {a_δ ≥ ½} ⊆ {a_r ≥ 2^{-d}}, {a_r ≥ ½} ⊆ {a_{δ/√d} ≥ ½}."""
    deltas = deltas or [2.0 ** -k for k in range(1, 11)]
    lib = build_cutoffs()
    d = curve.d
    rows = []
    for i, delta in enumerate(deltas):
        iso = check_admissible(ScaleVector.isotropic(delta, d))
        graded = check_admissible(ScaleVector.graded(delta, d))
        rng = np.random.default_rng([seed, i])
        xi = rng.uniform(-1.0, 1.0, size=(points, d)) * 2.0 * math.sqrt(d) / delta
        s = rng.uniform(-1.0, 1.0, size=points)
        t = np.zeros(points)
        a_r = build_anisotropic_symbol(lib, curve, ScaleVector.isotropic(delta, d)).eval(xi, s, t)
        a_in = build_a_delta(lib, delta, curve=curve).eval(xi, s, t)
        a_out = build_a_delta(lib, delta / math.sqrt(d), curve=curve).eval(xi, s, t)
        inner_ok = bool(np.all(a_r[a_in >= 0.5] >= 2.0 ** -d - 1e-12))
        outer_ok = bool(np.all(a_out[a_r >= 0.5] >= 0.5 - 1e-12))
        rows.append({"delta": float(delta), "isotropic": iso.admissible, "graded": graded.admissible,
                     "graded_violation": graded.violated or "", "sandwich_inner": inner_ok,
                     "sandwich_outer": outer_ok})
    passed = all(r["isotropic"] and r["graded"] and r["sandwich_inner"] and r["sandwich_outer"] for r in rows)
    return ExperimentReport(experiment="aniso-admissibility", passed=passed, summary={"d": d}, rows=rows)


def kernel_base_case(
    curve: Curve,
    lambdas: Sequence[float] = (2.0 ** 6, 2.0 ** 8, 2.0 ** 10),
    A: float = 2.0,
    seed: int = 0,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    """Decay of |K[a]| in (1 + |t − t'|λ) and both Schur estimates with Λ = λ for the L = 1 symbol."""
    lib = build_cutoffs()

    def one(lam: float) -> list[dict]:
        sym = build_base_case_symbol(lib, curve, lam, A)
        xi, _, _ = support_points(sym, 256, seed)
        gaps = np.geomspace(2.0 / lam, 0.9, 40)
        K0 = abs(kernel_K(sym, curve, xi[0], 0.0, 0.0))
        fit = decay_fit(gaps * lam, np.abs(kernel_K(sym, curve, xi[0], 0.0, gaps)) / K0, floor=1e-10)
        rows = [{"lambda": float(lam), "iota": None, "Lambda": None, "sup_value": K0, "normalized": None,
                 "decay_exponent": fit["exponent"], "pass": bool(fit["exponent"] >= 2.0)}]
        for row in schur_audit(sym, curve, Lambda=lam, samples=8, t_samples=3, seed=seed):
            rows.append({**row, "decay_exponent": None})
        return rows

    rows = [row for chunk in ctx.map(one, lambdas) for row in chunk]
    schur = [r for r in rows if r["iota"] is not None]
    constant = max(r["normalized"] for r in schur)
    return ExperimentReport(
        experiment="kernel-base-case",
        passed=all(r["pass"] for r in rows),
        summary={"schur_constant": constant, "limit": settings.SCHUR_CONSTANT},
        rows=rows,
    )


def n0_schur(
    curve: Curve,
    lambdas: Sequence[float] = (2.0 ** 6, 2.0 ** 8, 2.0 ** 10),
    N: int = 2,
    samples: Optional[int] = None,
    seed: int = 0,
    ctx: ParallelContext = SERIAL,
) -> ExperimentReport:
    rows = [row for chunk in ctx.map(lambda lam: n0_schur_rows(curve, lam, N, samples, seed), lambdas)
            for row in chunk]
    constant = max(r["normalized"] for r in rows)
    return ExperimentReport(experiment="n0-schur", passed=all(r["pass"] for r in rows),
                            summary={"schur_constant": constant, "N": N}, rows=rows)


def error_term_decay(
    curve: Curve,
    delta: float = 2.0 ** -4,
    C_cuts: Sequence[float] = (0.25, 1.0, 4.0, 16.0),
    t: float = 0.5,
) -> ExperimentReport:
    """Decay exponent of b_δ(ξ, σ, t) in σ beyond C/δ for a scan of cutoff constants.

    Small C keeps σ inside the stationary range |σ| ≲ |t||ξ| and is the negative control;
    the verdict uses the largest C.
    """
    lib = build_cutoffs()
    a = build_a_delta(lib, delta, curve=curve)
    xi = np.zeros(curve.d)
    xi[0] = 0.5 / delta
    speed = abs(t) * float(np.max(np.abs(curve.eval(1, np.linspace(-2, 2, 257)) @ xi)))
    rows = []
    for C in sorted(C_cuts):
        sigma = np.geomspace(C / delta, 64.0 * C / delta, 48)
        b = b_delta_eval(a, lib, curve, xi, sigma, t, C, delta)
        scale = float(np.max(np.abs(b))) or 1.0
        fit = decay_fit(sigma, np.abs(b) / scale)
        rows.append({"C_cut": float(C), "exponent": fit["exponent"], "points": fit["points"],
                     "stationary": bool(C / delta <= speed)})
    return ExperimentReport(experiment="error-term", passed=bool(rows[-1]["exponent"] >= 2.0),
                            summary={"delta": float(delta), "t": t}, rows=rows)


def merge_reports(experiment: str, reports: Sequence[ExperimentReport], key: str,
                  values: Sequence[Any]) -> ExperimentReport:
    """Concatenate per-parameter reports; rows gain ``key`` and summaries are keyed by its value."""
    if len(reports) == 1:
        return reports[0]
    rows = [{key: v, **row} for v, rep in zip(values, reports) for row in rep.rows]
    failed = next((rep.failed_stage for rep in reports if rep.failed_stage), None)
    return ExperimentReport(
        experiment=experiment,
        passed=all(rep.passed for rep in reports),
        summary={f"{key}={v:g}" if isinstance(v, float) else f"{key}={v}": rep.summary
                 for v, rep in zip(values, reports)},
        rows=rows,
        failed_stage=failed,
    )
