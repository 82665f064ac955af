"""
Decomposition audit pipeline.

Builds the localized pieces of a Littlewood–Paley symbol at frequency λ,
calibrates the constants they depend on, and audits each step of the
induction on sampled points. Stages run in a fixed order; the first failure
aborts the pipeline and names the stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..config import settings
from ..errors import CalibrationError, DegenerateCurveError, InvalidInputError, StageFailure
from ..schemas import PipelineReport, StageResult
from .curve_geometry import (
    Curve,
    RescalingMap,
    build_rescaling_map,
    class_bound,
    generalized_determinant,
    rescale_curve,
)
from .operators import schur_audit
from .symbols import (
    CutoffLibrary,
    DistanceFunction,
    Symbol,
    build_a_delta,
    build_a_n,
    build_a_n_nu,
    build_cutoffs,
    build_G,
    calibrate_A_prime,
    calibrate_type_constant,
    inner_product_constants,
    littlewood_paley_piece,
    nu_range,
    rescale_symbol,
    support_points,
    verify_inner_product_bounds,
)

logger = logging.getLogger(__name__)

STAGES = (
    "H-split",
    "G-bounds",
    "a_n-count",
    "inner-products",
    "rescaling-map",
    "rescaled-membership",
    "rescaled-type",
    "n0-schur",
)

RESIDUAL_TOL = 1e-8
EPS0_MIN = 2.0 ** -16
EPS1_MIN = 2.0 ** -20
MAX_NU_PER_N = 3
# on supp aⁿ with n ≥ 1, ρ = 2ⁿλ^{-1/N} < 2ε₁√G; windows need ρ < 1 to be rescaled
RHO_MAX = 1.0
# ε₁²λ^{2/N}G ≥ 2 puts a sampled point well inside the n = 1 shell
SHELL_FLOOR = 2.0
SPREAD_MAX = 1.5
COUNT_CONSTANT = 1.0


@dataclass
class PipelineState:
    curve: Curve
    lam: float
    N: int
    lib: CutoffLibrary
    samples: int
    seed: int
    B: float = 0.0
    A: float = 0.0
    a: Optional[Symbol] = None
    aH: Optional[Symbol] = None
    A_prime: float = 0.0
    eps0: float = 0.5
    eps1: float = 0.5
    G: Optional[DistanceFunction] = None
    G_max: float = 0.0
    pieces: dict[int, Symbol] = field(default_factory=dict)
    localized: list[tuple[int, int, Symbol]] = field(default_factory=list)
    maps: list[tuple[int, int, RescalingMap]] = field(default_factory=list)
    constants: dict[str, float] = field(default_factory=dict)


def top_symbol(lib: CutoffLibrary, curve: Curve, lam: float) -> Symbol:
    """Littlewood–Paley piece at λ of a_δ with δ = 1/(4λ); λ < 2 uses the low-frequency piece."""
    delta = 1.0 / (4.0 * max(lam, 1.0))
    a = build_a_delta(lib, delta, curve=curve)
    return littlewood_paley_piece(a, lib, lam if lam >= 2 else 0)


def rescaled_operator_factor(tmap: RescalingMap) -> float:
    """|det T^*|^{1/2}, the norm factor between the localized and the rescaled operator."""
    return float(abs(np.linalg.det(tmap.matrix)) ** 0.5)


def _sampled(symbol: Symbol, state: PipelineState, salt: int, s_range=None):
    return support_points(symbol, state.samples, state.seed + salt, s_range=s_range)


def _g_max(G: DistanceFunction, aH: Symbol, state: PipelineState) -> tuple[float, int, int]:
    xi, s, _ = _sampled(aH, state, 11)
    if len(s) == 0:
        return 0.0, 0, 0
    g = G(xi, s)
    finite = np.isfinite(g)
    return (float(np.max(g[finite])) if finite.any() else 0.0), int(finite.sum()), int((~finite).sum())


def _calibrate_eps1(G_max: float) -> float:
    """Largest ε₁ ≤ 1/2 with 2ε₁√G_max ≤ RHO_MAX."""
    root = math.sqrt(max(G_max, 0.0))
    if root == 0.0:
        return 0.5
    return max(EPS1_MIN, min(0.5, RHO_MAX / (2.0 * root)))


def _n_max(state: PipelineState) -> int:
    # margin of 2 on the sampled G_max keeps the telescoped tail empty
    x = 8.0 * state.eps1 ** 2 * state.lam ** (2.0 / state.N) * state.G_max
    return max(0, int(math.floor(0.5 * math.log2(x)))) if x > 1 else 0


def _inductive_step_reachable(state: PipelineState) -> bool:
    return 2.0 * state.lam ** (-1.0 / state.N) < RHO_MAX


def _shell_populated(state: PipelineState) -> bool:
    return state.eps1 ** 2 * state.lam ** (2.0 / state.N) * state.G_max >= SHELL_FLOOR


def _localize(state: PipelineState) -> None:
    state.pieces = {n: build_a_n(state.aH, state.G, state.eps1, n, state.lib) for n in range(_n_max(state) + 1)}
    state.localized = []
    for n, a_n in state.pieces.items():
        if n == 0:
            continue
        for nu in nu_range(n, state.lam, state.N):
            state.localized.append((n, nu, build_a_n_nu(a_n, state.lib, n, nu, state.lam, state.N)))


def _inner_product_reports(state: PipelineState, salt: int):
    c, C = inner_product_constants(state.eps0, state.eps1, state.A, state.B, state.N)
    reports = []
    for n, nu, piece in state.localized:
        rep = verify_inner_product_bounds(piece, samples=state.samples, seed=state.seed + salt, bounds=(c, C))
        if not rep.empty:
            reports.append(rep)
    return (c, C), reports


# ── Stages ──────────────────────────────────────────────────────────────────

def _preflight(state: PipelineState) -> StageResult:
    B_curve = class_bound(state.curve, state.N)
    ok = math.isfinite(B_curve)
    state.B = 1.1 * B_curve if ok else math.inf
    return StageResult(
        stage="membership",
        passed=ok,
        message="" if ok else f"curve is degenerate at order {state.N}",
        details={"class_bound": B_curve},
    )


def _stage_h_split(state: PipelineState) -> StageResult:
    state.a = top_symbol(state.lib, state.curve, state.lam)
    state.A = calibrate_type_constant(state.a, state.curve, state.N, samples=state.samples, seed=state.seed)
    state.A_prime, state.aH, _ = calibrate_A_prime(
        state.a, state.lib, state.A, state.N, settings.DEGENERACY_KAPPA, settings.A_PRIME_MAX,
        samples=state.samples, seed=state.seed + 1,
    )
    state.constants.update(A=state.A, A_prime=state.A_prime, B=state.B, kappa=settings.DEGENERACY_KAPPA)
    return StageResult(stage="H-split", passed=True, details={"A": state.A, "A_prime": state.A_prime})


def _stage_g_bounds(state: PipelineState) -> StageResult:
    bound = (state.N - 1) * (2.0 * state.B) ** 2 + 4.0
    reachable = _inductive_step_reachable(state)
    eps0 = 0.5
    # shrinking ε₀ dilates G until the n ≥ 1 shells of aH are populated
    while True:
        G = build_G(state.curve, state.lam, state.N, eps0)
        G_max, finite, excluded = _g_max(G, state.aH, state)
        state.eps0, state.eps1, state.G, state.G_max = eps0, _calibrate_eps1(G_max), G, G_max
        last = eps0 / 2.0 < EPS0_MIN
        if last or not reachable or _shell_populated(state):
            _localize(state)
            _, reports = _inner_product_reports(state, salt=21)
            if last or all(r.passed for r in reports):
                break
        eps0 /= 2.0
    scaled = G_max * eps0 ** 2
    c, C = inner_product_constants(eps0, state.eps1, state.A, state.B, state.N)
    state.constants.update(eps0=eps0, eps1=state.eps1, c=c, C=C, G_max=G_max)
    logger.info("calibrated eps0=%g eps1=%g c=%.3g C=%.3g", eps0, state.eps1, c, C)
    return StageResult(
        stage="G-bounds",
        passed=bool(scaled <= bound),
        message="" if scaled <= bound else f"max G·eps0² = {scaled:.4g} exceeds {bound:.4g}",
        details={"max_scaled_G": scaled, "bound": bound, "solvable": finite, "excluded": excluded,
                 "n_max": _n_max(state), "shell_populated": _shell_populated(state)},
    )


def _stage_an_count(state: PipelineState) -> StageResult:
    xi, s, t = _sampled(state.aH, state, 31)
    count = 0
    residual = 0.0
    if len(s):
        total = np.zeros(len(s))
        for n, piece in state.pieces.items():
            vals = piece.eval(xi, s, t)
            total = total + vals
            if np.any(np.abs(vals) > 1e-14):
                count += 1
        residual = float(np.max(np.abs(total - state.aH.eval(xi, s, t))))
        nu_residual = 0.0
        for n, a_n in state.pieces.items():
            if n == 0:
                continue
            parts = sum(p.eval(xi, s, t) for m, _, p in state.localized if m == n)
            nu_residual = max(nu_residual, float(np.max(np.abs(parts - a_n.eval(xi, s, t)))))
        residual = max(residual, nu_residual)
    limit = 1 + math.ceil(math.log2(2.0 + state.lam))
    constant = count / math.log2(2.0 + state.lam)
    passed = count <= limit and constant <= COUNT_CONSTANT and residual <= RESIDUAL_TOL
    return StageResult(
        stage="a_n-count",
        passed=passed,
        message="" if passed else f"count {count} (limit {limit}), partition residual {residual:.3g}",
        details={"count": count, "limit": limit, "count_constant": constant, "n_max": _n_max(state),
                 "partition_residual": residual},
    )


def _stage_inner_products(state: PipelineState) -> StageResult:
    (c, C), reports = _inner_product_reports(state, salt=41)
    failed = [r for r in reports if not r.passed]
    if not reports:
        message = "not exercised: no localized piece has sampled support"
    elif failed:
        message = f"{len(failed)} localized pieces outside [{c:.3g}, {C:.3g}]"
    else:
        message = ""
    return StageResult(
        stage="inner-products",
        passed=bool(reports) and not failed,
        message=message,
        details={
            "c": c,
            "C": C,
            "audited": len(reports),
            "levels": sorted({r.n for r in reports}),
            "min_ratio": min((r.min_ratio for r in reports), default=None),
            "max_ratio": max((r.max_ratio for r in reports), default=None),
        },
    )


def _eligible_pieces(state: PipelineState) -> list[tuple[int, int, Symbol]]:
    chosen: list[tuple[int, int, Symbol]] = []
    per_n: dict[int, int] = {}
    for n, nu, piece in state.localized:
        rho = piece.meta.extra["rho"]
        center = piece.meta.extra["s_center"]
        if rho >= RHO_MAX or center - rho < -1 or center + rho > 1:
            continue
        if per_n.get(n, 0) >= MAX_NU_PER_N:
            continue
        xi, s, _ = _sampled(piece, state, 51, s_range=(center - rho, center + rho))
        if len(s) == 0:
            continue
        chosen.append((n, nu, piece))
        per_n[n] = per_n.get(n, 0) + 1
    return chosen


def _stage_rescaling_map(state: PipelineState) -> StageResult:
    worst = {"eigen_residual": 0.0, "complement_residual": 0.0, "determinant_residual": 0.0}
    factors = []
    norm_ok = True
    sigma = np.linspace(-1e3, 1e3, 2001)
    for n, nu, piece in _eligible_pieces(state):
        tmap = build_rescaling_map(state.curve, piece.meta.extra["s_center"], piece.meta.extra["rho"], state.N)
        state.maps.append((n, nu, tmap))
        res = tmap.residuals(state.curve)
        for key in worst:
            worst[key] = max(worst[key], res[key])
        norm_ok &= res["inverse_norm_scaled"] <= res["inverse_norm_bound"] * (1 + 1e-8)
        norm_ok &= bool(np.all(np.sqrt(tmap.rho + np.abs(sigma)) <= np.sqrt(1.0 + np.abs(sigma))))
        factors.append(rescaled_operator_factor(tmap))
    if not state.maps:
        passed, message = False, "not exercised: no supported localized piece with rho < 1 fits inside I"
    else:
        passed = norm_ok and all(v <= RESIDUAL_TOL for v in worst.values())
        message = "" if passed else "rescaling map residuals exceed tolerance"
    return StageResult(
        stage="rescaling-map",
        passed=passed,
        message=message,
        details={**worst, "maps": len(state.maps), "rhos": sorted({m.rho for _, _, m in state.maps}),
                 "operator_factors": factors},
    )


def rescaled_determinant_floor(curve: Curve, tmap: RescalingMap, s_samples: Optional[int] = None) -> float:
    """min over I of the order-N generalized determinant of the rescaled curve."""
    s = np.linspace(-1.0, 1.0, s_samples or settings.MEMBERSHIP_SAMPLES)
    return float(np.min(generalized_determinant(rescale_curve(curve, tmap), s, tmap.N)))


def _stage_rescaled_membership(state: PipelineState) -> StageResult:
    bounds, floors = [], []
    small_rho = state.B ** (-2 * state.curve.d)
    for n, nu, tmap in state.maps:
        bounds.append(class_bound(rescale_curve(state.curve, tmap), state.N))
        if tmap.rho <= small_rho:
            floors.append(rescaled_determinant_floor(state.curve, tmap))
    finite = bool(bounds) and all(math.isfinite(b) for b in bounds)
    spread = max(bounds) / min(bounds) if finite else math.inf
    det_floor = min(floors, default=None)
    det_ok = det_floor is None or det_floor >= 1.0 / (2.0 * state.B)
    B1 = max(bounds) if finite else math.inf
    state.constants["B1"] = B1
    if not bounds:
        message = "not exercised: no rescaling maps"
    elif not finite:
        message = "a rescaled curve is degenerate"
    elif spread > SPREAD_MAX:
        message = f"rescaled class bounds spread by {spread:.4g} (limit {SPREAD_MAX:g})"
    elif not det_ok:
        message = f"rescaled determinant {det_floor:.4g} below 1/(2B) = {0.5 / state.B:.4g}"
    else:
        message = ""
    return StageResult(
        stage="rescaled-membership",
        passed=not message,
        message=message,
        details={"B1": B1, "spread": spread, "maps": len(bounds), "small_rho": small_rho,
                 "determinant_checked": len(floors), "determinant_floor": det_floor},
    )


def _stage_rescaled_type(state: PipelineState) -> StageResult:
    c, C = state.constants["c"], state.constants["C"]
    worst_A = 0.0
    freq = []
    pieces = {(n, nu): p for n, nu, p in state.localized}
    for n, nu, tmap in state.maps:
        tilde = rescale_symbol(pieces[(n, nu)], tmap)
        xi, s, _ = support_points(tilde, state.samples, state.seed + 61)
        if len(s) == 0:
            continue
        worst_A = max(worst_A, calibrate_type_constant(tilde, tilde.meta.curve, state.N - 1,
                                                       samples=state.samples, seed=state.seed + 61))
        r = np.linalg.norm(xi, axis=-1) / (tmap.rho ** state.N * state.lam)
        freq.append((float(r.min()), float(r.max())))
    cond = max((m.basis_condition for _, _, m in state.maps), default=1.0)
    bound = 10.0 * (C / c) * cond ** 2
    if not freq:
        passed, message = False, "not exercised: no rescaled symbol has sampled support"
    else:
        passed = math.isfinite(worst_A) and worst_A <= bound
        message = "" if passed else f"rescaled type constant {worst_A:.4g} exceeds {bound:.4g}"
    state.constants["A_tilde"] = worst_A
    return StageResult(
        stage="rescaled-type",
        passed=passed,
        message=message,
        details={
            "A_tilde": worst_A,
            "bound": bound,
            "audited": len(freq),
            "freq_ratio_min": min((f[0] for f in freq), default=None),
            "freq_ratio_max": max((f[1] for f in freq), default=None),
        },
    )


def _stage_n0_schur(state: PipelineState) -> StageResult:
    Lambda = state.lam ** (1.0 / state.N)
    rows = schur_audit(state.pieces[0], state.curve, Lambda, samples=8, t_samples=3, seed=state.seed + 71)
    passed = all(r["pass"] for r in rows)
    return StageResult(
        stage="n0-schur",
        passed=passed,
        message="" if passed else "Schur bound exceeds the configured constant",
        details={"Lambda": Lambda, "rows": rows},
    )


STAGE_FUNCTIONS: dict[str, Callable[[PipelineState], StageResult]] = {
    "H-split": _stage_h_split,
    "G-bounds": _stage_g_bounds,
    "a_n-count": _stage_an_count,
    "inner-products": _stage_inner_products,
    "rescaling-map": _stage_rescaling_map,
    "rescaled-membership": _stage_rescaled_membership,
    "rescaled-type": _stage_rescaled_type,
    "n0-schur": _stage_n0_schur,
}


def _new_state(curve: Curve, lam: float, N: Optional[int], samples: Optional[int], seed: int) -> PipelineState:
    N = curve.d if N is None else N
    if not 2 <= N <= curve.d:
        raise InvalidInputError(f"N must be in 2..{curve.d}")
    return PipelineState(
        curve=curve, lam=float(lam), N=N, lib=build_cutoffs(),
        samples=samples or settings.AUDIT_SAMPLES, seed=seed,
    )


def decomposition_audit_pipeline(
    curve: Curve,
    lam: float,
    N: Optional[int] = None,
    samples: Optional[int] = None,
    seed: int = 0,
    raise_on_failure: bool = False,
) -> PipelineReport:
    state = _new_state(curve, lam, N, samples, seed)
    N = state.N
    report = PipelineReport(curve=curve.name, lam=float(lam), N=N)

    pre = _preflight(state)
    report.preflight = pre
    if not pre.passed:
        report.failed_stage = pre.stage
        logger.warning("pipeline aborted at %s: %s", pre.stage, pre.message)
        if raise_on_failure:
            raise StageFailure(pre.stage, pre.message)
        return report

    for name in STAGES:
        try:
            result = STAGE_FUNCTIONS[name](state)
        except (CalibrationError, DegenerateCurveError) as exc:
            detail = {"worst_point": getattr(exc, "worst_point", None), "order": getattr(exc, "order", None)}
            result = StageResult(stage=name, passed=False, message=str(exc), details=detail)
        report.stages.append(result)
        logger.info("stage %s: %s", name, "pass" if result.passed else f"FAIL {result.message}")
        if not result.passed:
            report.failed_stage = name
            break

    report.constants = {k: float(v) for k, v in state.constants.items()}
    report.passed = report.failed_stage is None
    if not report.passed and raise_on_failure:
        raise StageFailure(report.failed_stage, report.stages[-1].message)
    return report


def _run_through(state: PipelineState, last: str) -> PipelineState:
    """Preflight and the stages up to ``last``; the first failure raises."""
    steps = [_preflight] + [STAGE_FUNCTIONS[name] for name in STAGES[: STAGES.index(last) + 1]]
    for step in steps:
        result = step(state)
        if not result.passed:
            raise StageFailure(result.stage, result.message)
    return state


def n0_schur_rows(curve: Curve, lam: float, N: Optional[int] = None, samples: Optional[int] = None,
                  seed: int = 0) -> list[dict]:
    """Both Schur estimates for a⁰ at λ with Λ = λ^{1/N}, after the stages that calibrate it."""
    state = _run_through(_new_state(curve, lam, N, samples, seed), "G-bounds")
    return _stage_n0_schur(state).details["rows"]


def rescaling_suite(curve: Curve, rhos, s0: float = 0.0, N: Optional[int] = None) -> dict:
    """Class bounds of curves rescaled at s0 across ρ; passes when their spread is ≤ SPREAD_MAX."""
    N = curve.d if N is None else N
    rows = []
    for rho in rhos:
        tmap = build_rescaling_map(curve, s0, rho, N)
        rows.append({
            "s0": float(s0),
            "rho": float(rho),
            "B1": class_bound(rescale_curve(curve, tmap), N),
            **{k: float(v) for k, v in tmap.residuals(curve).items()},
        })
    bounds = [r["B1"] for r in rows]
    spread = max(bounds) / min(bounds) if all(math.isfinite(b) for b in bounds) else math.inf
    return {"rows": rows, "spread": spread, "passed": spread <= SPREAD_MAX}

