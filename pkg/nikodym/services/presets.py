"""Registry of runnable experiments: metadata, default parameters and the function behind each name."""

from __future__ import annotations

import logging
from typing import Callable, Optional

from ..schemas import ExperimentReport, PresetInfo, RunConfig
from .curve_geometry import Curve
from .decomposition import decomposition_audit_pipeline
from .experiments import (
    aniso_admissibility,
    backend_check,
    curve_suite,
    cutoff_suite,
    error_term_decay,
    fio_lambda_scaling,
    kernel_base_case,
    merge_reports,
    n0_schur,
    rescaling_acceptance,
    sharpness_log_report,
    sharpness_range_sweep,
    sobolev_embedding_check,
    theorem1_scaling,
    tube_volume_suite,
)
from .parallel import ParallelContext
from .sampled_fields import GridSpec

logger = logging.getLogger(__name__)

PresetRunner = Callable[[RunConfig, Curve, int, ParallelContext], ExperimentReport]


def dyadic(lo: int, hi: int) -> list[float]:
    """[2^-lo, ..., 2^-hi]."""
    step = 1 if hi >= lo else -1
    return [2.0 ** -k for k in range(lo, hi + step, step)]


def _grid(cfg: RunConfig, d: int) -> GridSpec:
    return GridSpec(d=d, X=cfg.grid.X, nx=cfg.grid.nx, nt=cfg.grid.nt)


# ── Runners ─────────────────────────────────────────────────────────────────

def _theorem1(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return theorem1_scaling(curve, cfg.delta_grid, cfg.p, cfg.q, trials=cfg.options.get("trials", 3),
                            seed=seed, slack=cfg.slack, ctx=ctx)


def _sharpness_log(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    opts = {k: cfg.options[k] for k in ("r", "tube_factor", "per_shell", "x") if k in cfg.options}
    reports = ctx.map(lambda delta: sharpness_log_report(curve, delta, cfg.p, seed=seed, **opts), cfg.delta_grid)
    return merge_reports("sharpness-log", reports, "delta", cfg.delta_grid)


def _sharpness_range(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return sharpness_range_sweep(curve, cfg.delta_grid, cfg.p, seed=seed, slack=cfg.slack, ctx=ctx)


def _lemma_audit(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    samples = cfg.options.get("samples")
    pipelines = ctx.map(
        lambda lam: decomposition_audit_pipeline(curve, lam, N=cfg.N, samples=samples, seed=seed),
        cfg.lambda_grid,
    )
    rows, counts = [], []
    for lam, rep in zip(cfg.lambda_grid, pipelines):
        for stage in ([rep.preflight] if rep.preflight else []) + rep.stages:
            rows.append({"lambda": float(lam), "stage": stage.stage, "passed": stage.passed, "message": stage.message})
            if stage.stage == "a_n-count" and "count_constant" in stage.details:
                counts.append(stage.details["count_constant"])
    summary = {"pipelines": [rep.model_dump(by_alias=True) for rep in pipelines]}
    if counts:
        # every a_n-count stage gates its own ratio
        summary["count_constant"] = max(counts)
    failed = next((rep.failed_stage for rep in pipelines if rep.failed_stage), None)
    return ExperimentReport(experiment="lemma-audit", passed=all(rep.passed for rep in pipelines),
                            summary=summary, rows=rows, failed_stage=failed)


def _sobolev(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return sobolev_embedding_check(curve, cfg.delta_grid, cfg.options.get("fields_per_delta", 20), seed,
                                   grid=_grid(cfg, curve.d), ctx=ctx)


def _aniso(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return aniso_admissibility(curve, cfg.delta_grid, cfg.options.get("points", 1000), seed)


def _curve_suite(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return curve_suite(points=cfg.options.get("points", 1000), seed=seed)


def _cutoff_suite(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return cutoff_suite(cfg.options.get("points", 10_000))


def _rescaling(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return rescaling_acceptance(cfg.options.get("rhos", dyadic(4, 8)[::2]))


def _kernel_base_case(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return kernel_base_case(curve, cfg.lambda_grid, cfg.options.get("A", 2.0), seed, ctx)


def _n0_schur(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return n0_schur(curve, cfg.lambda_grid, cfg.N or 2, cfg.options.get("samples"), seed, ctx)


def _tube_volume(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return tube_volume_suite(deltas=cfg.delta_grid, samples=cfg.options.get("samples"), seed=seed, ctx=ctx)


def _backend(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return backend_check(curve, cfg.delta_grid, _grid(cfg, curve.d), seed, cfg.options.get("fields", 10), ctx)


def _error_term(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    cuts = cfg.options.get("C_cuts", (0.25, 1.0, 4.0, 16.0))
    reports = [error_term_decay(curve, delta, cuts, cfg.options.get("t", 0.5)) for delta in cfg.delta_grid]
    return merge_reports("error-term", reports, "delta", cfg.delta_grid)


def _prop_main(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    return fio_lambda_scaling(curve, cfg.lambda_grid, _grid(cfg, curve.d), cfg.options.get("trials", 2), seed,
                              cfg.slack, ctx)


# ── Registry ────────────────────────────────────────────────────────────────

def _preset(name: str, description: str, runtime: str, runner: PresetRunner, **parameters) -> tuple:
    return name, PresetInfo(name=name, description=description, parameters=parameters, runtime_class=runtime), runner


_ENTRIES = [
    _preset("theorem1-scaling", "adversarial L^p norms of the Nikodym maximal function against (log 1/delta)^(d/2)",
            "long", _theorem1, delta_grid=dyadic(3, 7)),
    _preset("sharpness-log", "level sets of N f for a delta-tube indicator; lower-bound exponent 1/p",
            "minutes", _sharpness_log, delta_grid=[2.0 ** -7]),
    _preset("sharpness-range", "superlevel set of N applied to a delta-ball; forces p >= 2",
            "minutes", _sharpness_range, delta_grid=dyadic(4, 7)),
    _preset("lemma-audit", "eight-stage decomposition audit of the top Littlewood-Paley piece",
            "minutes", _lemma_audit, lambda_grid=[256.0]),
    _preset("sobolev-check", "delta-uniformity of the endpoint Sobolev embedding constant",
            "minutes", _sobolev, delta_grid=dyadic(3, 6), options={"fields_per_delta": 20}),
    _preset("aniso-admissibility", "admissible anisotropic scale families and the isotropic sandwich",
            "seconds", _aniso, delta_grid=dyadic(1, 10)),
    _preset("curve-suite", "moment-curve determinant and rotation invariance for d <= 6",
            "seconds", _curve_suite),
    _preset("cutoff-suite", "partition-of-unity residuals and positivity of the inverse transform of psi",
            "seconds", _cutoff_suite),
    _preset("rescaling-suite", "class bounds of rescaled curves across rho",
            "seconds", _rescaling),
    _preset("kernel-base-case", "kernel decay and Schur bounds for the single-derivative base case",
            "minutes", _kernel_base_case, lambda_grid=[2.0 ** 6, 2.0 ** 8, 2.0 ** 10]),
    _preset("n0-schur", "Schur bounds for the n = 0 piece with Lambda = lambda^(1/N)",
            "minutes", _n0_schur, N=2, lambda_grid=[2.0 ** 6, 2.0 ** 8, 2.0 ** 10]),
    _preset("tube-volume", "Monte-Carlo tube intersection volumes against the volume law",
            "minutes", _tube_volume, delta_grid=dyadic(3, 6)),
    _preset("backend-check", "pointwise domination of the exact averages by the spectral operator",
            "minutes", _backend, delta_grid=dyadic(3, 4)),
    _preset("error-term", "decay of the oscillatory error term beyond sigma ~ C/delta",
            "seconds", _error_term, delta_grid=[2.0 ** -4]),
    _preset("prop-main-scaling", "power-iteration norms of the fractional FIO across lambda",
            "minutes", _prop_main, lambda_grid=[2.0, 4.0, 8.0, 16.0], grid={"X": 4.0, "nx": 128, "nt": 32}),
]

PRESETS: dict[str, PresetInfo] = {name: info for name, info, _ in _ENTRIES}
RUNNERS: dict[str, PresetRunner] = {name: runner for name, _, runner in _ENTRIES}


def list_presets(query: Optional[str] = None) -> list[PresetInfo]:
    """Presets sorted by name; a query keeps those whose name or description contains it."""
    items = sorted(PRESETS.values(), key=lambda p: p.name)
    if not query:
        return items
    q = query.lower()
    return [p for p in items if q in p.name or q in p.description.lower()]


def run_preset(cfg: RunConfig, curve: Curve, seed: int, ctx: ParallelContext) -> ExperimentReport:
    logger.info("running %s on %s (seed %d, %d workers)", cfg.experiment, curve.name, seed, ctx.workers)
    return RUNNERS[cfg.experiment](cfg, curve, seed, ctx)
