import math

import pytest

from nikodym.errors import InvalidInputError, StageFailure
from nikodym.services.curve_geometry import build_rescaling_map, circle_lift, moment_curve, straight_line
from nikodym.services.decomposition import (
    COUNT_CONSTANT,
    SPREAD_MAX,
    STAGES,
    _new_state,
    _run_through,
    _stage_an_count,
    decomposition_audit_pipeline,
    n0_schur_rows,
    rescaled_operator_factor,
    rescaling_suite,
    top_symbol,
)
from nikodym.services.symbols import build_cutoffs


def test_degenerate_curve_stops_before_the_stages():
    report = decomposition_audit_pipeline(straight_line(2), 16.0, samples=256)
    assert report.preflight.stage == "membership"
    assert not report.preflight.passed
    assert report.failed_stage == "membership"
    assert report.stages == []
    assert not report.passed

    with pytest.raises(StageFailure) as exc:
        decomposition_audit_pipeline(straight_line(2), 16.0, samples=256, raise_on_failure=True)
    assert exc.value.stage == "membership"

    with pytest.raises(StageFailure):
        n0_schur_rows(straight_line(2), 16.0, samples=256)


def test_depth_must_fit_the_dimension():
    with pytest.raises(InvalidInputError):
        decomposition_audit_pipeline(circle_lift(), 16.0, N=3)
    with pytest.raises(InvalidInputError):
        decomposition_audit_pipeline(circle_lift(), 16.0, N=1)


def test_stages_run_in_order_and_stop_at_the_first_failure():
    # at λ = 2 no localized window is shorter than I, so the inductive step has nothing to audit
    report = decomposition_audit_pipeline(circle_lift(), 2.0, samples=512, seed=0)
    names = [s.stage for s in report.stages]
    assert names == list(STAGES[: len(names)])
    assert report.preflight.passed
    assert report.constants["B"] == pytest.approx(1.1 * report.preflight.details["class_bound"])
    assert report.failed_stage == "inner-products" == names[-1]
    assert all(s.passed for s in report.stages[:-1])
    assert report.stages[-1].message.startswith("not exercised")
    assert report.stages[-1].details["audited"] == 0
    assert not report.passed
    dumped = report.model_dump(by_alias=True)
    assert dumped["lambda"] == 2.0 and dumped["schema"] == 1


@pytest.mark.parametrize("curve, lam", [(circle_lift(), 2.0 ** 8), (moment_curve(3), 2.0 ** 6)])
def test_acceptance_pipelines_reach_the_inductive_step(curve, lam):
    report = decomposition_audit_pipeline(curve, lam, samples=2048, seed=0)
    assert report.passed, (report.failed_stage, report.stages[-1].message)
    stages = {s.stage: s for s in report.stages}
    assert list(stages) == list(STAGES)
    assert stages["G-bounds"].details["shell_populated"]
    assert stages["a_n-count"].details["n_max"] >= 1
    assert stages["inner-products"].details["audited"] > 0
    assert stages["rescaling-map"].details["maps"] > 0
    assert max(stages["rescaling-map"].details["rhos"]) < 1.0
    membership = stages["rescaled-membership"].details
    assert membership["maps"] == stages["rescaling-map"].details["maps"]
    assert math.isfinite(membership["B1"]) and membership["spread"] <= SPREAD_MAX
    assert stages["rescaled-type"].details["audited"] > 0


def test_circle_rescaled_curves_keep_the_determinant_floor():
    report = decomposition_audit_pipeline(circle_lift(), 2.0 ** 8, samples=2048, seed=0)
    membership = next(s for s in report.stages if s.stage == "rescaled-membership").details
    # B = 1.1 for the circle, so every window with ρ ≤ 1.1^{-4} is checked
    assert membership["determinant_checked"] == membership["maps"]
    assert membership["determinant_floor"] >= 1.0 / (2.0 * report.constants["B"])


def test_one_count_constant_across_frequencies():
    ratios = []
    for k in range(4, 13):
        state = _run_through(_new_state(circle_lift(), 2.0 ** k, None, 512, 0), "G-bounds")
        details = _stage_an_count(state).details
        assert details["count"] <= details["limit"]
        ratios.append(details["count_constant"])
    assert max(ratios) <= COUNT_CONSTANT


def test_pipeline_is_deterministic():
    a = decomposition_audit_pipeline(circle_lift(), 8.0, samples=256, seed=3)
    b = decomposition_audit_pipeline(circle_lift(), 8.0, samples=256, seed=3)
    assert a.model_dump_json() == b.model_dump_json()


def test_top_symbol_picks_the_littlewood_paley_piece():
    lib = build_cutoffs()
    assert top_symbol(lib, circle_lift(), 64.0).meta.extra["annulus"] == (32.0, 128.0)
    assert top_symbol(lib, circle_lift(), 1.0).meta.extra["annulus"] == (0.0, 2.0)


def test_rescaled_operator_factor():
    tmap = build_rescaling_map(moment_curve(2), 0.0, 0.25, 2)
    assert rescaled_operator_factor(tmap) == pytest.approx(math.sqrt(tmap.expected_determinant))


def test_rescaling_suite_rows():
    out = rescaling_suite(moment_curve(2), [0.5, 0.25, 0.125])
    assert [r["rho"] for r in out["rows"]] == [0.5, 0.25, 0.125]
    assert all(math.isfinite(r["B1"]) for r in out["rows"])
    assert out["passed"] == (out["spread"] <= 1.5)


@pytest.mark.parametrize("curve", [circle_lift(), moment_curve(3)])
def test_rescaling_suite_away_from_the_origin(curve):
    out = rescaling_suite(curve, [2.0 ** -2, 2.0 ** -4, 2.0 ** -6], s0=0.3)
    assert [r["s0"] for r in out["rows"]] == [0.3] * 3
    assert out["passed"]
    assert max(r["eigen_residual"] for r in out["rows"]) < 1e-8
