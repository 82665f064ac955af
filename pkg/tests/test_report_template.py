from nikodym.reports.report_template import MAX_HTML_ROWS, render_report
from nikodym.schemas import ExperimentReport

MANIFEST = {
    "schema": 1,
    "config_hash": "feedface01234567",
    "curve": "circle2d",
    "library_version": "0.4.0",
    "wall_time": 1.234,
    "workers": 2,
}


def test_report_renders_header_and_rows():
    report = ExperimentReport(experiment="cutoff-suite", passed=True, summary={"c0": 0.5},
                              rows=[{"check": "zeta_partition", "value": 1.5e-14}])
    html = render_report(report, MANIFEST)
    assert "feedface01234567" in html
    assert "chip ok" in html
    assert "1.5e-14" in html
    assert "1.23 s" in html


def test_failed_stage_and_escaping():
    report = ExperimentReport(experiment="lemma-audit", passed=False, failed_stage="C",
                              rows=[{"message": "<b>bad</b>"}])
    html = render_report(report, MANIFEST)
    assert "failed at C" in html
    assert "&lt;b&gt;bad&lt;/b&gt;" in html
    assert "<b>bad</b>" not in html


def test_long_reports_are_truncated():
    rows = [{"k": i} for i in range(MAX_HTML_ROWS + 5)]
    html = render_report(ExperimentReport(experiment="sharpness-log", passed=True, rows=rows), MANIFEST)
    assert f"first {MAX_HTML_ROWS} rows shown" in html
