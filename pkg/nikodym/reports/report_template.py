# -*- coding: utf-8 -*-
import json

from jinja2 import Environment, select_autoescape

REPORT_HTML = r"""<!doctype html>
<html lang="en">
<head>
  <meta charset="utf-8" />
  <title>{{ report.experiment }} - {{ manifest.config_hash }}</title>
  <style>
    /* brand: #12a4b4 | brand-2: #0f7d89 | brand-light: #e9f7f9 | border: #c5d6de | text: #2b2d31 */
    html, body{ margin:0; padding:16px; color:#2b2d31; font-size:11pt; line-height:1.5;
      font-family:'DejaVu Sans','Arial',sans-serif; }
    .report-title{ font-weight:800; color:#0f7d89; font-size:20pt; margin:0; }
    .title-underline{ height:3px; width:180px; background:#12a4b4; border-radius:4px; margin:3pt 0 12px; }
    .chip{ display:inline-block; padding:2px 10px; border-radius:6px; font-weight:700; border:1px solid #c5d6de; }
    .chip.ok{ background:#e9f7f9; color:#0f7d89; }
    .chip.failed{ background:#fdecea; color:#b42318; }
    table.meta, table.rows{ border-collapse:collapse; margin-bottom:12px; }
    table.meta td, table.rows th, table.rows td{ border:1.2px solid #c5d6de; padding:4px 8px; font-size:10pt; }
    table.meta td.label, table.rows th{ font-weight:700; background:#e9f7f9; color:#0f7d89; }
    pre.summary{ background:#f7fafb; border:1px dashed #c5d6de; padding:8px; font-size:9pt; overflow-x:auto; }
    .footer-note{ font-size:9pt; color:#6b7280; border-top:1px dashed #c5d6de; padding-top:6px; }
  </style>
</head>
<body>
  <div class="report-title">{{ report.experiment }}</div>
  <div class="title-underline"></div>

  <p>
    {% if report.passed %}<span class="chip ok">passed</span>
    {% else %}<span class="chip failed">failed{% if report.failed_stage %} at {{ report.failed_stage }}{% endif %}</span>
    {% endif %}
  </p>

  <table class="meta">
    <tr><td class="label">curve</td><td>{{ manifest.curve }}</td></tr>
    <tr><td class="label">config hash</td><td>{{ manifest.config_hash }}</td></tr>
    <tr><td class="label">library version</td><td>{{ manifest.library_version }}</td></tr>
    <tr><td class="label">wall time</td><td>{{ '%.2f'|format(manifest.wall_time) }} s</td></tr>
    <tr><td class="label">workers</td><td>{{ manifest.workers }}</td></tr>
  </table>

  <h3>Summary</h3>
  <pre class="summary">{{ summary_json }}</pre>

  <h3>Data ({{ report.rows|length }} rows)</h3>
  {% if columns %}
  <table class="rows">
    <tr>{% for c in columns %}<th>{{ c }}</th>{% endfor %}</tr>
    {% for row in rows %}
    <tr>{% for c in columns %}<td>{{ row.get(c, '')|cell }}</td>{% endfor %}</tr>
    {% endfor %}
  </table>
  {% if report.rows|length > rows|length %}<p class="footer-note">first {{ rows|length }} rows shown; data.csv holds all of them</p>{% endif %}
  {% else %}
  <p>no rows</p>
  {% endif %}

  <p class="footer-note">schema {{ manifest.schema }} · generated by nikodym-lab</p>
</body>
</html>
"""

MAX_HTML_ROWS = 500


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (dict, list)):
        return json.dumps(value)
    return str(value)


_env = Environment(autoescape=select_autoescape(default_for_string=True))
_env.filters["cell"] = _cell


def render_report(report, manifest: dict) -> str:
    """HTML view of an ExperimentReport and its manifest."""
    rows = report.rows[:MAX_HTML_ROWS]
    columns = list(dict.fromkeys(k for row in rows for k in row))
    return _env.from_string(REPORT_HTML).render(
        report=report,
        manifest=manifest,
        rows=rows,
        columns=columns,
        summary_json=json.dumps(report.summary, indent=2, sort_keys=True, default=str),
    )
