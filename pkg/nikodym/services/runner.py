"""
Batch runner: TOML configuration, content-hashed run directories and the
artifacts of one run (report.json, data.csv, manifest.json, report.html).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import re
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .. import __version__
from ..errors import ConfigurationError, NikodymError, StageFailure
from ..reports.report_template import render_report
from ..schemas import SCHEMA_VERSION, ExperimentReport, RunConfig
from . import run_catalog
from .curve_geometry import get_curve
from .experiments import merge_reports
from .parallel import ParallelContext
from .presets import PRESETS, run_preset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3

SECTIONS = ("run", "grid", "options")
SORT_KEYS = ("seed", "d", "curve", "lambda", "delta", "rho", "k", "s", "iota", "C_cut", "check")
_POWER = re.compile(r"^\s*2\^\(?(-?\d+)\)?\s*$")
_TOML_LINE = re.compile(r"line (\d+)")


# ── Configuration ───────────────────────────────────────────────────────────

def _scalar(token: str) -> float:
    m = _POWER.match(token)
    if m:
        return 2.0 ** int(m.group(1))
    try:
        return float(token)
    except ValueError as exc:
        raise ConfigurationError(f"cannot read '{token.strip()}' as a number") from exc


def parse_scales(text: str) -> list[float]:
    """'2^-3..2^-7' (dyadic range), '0.1,0.05' (list) or a single value."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        a, b = _POWER.match(lo), _POWER.match(hi)
        if not (a and b):
            raise ConfigurationError(f"ranges must run between powers of two, got '{text}'")
        i, j = int(a.group(1)), int(b.group(1))
        step = 1 if j >= i else -1
        return [2.0 ** k for k in range(i, j + step, step)]
    return [_scalar(tok) for tok in text.split(",") if tok.strip()]


def _line_of(text: Optional[str], section: str, key: str) -> Optional[int]:
    if not text:
        return None
    current = "run"
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = re.match(r"^\s*\[([^\]]+)\]", line)
        if header:
            current = header.group(1).strip()
        elif current == section and pattern.match(line):
            return lineno
    return None


def _error_line(text: Optional[str], loc: tuple, message: str) -> Optional[int]:
    if loc and loc[0] in ("grid", "options") and len(loc) > 1:
        return _line_of(text, loc[0], str(loc[1]))
    if loc:
        return _line_of(text, "run", str(loc[0]))
    if "grid.X" in message:
        return _line_of(text, "grid", "X")
    if "N must" in message:
        return _line_of(text, "run", "N")
    return _line_of(text, "run", "curve") or _line_of(text, "run", "d")


def read_config_file(path: str | Path) -> tuple[dict, str]:
    """Parse a TOML run file into RunConfig fields; errors carry the line number."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _TOML_LINE.search(str(exc))
        raise ConfigurationError(f"malformed config: {exc}", int(m.group(1)) if m else None) from exc
    lines = text.splitlines()
    for section, body in doc.items():
        if isinstance(body, dict) and section not in SECTIONS:
            line = next((i for i, l in enumerate(lines, 1) if re.match(rf"^\s*\[{re.escape(section)}[\].]", l)), None)
            raise ConfigurationError(f"unknown section [{section}]", line)
    data = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    data.update(doc.get("run", {}))
    for key in ("grid", "options"):
        if key in doc:
            data[key] = dict(doc[key])
    for key, value in data.items():
        if key not in RunConfig.model_fields:
            raise ConfigurationError(f"unknown key '{key}'", _line_of(text, "run", key))
    for key in ("delta_grid", "lambda_grid"):
        if isinstance(data.get(key), str):
            try:
                data[key] = parse_scales(data[key])
            except ConfigurationError as exc:
                raise ConfigurationError(str(exc), _line_of(text, "run", key)) from exc
    return data, text


def build_config(file_data: Optional[dict] = None, overrides: Optional[dict] = None,
                 text: Optional[str] = None) -> RunConfig:
    """Preset defaults, then the config file, then command-line overrides."""
    file_data = file_data or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    experiment = overrides.get("experiment", file_data.get("experiment"))
    if not experiment:
        raise ConfigurationError("no experiment given (use --preset or [run] experiment = ...)")
    if experiment not in PRESETS:
        raise ConfigurationError(f"unknown experiment '{experiment}'", _line_of(text, "run", "experiment"))

    merged: dict[str, Any] = copy.deepcopy(PRESETS[experiment].parameters)
    for layer in (file_data, overrides):
        for key, value in layer.items():
            if key in ("grid", "options") and isinstance(value, dict):
                merged[key] = {**merged.get(key, {}), **value}
            else:
                merged[key] = value
    merged["experiment"] = experiment
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err.get("loc", ()))
        where = ".".join(str(p) for p in loc) or "config"
        raise ConfigurationError(f"{where}: {err['msg']}", _error_line(text, loc, err["msg"])) from exc
    except NikodymError as exc:
        raise ConfigurationError(str(exc), _error_line(text, (), str(exc))) from exc


def config_hash(cfg: RunConfig) -> str:
    payload = {"library_version": __version__, **cfg.hash_payload()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ── Artifacts ───────────────────────────────────────────────────────────────

def plain(obj: Any) -> Any:
    """Builtin-typed copy of nested report content."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _cell(value: Any) -> Any:
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def rows_frame(rows: list[dict]) -> pd.DataFrame:
    """Rows in a fixed column order (first appearance), stably sorted by identifying columns."""
    columns = list(dict.fromkeys(k for row in rows for k in row))
    df = pd.DataFrame([{k: _cell(row.get(k)) for k in columns} for row in rows], columns=columns)
    keys = [k for k in SORT_KEYS if k in columns]
    if keys and len(df):
        df = df.sort_values(keys, kind="mergesort", na_position="first")
    return df


def write_csv(rows: list[dict], path: Path) -> None:
    rows_frame(rows).to_csv(path, index=False, float_format="%.12e", lineterminator="\n")


def run_directory(base: str | Path, digest: str) -> Path:
    """``<digest>``, or ``<digest>-<n>`` when earlier runs of the same config exist."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    n = 0
    while True:
        path = base / (digest if n == 0 else f"{digest}-{n}")
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


@dataclass
class RunResult:
    status: int
    path: Path
    report: ExperimentReport
    manifest: dict


def run(cfg: RunConfig, workers: Optional[int] = None) -> RunResult:
    """Execute the configured experiment for every seed and write its artifacts."""
    ctx = ParallelContext.from_setting(cfg.workers if workers is None else workers)
    curve = get_curve(cfg.curve, cfg.d)
    digest = config_hash(cfg)
    start = time.perf_counter()
    try:
        reports = [run_preset(cfg, curve, seed, ctx) for seed in cfg.seeds]
        report = merge_reports(cfg.experiment, reports, "seed", cfg.seeds)
    except StageFailure as exc:
        report = ExperimentReport(experiment=cfg.experiment, passed=False, failed_stage=exc.stage,
                                  summary={"error": str(exc)})
    wall = time.perf_counter() - start
    report = report.model_copy(update={"rows": plain(report.rows), "summary": plain(report.summary)})

    if report.passed:
        status = EXIT_OK
    elif report.failed_stage:
        status = EXIT_STAGE
        logger.error("%s failed at stage '%s'", cfg.experiment, report.failed_stage)
    else:
        status = EXIT_FAILED
        logger.warning("%s: checks failed", cfg.experiment)

    path = run_directory(cfg.output_dir, digest)
    manifest = {
        "schema": SCHEMA_VERSION,
        "config_hash": digest,
        "experiment": cfg.experiment,
        "curve": curve.name,
        "library_version": __version__,
        "wall_time": wall,
        "workers": ctx.workers,
        "status": "ok" if report.passed else "failed",
        "failed_stage": report.failed_stage,
        "config": plain(cfg.model_dump()),
        "files": ["report.json", "data.csv", "manifest.json", "report.html"],
    }
    (path / "report.json").write_text(report.model_dump_json(by_alias=True, indent=2), encoding="utf-8")
    write_csv(report.rows, path / "data.csv")
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    (path / "report.html").write_text(render_report(report, manifest), encoding="utf-8")
    logger.info("%s written to %s in %.2fs", cfg.experiment, path, wall)

    run_catalog.record_run(
        config_hash=digest, preset=cfg.experiment, curve=curve.name, status=manifest["status"],
        failed_stage=report.failed_stage, output_path=str(path), library_version=__version__, wall_time=wall,
    )
    return RunResult(status=status, path=path, report=report, manifest=manifest)
