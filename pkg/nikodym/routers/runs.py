"""
Router for catalogued runs and their artifacts (read-only)
"""

import json
from pathlib import Path

from fastapi import APIRouter, Depends, HTTPException, Query
from fastapi.responses import HTMLResponse
from sqlalchemy.orm import Session

from ..database import get_db
from ..schemas import RunOut
from ..services import run_catalog

router = APIRouter(prefix="/runs", tags=["runs"])


def _run_or_404(db: Session, run_id: int):
    run = run_catalog.get_run(db, run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"run {run_id} not found")
    return run


def _read_json(path: Path):
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


@router.get("", response_model=list[RunOut])
def runs_endpoint(
    preset: str = Query(None),
    limit: int = Query(100, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    return run_catalog.list_runs(db, preset=preset, limit=limit)


@router.get("/{run_id}")
def run_detail(run_id: int, db: Session = Depends(get_db)):
    """Catalog row with the manifest and report written by the run."""
    run = _run_or_404(db, run_id)
    out = Path(run.output_path)
    return {
        "run": RunOut.model_validate(run).model_dump(mode="json"),
        "manifest": _read_json(out / "manifest.json"),
        "report": _read_json(out / "report.json"),
    }


@router.get("/{run_id}/report.html", response_class=HTMLResponse)
def run_report_html(run_id: int, db: Session = Depends(get_db)):
    run = _run_or_404(db, run_id)
    path = Path(run.output_path) / "report.html"
    if not path.exists():
        raise HTTPException(status_code=404, detail="report.html missing")
    return HTMLResponse(path.read_text(encoding="utf-8"))
