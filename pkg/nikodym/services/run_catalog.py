# nikodym/services/run_catalog.py
import logging
from typing import Optional

from sqlalchemy import select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from ..database import SessionLocal, init_db
from ..models import ExperimentRun

logger = logging.getLogger(__name__)


# ---- writers ----------------------------------------------------------
def record_run(db: Optional[Session] = None, **fields) -> Optional[ExperimentRun]:
    """Insert one catalog row; failures are logged, never raised."""
    own = db is None
    try:
        if own:
            init_db()
            db = SessionLocal()
        row = ExperimentRun(**fields)
        db.add(row)
        db.commit()
        db.refresh(row)
        logger.info("catalogued run %d (%s, %s)", row.id, row.preset, row.status)
        return row
    except SQLAlchemyError as exc:
        logger.warning("run catalog unavailable: %s", exc)
        if db is not None:
            db.rollback()
        return None
    finally:
        if own and db is not None:
            db.close()


# ---- readers ----------------------------------------------------------
def list_runs(db: Session, preset: Optional[str] = None, limit: int = 100) -> list[ExperimentRun]:
    stmt = select(ExperimentRun).order_by(ExperimentRun.id.desc()).limit(limit)
    if preset:
        stmt = stmt.where(ExperimentRun.preset == preset)
    return list(db.execute(stmt).scalars())


def get_run(db: Session, run_id: int) -> Optional[ExperimentRun]:
    return db.get(ExperimentRun, run_id)


def latest_for_hash(db: Session, config_hash: str) -> Optional[ExperimentRun]:
    return db.execute(
        select(ExperimentRun)
        .where(ExperimentRun.config_hash == config_hash)
        .order_by(ExperimentRun.id.desc())
        .limit(1)
    ).scalar_one_or_none()
