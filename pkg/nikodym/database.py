"""Run catalog storage: one engine per process, SQLite unless DATABASE_URL says otherwise."""

from pathlib import Path

from sqlalchemy import create_engine, event
from sqlalchemy.engine import make_url
from sqlalchemy.orm import declarative_base, sessionmaker

from .config import settings

CATALOG_URL = make_url(settings.DATABASE_URL)
IS_SQLITE = CATALOG_URL.get_backend_name() == "sqlite"

if IS_SQLITE and CATALOG_URL.database not in (None, "", ":memory:"):
    Path(CATALOG_URL.database).parent.mkdir(parents=True, exist_ok=True)

# worker threads and concurrent CLI runs all append to the same file
engine = create_engine(
    CATALOG_URL,
    connect_args={"check_same_thread": False, "timeout": 30} if IS_SQLITE else {},
)

if IS_SQLITE:
    @event.listens_for(engine, "connect")
    def _sqlite_journal(dbapi_conn, connection_record):
        cursor = dbapi_conn.cursor()
        cursor.execute("PRAGMA journal_mode=WAL")
        cursor.close()

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db() -> None:
    """Create the catalog table on first use."""
    from . import models  # noqa: F401

    Base.metadata.create_all(bind=engine)
