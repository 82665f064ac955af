from sqlalchemy import Column, DateTime, Float, Index, Integer, String, func

from .database import Base


# =========================
# ExperimentRun
# =========================
class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    config_hash = Column(String(64), nullable=False, index=True)
    preset = Column(String(64), nullable=False)
    curve = Column(String(128), nullable=False)
    status = Column(String(16), nullable=False)          # ok | failed
    failed_stage = Column(String(64), nullable=True)
    output_path = Column(String(1024), nullable=False)   # run directory holding report.json etc.
    library_version = Column(String(32), nullable=False)
    wall_time = Column(Float, nullable=False, default=0.0)

    created_at = Column(DateTime, server_default=func.now(), nullable=False)

    __table_args__ = (
        Index("idx_experiment_runs_preset", "preset"),
    )
