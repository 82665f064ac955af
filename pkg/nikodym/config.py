from dotenv import load_dotenv
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    APP_NAME: str = "nikodym-lab"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    DATABASE_URL: str = "sqlite:///nikodym_runs.db"
    RESULTS_DIR: str = "results"
    WORKERS: int = 0
    SLACK: float = 0.25

    # numerics
    SIGMA_GRID: int = 512
    SIGMA_TOL: float = 1e-12
    FRAME_PIVOT_TOL: float = 1e-10
    MEMBERSHIP_SAMPLES: int = 1024
    AUDIT_SAMPLES: int = 10_000
    MC_SAMPLES: int = 1_000_000
    PROBE_POINTS: int = 4096
    DEGENERACY_KAPPA: float = 1e-2
    A_PRIME_MAX: float = 2.0 ** 20
    SCHUR_CONSTANT: float = 1e3
    POWER_ITERATIONS: int = 30

    class Config:
        env_file = ".env"
        case_sensitive = True


load_dotenv()
settings = Settings()
