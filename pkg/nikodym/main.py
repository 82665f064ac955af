# nikodym/main.py
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .config import settings
from .database import init_db
from .errors import InvalidInputError, NikodymError
from .logging_setup import configure_logging

# ── Routers ──────────────────────────────────────────────
from .routers import presets as presets_router      # /presets
from .routers import runs as runs_router            # /runs/...

configure_logging()

# ── App ──────────────────────────────────────────────────
app = FastAPI(title=settings.APP_NAME, version=__version__, debug=settings.DEBUG)

# ── Tables (first start) ─────────────────────────────────
init_db()

app.include_router(presets_router.router)
app.include_router(runs_router.router)


# ── /health ─────────────────────────────────────────────
@app.get("/health", include_in_schema=False)
def health():
    return {"ok": True}


# ── Handlers ────────────────────────────────────────────
@app.exception_handler(NikodymError)
async def nikodym_error_handler(request: Request, exc: NikodymError):
    code = 422 if isinstance(exc, InvalidInputError) else 400
    return JSONResponse({"success": False, "error": str(exc)}, status_code=code)
