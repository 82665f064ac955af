"""
Router listing the runnable experiments
"""

from typing import Optional

from fastapi import APIRouter, Query

from ..schemas import PresetInfo
from ..services.presets import list_presets

router = APIRouter(prefix="/presets", tags=["presets"])


@router.get("", response_model=list[PresetInfo])
def presets_endpoint(q: Optional[str] = Query(None, description="substring of name or description")):
    """Presets sorted by name; an unknown filter yields an empty list."""
    return list_presets(q)
