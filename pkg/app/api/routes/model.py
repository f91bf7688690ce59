from typing import List

from fastapi import APIRouter, Depends, Query

from app.api.deps import get_recognizer
from app.schemas.decoding import ModelInfoResponse, PresetInfo
from app.services.recognizer import RecognizerService, preset_table

router = APIRouter()


@router.get("", response_model=ModelInfoResponse)
async def get_model_info(recognizer: RecognizerService = Depends(get_recognizer)):
    """Config, vocabulary size and exact parameter count of the served model."""
    return recognizer.info()


@router.get("/presets", response_model=List[PresetInfo])
async def list_presets(vocab_size: int = Query(32, ge=5)):
    return preset_table(vocab_size)
