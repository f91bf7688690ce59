from typing import Optional

from fastapi import APIRouter, Depends, File, HTTPException, Query, UploadFile, status
from fastapi.concurrency import run_in_threadpool

from app.api.deps import get_recognizer
from app.config import Settings, get_settings
from app.exceptions import DataError
from app.schemas.decoding import TranscribeResponse
from app.services.features import parse_features
from app.services.recognizer import RecognizerService
from app.utils.logger import setup_logger

router = APIRouter()
logger = setup_logger()


@router.post("", response_model=TranscribeResponse, status_code=status.HTTP_200_OK)
async def transcribe(
    file: UploadFile = File(...),
    beam: Optional[int] = Query(None, ge=1),
    alpha: Optional[float] = Query(None, ge=0.0),
    max_len: Optional[int] = Query(None, ge=1),
    recognizer: RecognizerService = Depends(get_recognizer),
    settings: Settings = Depends(get_settings),
):
    """
    Transcribe one uploaded FBANK1 feature file.
    """
    payload = await file.read()
    try:
        features = parse_features(payload, expected_bins=recognizer.model.config.mel_bins)
    except DataError as e:
        logger.warning(f"Rejected upload {file.filename}: {e}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    result = await run_in_threadpool(
        recognizer.transcribe,
        features,
        beam or settings.default_beam,
        settings.default_alpha if alpha is None else alpha,
        max_len or settings.default_max_len,
    )
    logger.info(f"Transcribed {file.filename}: {features.shape[0]} frames, truncated={result.truncated}")
    return TranscribeResponse(
        text=result.text,
        score=result.score,
        log_prob=result.log_prob,
        truncated=result.truncated,
        frames=features.shape[0],
    )
