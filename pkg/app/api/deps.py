from fastapi import HTTPException, Request, status

from app.services.recognizer import RecognizerService


def get_recognizer(request: Request) -> RecognizerService:
    recognizer = getattr(request.app.state, "recognizer", None)
    if recognizer is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No model loaded. Set ASR_CHECKPOINT_PATH to a checkpoint file."
        )
    return recognizer
