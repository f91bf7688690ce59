import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request

from app.api.routes import model, transcribe
from app.config import get_settings
from app.exceptions import SpeechTransformerError
from app.services.recognizer import RecognizerService
from app.utils.logger import setup_logger

settings = get_settings()

logger = setup_logger(settings.log_level, settings.log_dir)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    app.state.settings = settings
    app.state.recognizer = None
    if settings.checkpoint_path:
        try:
            app.state.recognizer = RecognizerService.from_checkpoint(settings.checkpoint_path)
        except SpeechTransformerError as e:
            logger.error(f"Could not load checkpoint {settings.checkpoint_path}: {e}")
    else:
        logger.warning("ASR_CHECKPOINT_PATH is not set; transcription endpoints will return 503")
    yield


app = FastAPI(title="Speech Transformer", lifespan=lifespan)


@app.middleware("http")
async def log_requests(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    logger.info(f"{request.method} {request.url.path} - {response.status_code} - {process_time:.4f}s")
    return response


app.include_router(model.router, prefix="/api/model", tags=["model"])
app.include_router(transcribe.router, prefix="/api/transcribe", tags=["transcribe"])


@app.get("/")
async def read_root():
    return {"message": "Welcome to the Speech Transformer recognition service"}
