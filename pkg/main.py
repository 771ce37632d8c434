import io
import logging
from contextlib import asynccontextmanager

import numpy as np
import uvicorn
from fastapi import FastAPI, File, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from config import settings
from dataset_io import parse_model_json, read_numeric_csv
from errors import ArgumentError, ParseError, SimcateError
from linear_estimators import predict_cate
from model_registry import ModelRegistry
from models import LatentSummary, ModelUploadResponse, PredictRequest, PredictResponse
from validation import as_matrix, as_treatments

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifecycle manager for startup/shutdown"""
    logging.basicConfig(level=settings.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logger.info("Model registry ready (ttl %d minutes)", registry.ttl_minutes)
    yield
    registry.models.clear()


app = FastAPI(
    title="simcate - CATE Workbench",
    description="Scores uploaded CATE models and inspects latent covariate tables",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

registry = ModelRegistry()


def _client_error(exc: SimcateError) -> HTTPException:
    status = 422 if isinstance(exc, (ParseError, ArgumentError)) else 400
    return HTTPException(status_code=status, detail=str(exc))


@app.get("/")
async def root():
    """Service summary"""
    return {
        "service": "simcate - CATE Workbench",
        "status": "running",
        "models_loaded": len(registry.list_ids()),
        "model_ttl_minutes": registry.ttl_minutes,
    }


@app.get("/health")
async def health():
    """Health check endpoint"""
    return {"status": "healthy"}


@app.post("/models", response_model=ModelUploadResponse)
async def upload_model(request: Request):
    """
    Register a fitted model.

    Body is the JSON document written by `cli.py fit`.
    """
    try:
        body = await request.body()
        if len(body) > settings.max_upload_bytes:
            raise HTTPException(status_code=413, detail="Model document too large")
        if not body:
            raise HTTPException(status_code=400, detail="Model document cannot be empty")
        entry = registry.register(parse_model_json(body))
        return ModelUploadResponse(model_id=entry.model_id, kind=entry.model.kind, n_x=entry.model.n_x)
    except HTTPException:
        raise
    except SimcateError as e:
        raise _client_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal error: {str(e)}")


@app.post("/models/{model_id}/predict", response_model=PredictResponse)
async def predict(model_id: str, request: PredictRequest):
    """Predicted effects for covariate rows observed under the given treatments"""
    entry = registry.get(model_id)
    if entry is None:
        raise HTTPException(status_code=404, detail=f"Unknown model: {model_id}")
    try:
        x = as_matrix(request.x, "x", columns=entry.model.n_x)
        t = as_treatments(request.t, x.shape[0])
        tau_hat = predict_cate(entry.model, x, t)
        registry.record_prediction(model_id)
        return PredictResponse(model_id=model_id, kind=entry.model.kind, tau_hat=tau_hat.tolist())
    except SimcateError as e:
        raise _client_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal error: {str(e)}")


@app.delete("/models/{model_id}")
async def delete_model(model_id: str):
    if not registry.remove(model_id):
        raise HTTPException(status_code=404, detail=f"Unknown model: {model_id}")
    return {"status": "deleted", "model_id": model_id}


@app.post("/latents/inspect", response_model=LatentSummary)
async def inspect_latents(file: UploadFile = File(...)):
    """Shape and per-column summary of an uploaded latent CSV"""
    try:
        content = await file.read()
        if len(content) > settings.max_upload_bytes:
            raise HTTPException(status_code=413, detail="Upload too large")
        buffer = io.BytesIO(content)
        buffer.name = file.filename or "upload"
        frame = read_numeric_csv(buffer)
        values = frame.to_numpy(dtype=float)
        return LatentSummary(
            rows=values.shape[0],
            columns=[str(c) for c in frame.columns],
            means=np.mean(values, axis=0).tolist(),
            stds=np.std(values, axis=0).tolist(),
        )
    except HTTPException:
        raise
    except SimcateError as e:
        raise _client_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal error: {str(e)}")


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=settings.host,
        port=settings.port,
        reload=True,
    )
