"""HTTP/JSON inference service over a frozen checkpoint.

Endpoints: GET /model/info, POST /decode, /repair, /features.  The model
is read-only after startup, so concurrent requests share it safely.
Error contract: 400 malformed or out-of-shape payloads, 422 unknown
feature names, 503 when no checkpoint is loaded.  NaN is never
serialized; a non-finite result is rejected server-side.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request

from ivsgen import arbitrage, cvae, repair
from ivsgen.errors import FormatError
from ivsgen.features import FEATURE_NAMES, FeatureVector, extract_features
from ivsgen.surfaces import IVSurface

CHECKPOINT_ENV_VAR = "IVSGEN_CHECKPOINT"
REPAIR_TIME_BUDGET = 10.0  # seconds, synchronous best-effort cap


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint_path: str | None = None  # falls back to $IVSGEN_CHECKPOINT
    max_batch: int = 64
    max_body_bytes: int = 1 << 20
    enable_repair: bool = True


def _finite_or_500(obj):
    """Recursively reject NaN/inf before serialization."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise HTTPException(500, detail="non-finite value in response")
    elif isinstance(obj, dict):
        for v in obj.values():
            _finite_or_500(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _finite_or_500(v)
    return obj


def _parse_y(model: cvae.CvaeModel, payload) -> FeatureVector:
    y = payload.get("y")
    if not isinstance(y, dict):
        raise HTTPException(400, detail="field 'y' must be an object of feature values")
    unknown = set(y) - set(model.feature_names)
    if unknown:
        raise HTTPException(422, detail=f"unknown feature names: {sorted(unknown)}")
    missing = set(model.feature_names) - set(y)
    if missing:
        raise HTTPException(400, detail=f"field 'y' missing features: {sorted(missing)}")
    try:
        values = np.array([float(y[n]) for n in model.feature_names])
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, detail=f"field 'y' has a non-numeric value: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise HTTPException(400, detail="field 'y' must be finite")
    try:
        return FeatureVector(names=model.feature_names, values=values)
    except ValueError as exc:
        raise HTTPException(400, detail=f"field 'y' invalid: {exc}") from exc


def _parse_z(model: cvae.CvaeModel, payload) -> np.ndarray:
    z = payload.get("z")
    if not isinstance(z, list):
        raise HTTPException(400, detail=f"field 'z' must be a list of {model.d_z} floats")
    try:
        arr = np.array([float(v) for v in z])
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, detail=f"field 'z' has a non-numeric value: {exc}") from exc
    if arr.shape != (model.d_z,):
        raise HTTPException(400, detail=f"field 'z' must have length {model.d_z}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise HTTPException(400, detail="field 'z' must be finite")
    return arr


def _arbitrage_block(surface: IVSurface) -> dict:
    report = arbitrage.audit(surface)
    return {
        "is_free": report.is_free,
        "l_calendar": report.l_calendar,
        "l_butterfly": report.l_butterfly,
        "violation_nodes": {
            "calendar": [list(v[:2]) for v in report.calendar_violations],
            "butterfly": [list(v[:2]) for v in report.butterfly_violations],
        },
    }


def _features_block(surface: IVSurface) -> dict:
    return extract_features(surface, which=FEATURE_NAMES).as_dict()


def create_app(model: cvae.CvaeModel | None, cfg: ServerConfig | None = None) -> FastAPI:
    cfg = cfg or ServerConfig()
    app = FastAPI(title="ivsgen", docs_url=None, redoc_url=None)
    app.state.model = model
    app.state.cfg = cfg

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and int(length) > cfg.max_body_bytes:
            from fastapi.responses import JSONResponse

            return JSONResponse({"detail": "request body too large"}, status_code=400)
        return await call_next(request)

    def require_model() -> cvae.CvaeModel:
        if app.state.model is None:
            raise HTTPException(503, detail="checkpoint not loaded")
        return app.state.model

    @app.get("/model/info")
    def model_info():
        m = require_model()
        return _finite_or_500(
            {
                "feature_names": list(m.feature_names),
                "feature_ranges": {k: list(v) for k, v in (m.feature_ranges or {}).items()},
                "d_z": m.d_z,
                "grid": {
                    "m_values": m.grid.m_values.tolist(),
                    "tau_values": m.grid.tau_values.tolist(),
                },
            }
        )

    @app.post("/decode")
    def decode(payload: dict = Body(...)):
        m = require_model()
        y = _parse_y(m, payload)
        z = _parse_z(m, payload)
        surface = cvae.decode(m, y, z)
        return _finite_or_500(
            {
                "surface": surface.values.tolist(),
                "features": _features_block(surface),
                "arbitrage": _arbitrage_block(surface),
            }
        )

    @app.post("/repair")
    def repair_endpoint(payload: dict = Body(...)):
        m = require_model()
        if not app.state.cfg.enable_repair:
            raise HTTPException(503, detail="repair disabled on this server")
        y = _parse_y(m, payload)
        z = _parse_z(m, payload)
        result = repair.repair_surface(
            m, y, z, repair.RepairConfig(time_budget=REPAIR_TIME_BUDGET)
        )
        return _finite_or_500(
            {
                "z_optimized": result.z_optimized.tolist(),
                "surface": result.surface.values.tolist(),
                "features": _features_block(result.surface),
                "arbitrage": _arbitrage_block(result.surface),
                "repaired": result.repaired,
                "converged": result.converged,
                "iterations": result.iterations,
                "feature_drift": result.feature_drift,
            }
        )

    @app.post("/features")
    def features_endpoint(payload: dict = Body(...)):
        m = require_model()
        values = payload.get("surface")
        if not isinstance(values, list):
            raise HTTPException(400, detail="field 'surface' must be a 2-d array")
        try:
            arr = np.array(values, dtype=np.float64)
        except ValueError as exc:
            raise HTTPException(400, detail=f"field 'surface' malformed: {exc}") from exc
        if arr.shape != (m.grid.n_tau, m.grid.n_m):
            raise HTTPException(
                400,
                detail=f"field 'surface' must have shape "
                f"({m.grid.n_tau}, {m.grid.n_m}), got {arr.shape}",
            )
        try:
            surface = IVSurface(grid=m.grid, values=arr)
        except ValueError as exc:
            raise HTTPException(400, detail=f"field 'surface' invalid: {exc}") from exc
        return _finite_or_500({"features": _features_block(surface)})

    return app


def load_model_for_serving(cfg: ServerConfig) -> cvae.CvaeModel:
    path = cfg.checkpoint_path or os.environ.get(CHECKPOINT_ENV_VAR)
    if not path:
        raise FormatError(
            f"no checkpoint: pass --ckpt or set ${CHECKPOINT_ENV_VAR}"
        )
    model = cvae.load_checkpoint(path)
    return model


def serve(cfg: ServerConfig) -> None:
    """Blocking server entry point."""
    import uvicorn

    model = load_model_for_serving(cfg)
    app = create_app(model, cfg)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
