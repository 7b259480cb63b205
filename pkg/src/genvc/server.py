"""HTTP service for running a 2AFC study.

Endpoints:
  GET  /api/session?rater_id=...     assign the rater's shuffled comparison list
  GET  /media/{comparison}/{slot}    clip bytes for slot a / b / original
  POST /api/response                 submit one ResponseRecord

Rater-facing payloads are blinded: no method identities and no golden flags
ever leave the server.  Clip folders are bundled as uncompressed ZIPs (no
video transcoder ships at desk scale).
"""

from __future__ import annotations

import io
import zipfile
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel, Field

from .study import (
    DuplicateResponseError,
    ResponseLog,
    ResponseRecord,
    StudyManifest,
    UnknownComparisonError,
    record_response,
)


class ResponseIn(BaseModel):
    rater_id: str
    comparison_id: str
    choice: str
    flips: int = Field(0, ge=0)
    pauses: int = Field(0, ge=0)
    answer_time_ms: float = Field(0.0, ge=0)


def create_app(manifest: StudyManifest, log: ResponseLog) -> FastAPI:
    app = FastAPI(title="2AFC study service")
    blinded = {entry["id"]: entry for entry in manifest.blinded()}

    @app.get("/api/session")
    def session(rater_id: str) -> dict:
        order = manifest.rater_order(rater_id)
        return {
            "rater_id": rater_id,
            "comparisons": [blinded[cid] for cid in order],
        }

    @app.get("/media/{comparison_id}/{slot}")
    def media(comparison_id: str, slot: str) -> Response:
        try:
            comparison = manifest.by_id(comparison_id)
        except UnknownComparisonError:
            raise HTTPException(404, "unknown comparison")
        if slot not in comparison.media:
            raise HTTPException(404, "unknown media slot")
        path = Path(comparison.media[slot])
        if path.is_file():
            return Response(path.read_bytes(), media_type="application/octet-stream")
        if path.is_dir():
            buf = io.BytesIO()
            with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
                for frame in sorted(path.glob("*.png")):
                    zf.writestr(frame.name, frame.read_bytes())
            return Response(buf.getvalue(), media_type="application/zip")
        raise HTTPException(404, "media unavailable")

    @app.post("/api/response")
    def response(body: ResponseIn) -> dict:
        try:
            record = ResponseRecord(
                rater_id=body.rater_id,
                comparison_id=body.comparison_id,
                choice=body.choice,
                flips=body.flips,
                pauses=body.pauses,
                answer_time_ms=body.answer_time_ms,
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        try:
            record_response(manifest, log, record)
        except UnknownComparisonError:
            raise HTTPException(404, "unknown comparison")
        except DuplicateResponseError as exc:
            raise HTTPException(409, str(exc))
        return {"status": "recorded"}

    return app
