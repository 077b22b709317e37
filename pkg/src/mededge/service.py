"""HTTP facade over the inference engine for the interactive UI.

Bodies are UTF-8 JSON with snake_case fields; probabilities are decimal
strings with 6 places so identical requests produce byte-identical
responses. Every response carries the symptom model fingerprint in the
X-Model-Fingerprint header. Diagnoses are appended to a line-delimited
JSON log before the response is sent.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response

from . import infer as inf
from . import meddata as md
from .errors import InputError, MedEdgeError

CONFIG_ENV_VAR = "MEDEDGE_CONFIG"

MAX_K = 20
DEFAULT_K = 5


@dataclass
class ServiceConfig:
    symptom_bundle: str
    vocab_path: str
    catalog_path: str
    treatments_path: str | None = None
    skin_bundle: str | None = None
    log_path: str = "diagnosis.log"
    host: str = "127.0.0.1"
    port: int = 8077
    fsync: str = "never"  # "always" | "never"
    static_dir: str | None = None
    cache_policy: str = "per-layer"

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        return cls(**raw)


def resolve_config_path(explicit=None) -> Path:
    """CLI flag wins, then the MEDEDGE_CONFIG environment variable."""
    path = explicit or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        raise InputError(
            f"no config given: pass a path or set {CONFIG_ENV_VAR}"
        )
    return Path(path)


def parse_p6(data: bytes) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> uint8 (h, w, 3) array."""

    def fail(msg):
        raise InputError(f"not a valid P6 image: {msg}")

    if not data.startswith(b"P6"):
        fail("missing P6 magic")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            fail("truncated header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            fail(f"non-numeric header field {data[start:pos]!r}")
    width, height, maxval = fields
    if maxval != 255:
        fail(f"maxval must be 255, got {maxval}")
    pos += 1  # single whitespace after maxval
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        fail(f"payload has {len(raw)} bytes, expected {need}")
    return np.frombuffer(raw, np.uint8).reshape(height, width, 3).copy()


def write_p6(image: np.ndarray) -> bytes:
    image = np.asarray(image, np.uint8)
    h, w, _ = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + image.tobytes()


class DiagnosisLog:
    """Append-only line-delimited JSON log with atomic line writes."""

    def __init__(self, path, fsync: str = "never"):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()

    def append(self, entry: dict) -> int:
        line = json.dumps(entry, separators=(",", ":")) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                if self.fsync == "always":
                    os.fsync(f.fileno())
                return f.tell()

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [
            json.loads(ln)
            for ln in self.path.read_text(encoding="utf-8").splitlines()
            if ln.strip()
        ]


def _json_response(payload, status: int = 200, headers=None) -> Response:
    return Response(
        content=json.dumps(payload, separators=(",", ":")),
        status_code=status,
        media_type="application/json",
        headers=headers,
    )


def _error(status: int, code: str, message: str, fields=None) -> Response:
    return _json_response(
        {"code": code, "message": message, "fields": fields or []}, status
    )


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the service: loads the model pair once, at startup."""
    symptom_handle = inf.load_bundle(config.symptom_bundle, config.cache_policy)
    skin_handle = (
        inf.load_bundle(config.skin_bundle, config.cache_policy)
        if config.skin_bundle
        else None
    )
    vocab = md.SymptomVocabulary.from_file(config.vocab_path)
    catalog = md.DiseaseCatalog.from_files(config.catalog_path, config.treatments_path)
    log = DiagnosisLog(config.log_path, config.fsync)

    app = FastAPI(title="mededge", docs_url=None, redoc_url=None)
    app.state.symptom_handle = symptom_handle
    app.state.skin_handle = skin_handle
    app.state.log = log

    @app.middleware("http")
    async def fingerprint_header(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Model-Fingerprint"] = symptom_handle.fingerprint
        return response

    @app.get("/api/health")
    def health():
        return _json_response(
            {
                "status": "ok",
                "models": {
                    "symptom": symptom_handle.fingerprint,
                    "skin": skin_handle.fingerprint if skin_handle else None,
                },
            }
        )

    @app.get("/api/symptoms")
    def list_symptoms():
        return _json_response({"symptoms": vocab.names})

    @app.get("/api/diseases")
    def list_diseases():
        return _json_response(
            {
                "diseases": [
                    {
                        "id": i,
                        "name": name,
                        "has_treatment": bool(catalog.treatment(i)),
                    }
                    for i, name in enumerate(catalog.names)
                ]
            }
        )

    @app.post("/api/diagnose")
    async def diagnose_endpoint(request: Request):
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(422, "bad_json", "request body must be a JSON object")
        if not isinstance(body, dict):
            return _error(422, "bad_json", "request body must be a JSON object")
        symptoms = body.get("symptoms")
        k = body.get("k", DEFAULT_K)
        if not isinstance(symptoms, list) or not all(
            isinstance(s, str) for s in symptoms
        ):
            return _error(422, "bad_symptoms", "symptoms must be a list of strings")
        if len(symptoms) == 0:
            return _error(
                422, "empty_symptoms", "select at least one symptom to diagnose"
            )
        if len(symptoms) > len(vocab):
            return _error(
                422, "too_many_symptoms", f"at most {len(vocab)} symptoms"
            )
        if not isinstance(k, int) or not 1 <= k <= MAX_K:
            return _error(422, "bad_k", f"k must be an integer in [1, {MAX_K}]")
        try:
            report = inf.diagnose(symptom_handle, symptoms, vocab, catalog, k=k)
        except InputError as err:
            return _error(422, "unknown_symptoms", str(err), err.offenders)
        payload = {
            "symptoms": report.symptoms,
            "model_fingerprint": report.model_fingerprint,
            "entries": [
                {
                    "disease_id": e.disease_id,
                    "name": e.name,
                    "probability": f"{e.probability:.6f}",
                    "treatment": e.treatment,
                }
                for e in report.entries
            ],
        }
        log.append(
            {
                "ts": datetime.now(timezone.utc).isoformat(),
                "request": {"symptoms": report.symptoms, "k": k},
                "result": payload["entries"],
                "model_fingerprint": report.model_fingerprint,
            }
        )
        return _json_response(payload)

    @app.post("/api/skin")
    async def classify_skin(request: Request):
        if skin_handle is None:
            return _error(503, "no_skin_model", "no skin model configured")
        body = await request.body()
        shape = tuple(skin_handle.graph.input_shape)
        expected = f"P6 binary PPM, {shape[1]}x{shape[0]} pixels, maxval 255"
        try:
            image = parse_p6(body)
        except InputError as err:
            return _error(415, "bad_image_format", f"{err}; expected {expected}")
        try:
            ranked = inf.classify_image(skin_handle, image)
        except InputError as err:
            return _error(415, "bad_image_dims", f"{err}; expected {expected}")
        return _json_response(
            {
                "model_fingerprint": skin_handle.fingerprint,
                "classes": [
                    {"class_id": cid, "probability": f"{p:.6f}"}
                    for cid, p in ranked
                ],
            }
        )

    @app.exception_handler(MedEdgeError)
    async def domain_error(request: Request, err: MedEdgeError):
        return _error(422, "invalid_request", str(err))

    @app.exception_handler(Exception)
    async def internal_error(request: Request, err: Exception):
        return _error(500, "internal_error", f"{type(err).__name__}: {err}")

    if config.static_dir and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True))

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
