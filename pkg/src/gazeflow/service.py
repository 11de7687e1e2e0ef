"""Local HTTP service exposing prediction, personalization, and layout
optimization to the designer UI.

Prediction is synchronous; personalization and optimization run as polled
background jobs (one worker per job kind, personalization serialized per
viewer id). The loaded checkpoint is never mutated: personalization only adds
new viewer embedding entries.
"""

from __future__ import annotations

import json
import logging
import queue
import tempfile
import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .core import StimulusImage, parse_record, record_to_scanpath
from .checkpoint import load_checkpoint
from .layout import layout_from_dict, OrderRequirement, optimize as optimize_layout
from .model import INDIVIDUAL
from .render import layout_svg
from .training import PersonalizationConfig, personalize as run_personalize

log = logging.getLogger(__name__)

JOB_KINDS = ("optimize", "personalize")


class ApiError(Exception):
    def __init__(self, code: str, message: str, field: Optional[str] = None, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.field = field
        self.status = status

    def response(self) -> JSONResponse:
        body = {"code": self.code, "message": self.message}
        if self.field:
            body["field"] = self.field
        return JSONResponse(status_code=self.status, content=body)


@dataclass
class JobRecord:
    id: str
    kind: str
    state: str = "queued"  # queued -> running -> done | failed
    progress: float = 0.0
    result_path: Optional[str] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Job:
    record: JobRecord
    fn: Callable[[JobRecord], dict]


class JobStore:
    """In-memory job registry with one worker thread per job kind."""

    def __init__(self, results_dir: Path):
        self.results_dir = results_dir
        self.results_dir.mkdir(parents=True, exist_ok=True)
        self._jobs: dict[str, JobRecord] = {}
        self._results: dict[str, dict] = {}
        self._queues: dict[str, queue.Queue] = {kind: queue.Queue() for kind in JOB_KINDS}
        self._lock = threading.Lock()
        self._viewer_locks: dict[str, threading.Lock] = {}
        self._workers = [
            threading.Thread(target=self._work, args=(kind,), name=f"jobs-{kind}", daemon=True)
            for kind in JOB_KINDS
        ]
        for w in self._workers:
            w.start()

    def viewer_lock(self, viewer_id: str) -> threading.Lock:
        with self._lock:
            return self._viewer_locks.setdefault(viewer_id, threading.Lock())

    def submit(self, kind: str, fn: Callable[[JobRecord], dict]) -> JobRecord:
        record = JobRecord(id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[record.id] = record
        self._queues[kind].put(_Job(record, fn))
        return record

    def get(self, job_id: str) -> Optional[JobRecord]:
        with self._lock:
            return self._jobs.get(job_id)

    def result(self, job_id: str) -> Optional[dict]:
        with self._lock:
            return self._results.get(job_id)

    def _work(self, kind: str) -> None:
        q = self._queues[kind]
        while True:
            job = q.get()
            if job is None:
                return
            job.record.state = "running"
            job.record.progress = 0.0
            try:
                payload = job.fn(job.record)
                path = self.results_dir / f"{job.record.id}.json"
                path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
                with self._lock:
                    self._results[job.record.id] = payload
                job.record.result_path = str(path)
                job.record.progress = 1.0
                job.record.state = "done"
            except Exception as exc:  # job failures surface through the record
                log.exception("job %s failed", job.record.id)
                job.record.error = str(exc)
                job.record.state = "failed"

    def shutdown(self) -> None:
        """Let in-flight jobs finish, then stop the workers."""
        for kind in JOB_KINDS:
            self._queues[kind].put(None)
        for w in self._workers:
            w.join(timeout=60)


class PredictRequest(BaseModel):
    image: Optional[str] = None
    layout: Optional[dict] = None
    viewer: Optional[str] = None
    mode: str = "greedy"
    seed: int = 0


class PersonalizeRequest(BaseModel):
    viewer: str
    scanpaths: list[dict]
    n_path: int = 50
    steps: int = 150
    learning_rate: float = 3e-3
    seed: int = 0


class OptimizeRequest(BaseModel):
    layout_spec: dict
    order: list[str]
    scope: str = "population"
    policy: str = "greedy"
    seed: int = 0
    cap: int = 10_000


def create_app(checkpoint_path: Path | str, data_root: Optional[Path] = None,
               results_dir: Optional[Path] = None) -> FastAPI:
    model = load_checkpoint(checkpoint_path)
    store = JobStore(results_dir or Path(tempfile.mkdtemp(prefix="gazeflow-results-")))

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        store.shutdown()

    app = FastAPI(title="gazeflow", lifespan=lifespan)

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field_path = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        return JSONResponse(
            status_code=400,
            content={"code": "invalid_request", "message": first.get("msg", "invalid request"),
                     "field": field_path},
        )

    def resolve_image(ref: str) -> StimulusImage:
        candidates = []
        if data_root is not None:
            for sub in ("images", "."):
                for ext in ("", ".png", ".jpg", ".jpeg"):
                    candidates.append(Path(data_root) / sub / f"{ref}{ext}")
        candidates.append(Path(ref))
        for path in candidates:
            if path.is_file():
                return StimulusImage.load(path)
        raise ApiError("unknown_image", f"cannot resolve image {ref!r}", field="image", status=404)

    def resolve_viewer(viewer: Optional[str]) -> Optional[str]:
        if viewer is None:
            return None
        if model.cfg.mode != INDIVIDUAL:
            raise ApiError("population_checkpoint", "checkpoint has no viewer embeddings", field="viewer")
        if viewer not in model.viewer_embeddings:
            raise ApiError("unknown_viewer", f"no embedding for viewer {viewer!r}", field="viewer", status=404)
        return viewer

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/model")
    def model_info() -> dict:
        return {
            "config": model.cfg.to_dict(),
            "mode": model.cfg.mode,
            "viewers": sorted(model.viewer_embeddings),
            "path_length": model.cfg.path_length,
        }

    @app.post("/predict")
    def predict(req: PredictRequest) -> dict:
        if (req.image is None) == (req.layout is None):
            raise ApiError("bad_input", "provide exactly one of 'image' or 'layout'", field="image")
        if req.mode not in ("greedy", "sample"):
            raise ApiError("bad_mode", "mode must be 'greedy' or 'sample'", field="mode")
        viewer = resolve_viewer(req.viewer)
        if req.layout is not None:
            try:
                spec, _ = layout_from_dict(req.layout)
            except ValueError as exc:
                raise ApiError("bad_layout", str(exc), field="layout") from exc
            from .render import render_layout

            image = render_layout(spec)
        else:
            image = resolve_image(req.image)
        result = model.rollout(image, viewer, mode=req.mode, seed=req.seed)
        return {
            "stimulus": image.id,
            "viewer": viewer,
            "mode": req.mode,
            "seed": req.seed,
            "log_prob": result.log_prob,
            "scanpath": [[f.x, f.y, f.t] for f in result.scanpath.fixations],
        }

    @app.post("/personalize")
    def personalize_endpoint(req: PersonalizeRequest) -> dict:
        if model.cfg.mode != INDIVIDUAL:
            raise ApiError("population_checkpoint", "checkpoint has no viewer machinery", field="viewer")
        if not req.scanpaths:
            raise ApiError("no_samples", "personalization needs at least one scanpath", field="scanpaths")
        if req.viewer in model.viewer_embeddings:
            raise ApiError("viewer_exists", f"viewer {req.viewer!r} already registered", field="viewer")

        samples = []
        images: dict[str, StimulusImage] = {}
        for i, rec in enumerate(req.scanpaths):
            try:
                parsed = parse_record(json.dumps(rec))
                sid = str(parsed["stimulus"])
                if sid not in images:
                    images[sid] = resolve_image(sid)
                samples.append(record_to_scanpath(parsed, images[sid]))
            except ApiError:
                raise
            except ValueError as exc:
                raise ApiError("bad_record", f"scanpaths[{i}]: {exc}", field="scanpaths") from exc

        pcfg = PersonalizationConfig(n_path=req.n_path, steps=req.steps,
                                     learning_rate=req.learning_rate, seed=req.seed)

        def job_fn(record: JobRecord) -> dict:
            with store.viewer_lock(req.viewer):
                run_personalize(model, req.viewer, samples, images, pcfg)
            return {"viewer": req.viewer, "n_samples": len(samples), "steps": pcfg.steps}

        record = store.submit("personalize", job_fn)
        return {"job": record.id, "state": record.state}

    @app.post("/optimize")
    def optimize_endpoint(req: OptimizeRequest) -> dict:
        try:
            spec, _ = layout_from_dict(req.layout_spec)
            order = OrderRequirement(tuple(req.order))
            order.validate_against(spec)
        except ValueError as exc:
            raise ApiError("bad_layout", str(exc), field="layout_spec") from exc
        if req.scope != "population":
            resolve_viewer(req.scope)

        def job_fn(record: JobRecord) -> dict:
            result = optimize_layout(
                spec, order, model, scope=req.scope, rollout_policy=req.policy,
                seed=req.seed, cap=req.cap,
            )
            payload = json.loads(result.to_json())
            payload["svg"] = layout_svg(result.layout, result.scanpath, order,
                                        objective=result.objective if result.satisfied else None)
            return payload

        record = store.submit("optimize", job_fn)
        return {"job": record.id, "state": record.state}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        record = store.get(job_id)
        if record is None:
            raise ApiError("unknown_job", f"no job {job_id!r}", status=404)
        return record.as_dict()

    @app.get("/results/{job_id}")
    def job_result(job_id: str):
        record = store.get(job_id)
        if record is None:
            raise ApiError("unknown_job", f"no job {job_id!r}", status=404)
        if record.state != "done":
            raise ApiError("not_done", f"job {job_id!r} is {record.state}", status=404)
        return store.result(job_id)

    app.state.model = model
    app.state.jobs = store
    return app
