"""Operator-facing HTTP job service: upload/submit a stream, poll progress,
review best-K candidates, trigger OCR, save or delete results.

Persistence is an append-only results.jsonl plus the pipeline's crop files;
replaying the log reconstructs every saved/deleted decision in order.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import cv2
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse

from .detect import DetectorConfig
from .eval import load_annotations
from .haar import load_cascade
from .ocr import OcrEndpoint, decode_recognize, normalize_bangla, recognize
from .pipeline import FrameSource, PipelineConfig, process_stream


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _not_found(what: str) -> ApiError:
    return ApiError(404, "not_found", what)


@dataclass
class ReviewState:
    chosen_rank: int = 1
    decision: str | None = None  # None | saved | deleted
    ocr_cache: dict[int, str] = field(default_factory=dict)  # rank -> raw text
    saved_record: dict | None = None


@dataclass
class Job:
    job_id: str
    stream_path: str
    config: dict
    status: str = "queued"  # queued -> running -> done | failed
    frames_total: int = 0
    frames_processed: int = 0
    error: str | None = None
    out_dir: str = ""
    stream_id: str = ""
    review: dict[int, ReviewState] = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {
            "job_id": self.job_id,
            "status": self.status,
            "stream_id": self.stream_id,
            "progress": {"frames_processed": self.frames_processed, "frames_total": self.frames_total},
            "error": self.error,
        }


class JobService:
    """In-memory job registry with a sequential worker thread.

    The worker is the single writer of job state; HTTP reads are snapshots
    and never block on pipeline progress.
    """

    def __init__(self, data_dir, ocr_url: str | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.results_path = self.data_dir / "results.jsonl"
        self.ocr_url = ocr_url or os.environ.get("PLATEFLOW_OCR_URL")
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._work, daemon=True)
        self._worker.start()

    # -- submission / worker --

    def submit(self, stream_path: str, config: dict | None = None) -> str:
        config = config or {}
        stream = Path(stream_path)
        if not (stream / "stream.json").is_file():
            raise ApiError(400, "invalid_stream", f"missing stream.json under {stream}")
        try:
            source = FrameSource(stream)
        except (ValueError, FileNotFoundError) as e:
            raise ApiError(400, "invalid_stream", str(e)) from e
        job = Job(
            job_id=uuid.uuid4().hex[:12],
            stream_path=str(stream),
            config=config,
            frames_total=source.n_frames,
            stream_id=source.stream_id,
        )
        job.out_dir = str(self.data_dir / "jobs" / job.job_id)
        with self._lock:
            self._jobs[job.job_id] = job
        self._queue.put(job.job_id)
        return job.job_id

    def _build_pipeline_config(self, job: Job) -> tuple[PipelineConfig, object]:
        cfg = job.config
        wakeup = None
        if cfg.get("cascade"):
            wakeup = load_cascade(cfg["cascade"])
        if cfg.get("no_wakeup"):
            wakeup = None
        backbone = cfg.get("backbone", "oracle")
        annotations = None
        if backbone == "oracle":
            ann_path = Path(job.stream_path) / "annotations.json"
            if not ann_path.is_file():
                raise ApiError(400, "invalid_config", "oracle backbone needs annotations.json in the stream dir")
            annotations = load_annotations(ann_path)
            det = DetectorConfig(kind="oracle")
        elif backbone.startswith("subprocess:"):
            det = DetectorConfig(kind="subprocess", subprocess_cmd=backbone.split(":", 1)[1].split())
        else:
            raise ApiError(400, "invalid_config", f"unknown backbone {backbone!r}")
        pconfig = PipelineConfig(
            gap_frames=int(cfg.get("gap_frames", 24)),
            best_k=int(cfg.get("best_k", 3)),
            wakeup_model=wakeup,
            backbone=det,
        )
        return pconfig, annotations

    def _work(self):
        while True:
            job_id = self._queue.get()
            job = self._jobs[job_id]
            job.status = "running"
            try:
                pconfig, annotations = self._build_pipeline_config(job)

                def on_progress(n, _job=job):
                    _job.frames_processed = n

                process_stream(
                    FrameSource(job.stream_path),
                    pconfig,
                    annotations=annotations,
                    out_dir=job.out_dir,
                    progress_cb=on_progress,
                )
                job.status = "done"
            except Exception as e:  # job failure is a state, not a crash
                job.error = str(e)
                job.status = "failed"

    # -- reads --

    def _job(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise _not_found(f"no job {job_id}")
        return job

    def get_job(self, job_id: str) -> dict:
        return self._job(job_id).snapshot()

    def _instances_doc(self, job: Job) -> dict:
        path = Path(job.out_dir) / job.stream_id / "instances.json"
        if not path.is_file():
            raise ApiError(409, "not_ready", f"job {job.job_id} has no finalized instances yet")
        return json.loads(path.read_text(encoding="utf-8"))

    def list_instances(self, job_id: str) -> dict:
        job = self._job(job_id)
        doc = self._instances_doc(job)
        visible = []
        for inst in doc["instances"]:
            state = job.review.get(inst["id"])
            if state and state.decision == "deleted":
                continue
            visible.append(
                {
                    **inst,
                    "chosen_rank": state.chosen_rank if state else 1,
                    "decision": state.decision if state else None,
                    "ocr": dict(state.ocr_cache) if state else {},
                }
            )
        return {"v": 1, "job_id": job_id, "stream_id": doc["stream_id"], "instances": visible}

    def candidate_path(self, job_id: str, instance_id: int, rank: int) -> Path:
        job = self._job(job_id)
        p = Path(job.out_dir) / job.stream_id / f"instance-{instance_id}" / f"cand-{rank}.png"
        if not p.is_file():
            raise _not_found(f"no candidate {rank} for instance {instance_id}")
        return p

    # -- review actions --

    def _instance_entry(self, job: Job, instance_id: int) -> dict:
        doc = self._instances_doc(job)
        for inst in doc["instances"]:
            if inst["id"] == instance_id:
                return inst
        raise _not_found(f"no instance {instance_id} in job {job.job_id}")

    def _ocr_candidate(self, job: Job, instance_id: int, rank: int) -> str:
        state = job.review.setdefault(instance_id, ReviewState())
        if rank in state.ocr_cache:
            return state.ocr_cache[rank]
        crop_path = self.candidate_path(job.job_id, instance_id, rank)
        crop = cv2.imread(str(crop_path), cv2.IMREAD_GRAYSCALE)
        if self.ocr_url:
            text = recognize(crop, OcrEndpoint(base_url=self.ocr_url)).text
        else:
            text = decode_recognize(crop).text
        state.ocr_cache[rank] = text
        return text

    def select(self, job_id: str, instance_id: int, rank: int) -> dict:
        job = self._job(job_id)
        inst = self._instance_entry(job, instance_id)
        if not 1 <= rank <= len(inst["candidates"]):
            raise ApiError(400, "invalid_rank", f"rank {rank} outside 1..{len(inst['candidates'])}")
        state = job.review.setdefault(instance_id, ReviewState())
        if state.decision == "deleted":
            raise ApiError(409, "conflict", "instance was deleted")
        if state.decision == "saved":
            raise ApiError(409, "conflict", "saved records are immutable")
        state.chosen_rank = rank
        text = self._ocr_candidate(job, instance_id, rank)
        return {"job_id": job_id, "instance_id": instance_id, "chosen_rank": rank, "ocr_text": text}

    def save(self, job_id: str, instance_id: int) -> dict:
        job = self._job(job_id)
        self._instance_entry(job, instance_id)
        state = job.review.setdefault(instance_id, ReviewState())
        if state.decision == "deleted":
            raise ApiError(409, "conflict", "cannot save a deleted instance")
        if state.decision == "saved":
            return state.saved_record  # idempotent
        raw = self._ocr_candidate(job, instance_id, state.chosen_rank)
        record = {
            "job_id": job_id,
            "instance_id": instance_id,
            "chosen_rank": state.chosen_rank,
            "ocr_text": raw,
            "ocr_text_normalized": normalize_bangla(raw),
            "decision": "saved",
            "timestamp": time.time(),
        }
        self._append_record(record)
        state.decision = "saved"
        state.saved_record = record
        return record

    def delete(self, job_id: str, instance_id: int) -> dict:
        job = self._job(job_id)
        self._instance_entry(job, instance_id)
        state = job.review.setdefault(instance_id, ReviewState())
        if state.decision == "deleted":
            return {"job_id": job_id, "instance_id": instance_id, "decision": "deleted"}
        record = {
            "job_id": job_id,
            "instance_id": instance_id,
            "chosen_rank": state.chosen_rank,
            "decision": "deleted",
            "timestamp": time.time(),
        }
        self._append_record(record)
        state.decision = "deleted"
        return record

    def results(self) -> list[dict]:
        if not self.results_path.is_file():
            return []
        out = []
        with open(self.results_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    _append_lock = threading.Lock()

    def _append_record(self, record: dict) -> None:
        with self._append_lock:
            with open(self.results_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def create_app(data_dir, ocr_url: str | None = None) -> FastAPI:
    service = JobService(data_dir, ocr_url=ocr_url)
    app = FastAPI(title="plateflow")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.post("/api/v1/jobs", status_code=201)
    async def submit_job(body: dict):
        stream_path = body.get("stream_path")
        if not stream_path:
            raise ApiError(400, "invalid_request", "stream_path is required")
        job_id = service.submit(stream_path, body.get("config"))
        return {"job_id": job_id}

    @app.get("/api/v1/jobs/{job_id}")
    async def get_job(job_id: str):
        return service.get_job(job_id)

    @app.get("/api/v1/jobs/{job_id}/instances")
    async def list_instances(job_id: str):
        return service.list_instances(job_id)

    @app.get("/api/v1/instances/{job_id}/{instance_id}/candidates/{rank}.png")
    async def candidate_png(job_id: str, instance_id: int, rank: int):
        return FileResponse(service.candidate_path(job_id, instance_id, rank))

    @app.post("/api/v1/instances/{job_id}/{instance_id}/select")
    async def select(job_id: str, instance_id: int, body: dict):
        rank = body.get("rank")
        if not isinstance(rank, int):
            raise ApiError(400, "invalid_request", "body must carry an integer rank")
        return service.select(job_id, instance_id, rank)

    @app.post("/api/v1/instances/{job_id}/{instance_id}/save")
    async def save(job_id: str, instance_id: int):
        return service.save(job_id, instance_id)

    @app.delete("/api/v1/instances/{job_id}/{instance_id}")
    async def delete(job_id: str, instance_id: int):
        return service.delete(job_id, instance_id)

    @app.get("/api/v1/results")
    async def results():
        return {"results": service.results()}

    return app
