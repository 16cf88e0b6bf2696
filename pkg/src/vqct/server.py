"""Operator HTTP API: slices as PNG, seed storage, job control, report.

Single-job semantics: one analysis at a time, concurrent POST /api/run
answers 409.  All endpoints are JSON except the PNG slice payloads.
"""

from __future__ import annotations

import io
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image

from .errors import GeometryError
from .pipeline import PipelineConfig, run_pipeline
from .presegment import SeedSet
from .volgrid import Volume

_AXES = {"x": 0, "y": 1, "z": 2}


def _slice_plane(data, axis, index):
    """2D plane with columns along the first remaining axis, rows the second."""
    if axis == "x":
        return data[index, :, :].T      # (z rows, y cols)
    if axis == "y":
        return data[:, index, :].T      # (z rows, x cols)
    return data[:, :, index].T          # (y rows, x cols)


def _png(arr_u8, mode):
    img = Image.fromarray(arr_u8, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(vol: Volume, config: PipelineConfig = None) -> FastAPI:
    config = config or PipelineConfig()
    app = FastAPI(title="vqct operator API")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    state = {
        "seeds": None,          # raw seeds JSON payload
        "job": None,            # {id, stage, stages_done, total, done, error}
        "result": None,         # PipelineResult of the last finished job
        "job_counter": 0,
    }
    lock = threading.Lock()

    def check_axis_index(axis, index):
        if axis not in _AXES:
            raise HTTPException(400, "axis must be one of x, y, z")
        n = vol.dims[_AXES[axis]]
        if not 0 <= index < n:
            raise HTTPException(400, "index out of range (0..%d)" % (n - 1))

    @app.get("/api/meta")
    def meta():
        return {"dims": list(vol.dims),
                "spacing_mm": list(vol.spacing),
                "origin_mm": list(vol.origin)}

    @app.get("/api/slice")
    def slice_png(axis: str, index: int, window: str = None):
        check_axis_index(axis, index)
        plane = _slice_plane(vol.data, axis, index).astype(np.float64)
        if window:
            try:
                lo, hi = (float(v) for v in window.split(","))
            except ValueError:
                raise HTTPException(400, "window must be 'lo,hi'")
        else:
            lo, hi = float(vol.data.min()), float(vol.data.max())
        if hi <= lo:
            hi = lo + 1.0
        scaled = np.clip((plane - lo) / (hi - lo) * 255.0, 0, 255)
        return _png(scaled.astype(np.uint8), "L")

    @app.post("/api/seeds")
    def post_seeds(payload: dict):
        try:
            SeedSet.from_dict(payload)  # validate
        except (GeometryError, KeyError, TypeError) as exc:
            raise HTTPException(422, "invalid seeds: %s" % exc)
        state["seeds"] = payload
        return {"ok": True, "count": len(payload["levels"])}

    @app.get("/api/seeds")
    def get_seeds():
        if state["seeds"] is None:
            return {"levels": []}
        return state["seeds"]

    def run_job(job):
        def progress(stage):
            job["stage"] = stage
            job["stages_done"] += 1

        try:
            seeds = SeedSet.from_dict(state["seeds"])
            result = run_pipeline(vol, seeds, config, progress=progress)
            state["result"] = result
            if result.failed:
                job["error"] = "; ".join(
                    "%s: %s" % (lv.name, lv.error)
                    for lv in result.levels if lv.error)
        except Exception as exc:  # surfaced through the job status
            job["error"] = "%s: %s" % (type(exc).__name__, exc)
        finally:
            job["done"] = True

    @app.post("/api/run")
    def post_run():
        if state["seeds"] is None or not state["seeds"].get("levels"):
            raise HTTPException(422, "no seeds posted")
        with lock:
            if state["job"] is not None and not state["job"]["done"]:
                raise HTTPException(409, "a job is already running")
            state["job_counter"] += 1
            n = len(state["seeds"]["levels"])
            job = {"id": "job-%d" % state["job_counter"], "stage": "queued",
                   "stages_done": 0, "total": 2 + 9 * n,
                   "done": False, "error": None}
            state["job"] = job
        threading.Thread(target=run_job, args=(job,), daemon=True).start()
        return {"job_id": job["id"]}

    @app.get("/api/job/{job_id}")
    def job_status(job_id: str):
        job = state["job"]
        if job is None or job["id"] != job_id:
            raise HTTPException(404, "unknown job")
        percent = 100 if job["done"] else min(
            99, int(100 * job["stages_done"] / job["total"]))
        return {"stage": job["stage"], "percent": percent,
                "done": job["done"], "error": job["error"]}

    def mask_by_name(name):
        result = state["result"]
        if result is None:
            raise HTTPException(404, "no completed run")
        kinds = {"body": "body", "trabecular": "trabecular",
                 "voi_cylinder": "cylinder", "voi_pacman": "pacman"}
        for lv in result.levels:
            if lv.error is not None:
                continue
            for suffix, attr in kinds.items():
                if name == "%s_%s" % (lv.name, suffix):
                    return getattr(lv, attr)
        raise HTTPException(404, "unknown mask %r" % name)

    @app.get("/api/mask-slice")
    def mask_slice(name: str, axis: str, index: int):
        mask = mask_by_name(name)
        check_axis_index(axis, index)
        plane = _slice_plane(mask.bits, axis, index)
        rgba = np.zeros(plane.shape + (4,), np.uint8)
        rgba[plane] = (255, 80, 40, 160)
        return _png(rgba, "RGBA")

    @app.get("/api/report")
    def report():
        result = state["result"]
        if result is None:
            raise HTTPException(404, "no completed run")
        return result.report

    return app
