"""HTTP service for the preference study and on-demand drawing generation.

State model: the server owns one triplet schedule shared by all sessions.
A session is opened implicitly by its first ``/api/study/next`` call and
walks the schedule in order. Every accepted answer is appended to a JSON-lines
log, and the log is replayed at startup so restarts lose nothing.
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
import threading
import time
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image as PILImage
from pydantic import BaseModel, Field

from .config import get_by_path
from .corpus import load_manifest, preprocess
from .networks import DrawingGenerator, as_style_tensor, load_model
from .ranking import (
    PreferenceAnswer,
    ScoreTable,
    append_answer,
    balanced_triplet_schedule,
    normalize_scores,
    read_answer_log,
)

STYLE_HEADER = "X-Style-Vector"


class AnswerIn(BaseModel):
    session: str
    question_id: str
    order: list[str] = Field(min_length=3, max_length=3)


class GenerateIn(BaseModel):
    photo_id: Optional[str] = None
    image_b64: Optional[str] = None
    style: list[float] = Field(min_length=3, max_length=3)


class StudyState:
    """Schedule, per-session cursors, and the running score table."""

    def __init__(self, pool_by_style: dict[str, list[str]], seed: int, log_path: str):
        self.lock = threading.Lock()
        self.log_path = log_path
        self.pool = sorted(pid for ids in pool_by_style.values() for pid in ids)
        self.style_of = {pid: st for st, ids in pool_by_style.items() for pid in ids}
        self.schedule: list[tuple[str, tuple[str, str, str]]] = []
        for style in sorted(pool_by_style):
            ids = pool_by_style[style]
            if len(ids) < 3:
                continue
            for triple in balanced_triplet_schedule(ids, seed):
                self.schedule.append((style, triple))
        self.table = ScoreTable.for_pool(self.pool)
        self.sessions: dict[str, set[int]] = {}
        self._replay()

    def _replay(self) -> None:
        if not os.path.exists(self.log_path):
            return
        for answer in read_answer_log(self.log_path):
            session, index = self._parse_qid(answer.question_id)
            self.sessions.setdefault(session, set())
            self.table.record_answer(answer)
            self.sessions[session].add(index)

    @staticmethod
    def _parse_qid(qid: str) -> tuple[str, int]:
        session, _, idx = qid.rpartition("/")
        if not session or not idx.isdigit():
            raise HTTPException(404, f"unknown question {qid!r}")
        return session, int(idx)

    def qid(self, session: str, index: int) -> str:
        return f"{session}/{index}"

    def open_session(self, session: str) -> set[int]:
        return self.sessions.setdefault(session, set())

    def next_index(self, session: str) -> int | None:
        answered = self.open_session(session)
        for k in range(len(self.schedule)):
            if k not in answered:
                return k
        return None

    def accept(self, answer_in: AnswerIn) -> int:
        session, index = self._parse_qid(answer_in.question_id)
        if session != answer_in.session:
            raise HTTPException(404, "question does not belong to this session")
        if session not in self.sessions:
            raise HTTPException(404, f"unknown session {session!r}")
        if index >= len(self.schedule):
            raise HTTPException(404, f"unknown question {answer_in.question_id!r}")
        style, triple = self.schedule[index]
        if sorted(answer_in.order) != sorted(triple):
            raise HTTPException(422, "order must be a permutation of the served drawing ids")
        answer = PreferenceAnswer(
            question_id=answer_in.question_id,
            style=style,
            drawing_ids=tuple(triple),
            order=tuple(answer_in.order),
            timestamp=time.time(),
            annotator=session,
        )
        with self.lock:
            if index in self.sessions[session]:
                raise HTTPException(409, f"question {answer_in.question_id!r} was already answered")
            self.table.record_answer(answer)
            self.sessions[session].add(index)
            append_answer(self.log_path, answer)
        return len(self.sessions[session])


def _load_generator(cfg: dict) -> DrawingGenerator | None:
    path = get_by_path(cfg, "serve.model_checkpoint", "")
    if not path:
        return None
    g = DrawingGenerator(
        base_channels=cfg["networks"]["base_channels"],
        n_resblocks=cfg["networks"]["n_resblocks"],
    )
    file = os.path.join(path, "g.pt") if os.path.isdir(path) else path
    load_model(file, g, cfg)
    g.eval()
    return g


def create_app(cfg: dict, records=None, generator=None) -> FastAPI:
    """Build the service. ``records`` and ``generator`` override the manifest
    and checkpoint named in the config (used by tests and the CLI dry-run).
    """
    if records is None:
        manifest = get_by_path(cfg, "serve.study_manifest", "")
        records = load_manifest(manifest) if manifest else []
    if generator is None:
        generator = _load_generator(cfg)
    size = int(cfg["corpus"]["image_size"])
    log_path = get_by_path(cfg, "serve.answer_log", "answers.jsonl")

    by_id = {r.id: r for r in records}
    pool_by_style: dict[str, list[str]] = {}
    for r in records:
        if r.kind == "drawing" and r.style_tag:
            pool_by_style.setdefault(r.style_tag, []).append(r.id)
    photos = {r.id: r for r in records if r.kind == "photo"}
    state = StudyState(pool_by_style, seed=int(cfg.get("seed", 0)), log_path=log_path)

    app = FastAPI(title="apdraw")
    # the studio page is served from its own origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Style-Vector"],
    )
    app.state.study = state

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model_loaded": generator is not None,
                "pool": len(state.pool), "questions": len(state.schedule)}

    @app.get("/api/study/next")
    def study_next(session: str):
        index = state.next_index(session)
        answered = len(state.sessions[session])
        if index is None:
            raise HTTPException(409, "the question schedule is exhausted for this session")
        style, triple = state.schedule[index]
        return {
            "question_id": state.qid(session, index),
            "style": style,
            "drawing_ids": list(triple),
            "drawing_urls": [f"/api/image/{pid}" for pid in triple],
            "answered": answered,
            "total": len(state.schedule),
        }

    @app.post("/api/study/answer")
    def study_answer(answer: AnswerIn):
        answered = state.accept(answer)
        return {
            "accepted": True,
            "progress": {"answered": answered, "total": len(state.schedule)},
        }

    @app.get("/api/study/progress")
    def study_progress(session: str):
        if session not in state.sessions:
            raise HTTPException(404, f"unknown session {session!r}")
        answered_idx = state.sessions[session]
        by_style: dict[str, dict[str, int]] = {}
        for k, (style, _) in enumerate(state.schedule):
            row = by_style.setdefault(style, {"answered": 0, "total": 0})
            row["total"] += 1
            row["answered"] += int(k in answered_idx)
        return {
            "session": session,
            "answered": len(answered_idx),
            "total": len(state.schedule),
            "by_style": by_style,
        }

    @app.get("/api/study/scores")
    def study_scores():
        with state.lock:
            table = state.table
            for pid in state.pool:
                # materialize unanswered ids with their manifest style so
                # normalization groups them with their own style, not None
                entry = table.entry(pid)
                if entry.style is None:
                    entry.style = state.style_of[pid]
            if state.pool:
                table = normalize_scores(table)
            rows = []
            for pid in state.pool:
                entry = table.entry(pid)
                rows.append({
                    "id": pid,
                    "style": entry.style,
                    "raw": entry.raw,
                    "normalized": entry.normalized,
                    "n_appearances": entry.n_appearances,
                })
        return {"scores": rows}

    @app.get("/api/image/{image_id}")
    def image(image_id: str):
        record = by_id.get(image_id)
        if record is None:
            raise HTTPException(404, f"unknown image {image_id!r}")
        tensor = preprocess(record.path, size, kind=record.kind)
        return Response(content=_tensor_png(tensor), media_type="image/png")

    @app.get("/api/photos")
    def photo_list():
        return {"photos": sorted(photos)}

    @app.post("/api/generate")
    def generate(req: GenerateIn):
        if generator is None:
            raise HTTPException(503, "no generator checkpoint is loaded")
        style = [float(x) for x in req.style]
        if any(x < 0 for x in style) or abs(sum(style) - 1.0) > 1e-3:
            raise HTTPException(422, "style must be 3 non-negative weights summing to 1")
        if req.photo_id is not None:
            record = photos.get(req.photo_id)
            if record is None:
                raise HTTPException(404, f"unknown photo {req.photo_id!r}")
            photo = preprocess(record.path, size, kind="photo")
        elif req.image_b64 is not None:
            try:
                raw = base64.b64decode(req.image_b64, validate=True)
                pil = PILImage.open(io.BytesIO(raw))
                pil.load()
                photo = preprocess(pil, size, kind="photo")
            except Exception:
                raise HTTPException(422, "image_b64 is not a decodable image")
        else:
            raise HTTPException(422, "either photo_id or image_b64 is required")
        with torch.no_grad():
            s = as_style_tensor(np.asarray(style, dtype=np.float32), batch=1)
            drawing = generator(photo[None], s)[0] if generator.use_style else generator(photo[None])[0]
        headers = {STYLE_HEADER: ",".join(f"{x:.6f}" for x in style)}
        return Response(content=_tensor_png(drawing), media_type="image/png", headers=headers)

    return app


def _tensor_png(tensor: torch.Tensor) -> bytes:
    from PIL import Image

    array = (tensor.clamp(0, 1).numpy() * 255).round().astype(np.uint8)
    if array.shape[0] == 1:
        img = Image.fromarray(array[0], mode="L")
    else:
        img = Image.fromarray(np.transpose(array, (1, 2, 0)), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def run_server(cfg: dict, host: str = "127.0.0.1", port: int | None = None) -> None:
    import uvicorn

    app = create_app(cfg)
    uvicorn.run(app, host=host, port=port or int(get_by_path(cfg, "serve.port", 8754)), log_level="warning")
