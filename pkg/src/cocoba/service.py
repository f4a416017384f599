"""HTTP annotation service: one pending query per session, humans as the oracle.

A label POST transitions atomically (commit -> retrain -> new pending query
-> checkpoint to disk -> respond); GET /next is idempotent until then. Every
session persists an engine checkpoint plus an append-only annotation log,
and a session can be replayed from the log against a fresh engine to verify
its state.
"""

from __future__ import annotations

import json
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from cocoba.corpus import Dataset, byte_slice, cold_start_split
from cocoba.embeddings import EmbeddingSnapshot
from cocoba.engine import EmptyUnlabeledPool, Engine, EngineConfig
from cocoba.harness import f1_positive


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class LabelRequest(BaseModel):
    posting_id: str
    label: Literal[1, -1]


class CreateSessionRequest(BaseModel):
    session_id: str = "default"
    seed: int = 0


class Session:
    """Single-writer annotation session around one engine."""

    def __init__(self, session_id: str, engine: Engine, dataset: Dataset,
                 state_dir: Path, seed: int, n_seed: int, eval_every: int = 1,
                 created_at: Optional[str] = None, curve: Optional[list] = None,
                 log: Optional[list] = None):
        self.session_id = session_id
        self.engine = engine
        self.dataset = dataset
        self.state_dir = state_dir
        self.seed = seed
        self.n_seed = n_seed
        self.eval_every = eval_every
        self.created_at = created_at or _now()
        self.updated_at = self.created_at
        self.curve: list[dict] = curve or []
        self.log: list[dict] = log or []
        self.lock = threading.Lock()

    # -- queries ---------------------------------------------------------

    def pending_query(self):
        return self.engine.next_query()

    def submit_label(self, posting_id: str, label: int) -> dict:
        pending = self.engine.next_query()
        if posting_id != pending.query_id:
            raise HTTPException(
                status_code=409,
                detail={"error": "stale_query", "pending_id": pending.query_id},
            )
        self.engine.commit_label(posting_id, label)
        entry = {"posting_id": posting_id, "label": label, "at": _now()}
        self.log.append(entry)
        f1 = None
        if self.engine.pool.test and self.engine.iterations % self.eval_every == 0:
            f1 = self._evaluate()
            self.curve.append(
                {"iteration": self.engine.iterations,
                 "budget": len(self.engine.pool.labels), "f1": f1}
            )
        try:
            self.engine.next_query()  # precompute the next pending query
        except EmptyUnlabeledPool:
            pass
        self.updated_at = entry["at"]
        self.persist()
        return {
            "accepted": True,
            "new_metrics": {
                "labeled": len(self.engine.pool.labels),
                "unlabeled": len(self.engine.pool.unlabeled),
                "f1_positive": f1,
            },
        }

    def _evaluate(self) -> float:
        test_ids = sorted(self.engine.pool.test)
        gold = {pid: self.dataset.posting(pid).gold_label for pid in test_ids}
        if any(v is None for v in gold.values()):
            return float("nan")
        return f1_positive(self.engine.predict(test_ids), gold)

    def status(self) -> dict:
        return {
            "session_id": self.session_id,
            "counts": {
                "labeled": len(self.engine.pool.labels),
                "unlabeled": len(self.engine.pool.unlabeled),
                "test": len(self.engine.pool.test),
            },
            "strategy": self.engine.config.strategy,
            "config": {
                "n_estimators": self.engine.config.n_estimators,
                "subsample_ratio": self.engine.config.subsample_ratio,
                "bandwidth_doc": self.engine.config.bandwidth_doc,
                "bandwidth_word": self.engine.config.bandwidth_word,
                "rng_seed": self.engine.config.rng_seed,
                "cold_start": self.n_seed,
            },
            "curve": list(self.curve),
            "iterations": self.engine.iterations,
            "fallback_queries": self.engine.fallback_queries,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    # -- persistence -----------------------------------------------------

    @property
    def _dir(self) -> Path:
        return self.state_dir / self.session_id

    def persist(self) -> None:
        self._dir.mkdir(parents=True, exist_ok=True)
        state = {
            "session_id": self.session_id,
            "seed": self.seed,
            "n_seed": self.n_seed,
            "eval_every": self.eval_every,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "curve": self.curve,
            "engine": self.engine.to_checkpoint(),
        }
        path = self._dir / "session.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state), encoding="utf-8")
        os.replace(tmp, path)
        with open(self._dir / "log.jsonl", "w", encoding="utf-8") as fh:
            for entry in self.log:
                fh.write(json.dumps(entry, separators=(",", ":")) + "\n")

    @classmethod
    def resume(cls, session_dir: Path, dataset: Dataset,
               snapshot: EmbeddingSnapshot) -> "Session":
        state = json.loads((session_dir / "session.json").read_text(encoding="utf-8"))
        log = []
        log_path = session_dir / "log.jsonl"
        if log_path.exists():
            log = [json.loads(line) for line in log_path.read_text(encoding="utf-8").splitlines()
                   if line.strip()]
        engine = Engine.from_checkpoint(state["engine"], snapshot)
        session = cls(
            session_id=state["session_id"],
            engine=engine,
            dataset=dataset,
            state_dir=session_dir.parent,
            seed=state["seed"],
            n_seed=state["n_seed"],
            eval_every=state["eval_every"],
            created_at=state["created_at"],
            curve=state["curve"],
            log=log,
        )
        session.updated_at = state["updated_at"]
        return session

    def replay_check(self, snapshot: EmbeddingSnapshot) -> dict:
        """Drive a fresh engine through the annotation log and compare states."""
        pool = cold_start_split(self.dataset, self.n_seed, self.seed)
        fresh = Engine(snapshot, pool, EngineConfig(**_config_args(self.engine.config)))
        consistent = True
        for entry in self.log:
            result = fresh.next_query()
            if result.query_id != entry["posting_id"]:
                consistent = False
                break
            fresh.commit_label(entry["posting_id"], entry["label"])
        replayed_pending = None
        if consistent:
            if fresh.pool.unlabeled:
                replayed_pending = fresh.next_query().query_id
            consistent = fresh.pool.to_json() == self.engine.pool.to_json()
        live_pending = None
        if self.engine.pool.unlabeled:
            live_pending = self.engine.next_query().query_id
        return {
            "replay_ok": bool(consistent and replayed_pending == live_pending),
            "pending_id": live_pending,
            "replayed_pending_id": replayed_pending,
            "log_length": len(self.log),
        }


def _config_args(config: EngineConfig) -> dict:
    return {
        "n_estimators": config.n_estimators,
        "subsample_ratio": config.subsample_ratio,
        "bandwidth_doc": config.bandwidth_doc,
        "bandwidth_word": config.bandwidth_word,
        "strategy": config.strategy,
        "rng_seed": config.rng_seed,
        "learner": config.learner,
    }


def create_app(dataset: Dataset, snapshot: EmbeddingSnapshot, config: EngineConfig,
               state_dir: str | Path, n_seed: int = 50, eval_every: int = 1,
               ui_dir: Optional[str | Path] = None,
               default_session: Optional[str] = "default") -> FastAPI:
    """Build the annotation app: resumes sessions found in state_dir, then
    ensures the default session exists."""
    state_dir = Path(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="active-learning annotation service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def new_session(session_id: str, seed: int) -> Session:
        pool = cold_start_split(dataset, n_seed, seed)
        engine = Engine(snapshot, pool,
                        EngineConfig(**{**_config_args(config), "rng_seed": seed}))
        session = Session(session_id, engine, dataset, state_dir,
                          seed=seed, n_seed=n_seed, eval_every=eval_every)
        session.persist()
        return session

    for child in sorted(state_dir.iterdir()) if state_dir.exists() else []:
        if (child / "session.json").exists():
            sessions[child.name] = Session.resume(child, dataset, snapshot)
    if default_session and default_session not in sessions:
        sessions[default_session] = new_session(default_session, config.rng_seed)

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [s.status() for s in sessions.values()]}

    @app.post("/session", status_code=201)
    def create_session(req: CreateSessionRequest):
        with registry_lock:
            if req.session_id in sessions:
                raise HTTPException(status_code=409,
                                    detail=f"session {req.session_id!r} exists")
            sessions[req.session_id] = new_session(req.session_id, req.seed)
        return sessions[req.session_id].status()

    @app.get("/session/{session_id}/next")
    def next_posting(session_id: str):
        session = get_session(session_id)
        with session.lock:
            try:
                result = session.pending_query()
            except EmptyUnlabeledPool:
                raise HTTPException(status_code=409, detail={"error": "pool_exhausted"})
            posting = dataset.posting(result.query_id)
            return {
                "posting_id": posting.id,
                "text": posting.text,
                "term_spans": [list(s) for s in posting.term_spans],
                "aggregate_score": result.aggregate,
                "rank_context": {
                    "rank": 1,
                    "candidates": result.n_candidates,
                    "fallback": result.fallback,
                },
            }

    @app.post("/session/{session_id}/label")
    def label_posting(session_id: str, req: LabelRequest):
        session = get_session(session_id)
        with session.lock:
            if not session.engine.pool.unlabeled and session.engine.pending is None:
                raise HTTPException(status_code=409, detail={"error": "pool_exhausted"})
            return session.submit_label(req.posting_id, req.label)

    @app.get("/session/{session_id}/status")
    def session_status(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.status()

    @app.get("/session/{session_id}/verify")
    def session_verify(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.replay_check(snapshot)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    app.state.sessions = sessions
    return app


def highlight_segments(text: str, term_spans) -> list[tuple[str, bool]]:
    """Split text into (segment, is_term) pieces by byte spans; used by clients
    that render highlights server-side."""
    segments = []
    cursor = 0
    for start, end in term_spans:
        if start > cursor:
            segments.append((byte_slice(text, cursor, start), False))
        segments.append((byte_slice(text, start, end), True))
        cursor = end
    tail_limit = len(text.encode("utf-8"))
    if cursor < tail_limit:
        segments.append((byte_slice(text, cursor, tail_limit), False))
    return segments
