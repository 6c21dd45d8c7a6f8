"""HTTP backend for the browser annotation studio.

A small REST surface over the record and task stores: list queues, fetch
per-task bundles (instruction, candidate render, reference render, model
suggestions, prior turns), accept selection / dedup / critique
submissions, and render improved-code previews on demand. Mutations
require a per-annotator bearer token; blob GETs are token-free because
refs are unguessable content hashes (so plain <img> tags work).
"""

from __future__ import annotations

import threading

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from pydantic import BaseModel

from . import model
from .curator import resolve_duplicate
from .errors import InvariantError, StageTransitionError, UnknownRecordError, VisCriticError
from .generator import bundle_files_map, improve_code
from .llm import ChatClient
from .render import RenderSettings
from .store import RecordStore
from .tasks import TaskStore
from .util import sha256_hex

_CONTENT_TYPES = {
    "png": "image/png",
    "jpg": "image/jpeg",
    "svg": "image/svg+xml",
    "csv": "text/csv",
    "json": "application/json",
    "html": "text/html; charset=utf-8",
    "txt": "text/plain; charset=utf-8",
    "bin": "application/octet-stream",
}


class SelectionBody(BaseModel):
    selected_ids: list[str]


class DedupBody(BaseModel):
    keep: bool


class FindingBody(BaseModel):
    category: str
    text: str = ""


class CritiqueBody(BaseModel):
    findings: list[FindingBody]
    suggestion: str | None = None
    target_turn: int | None = None


class PreviewBody(BaseModel):
    feedback: str


def _blob_url(ref: str | None) -> str | None:
    return None if ref is None else f"/{ref}"


def _task_summary(task: dict) -> dict:
    payload = task["payload"]
    if task["kind"] == "select_round":
        about = {
            "round_id": payload["round_id"],
            "typology_label": payload["typology_label"],
            "record_count": len(payload["record_ids"]),
        }
    elif task["kind"] == "render_dedup":
        about = {"record_id": payload["record_id"], "cluster_id": payload["cluster_id"]}
    else:
        about = {"record_id": payload["record_id"]}
    return {
        "task_id": task["task_id"],
        "kind": task["kind"],
        "status": task["status"],
        "annotator": task["annotator"],
        "created_ts": task["created_ts"],
        "about": about,
    }


def build_app(
    store: RecordStore,
    tasks: TaskStore,
    client: ChatClient | None = None,
    renderer=None,
    render_settings: RenderSettings | None = None,
    tokens: dict[str, str] | None = None,
    improve_model: str = "",
    assets_dir: str | None = None,
) -> FastAPI:
    """Wire the studio endpoints over the given stores.

    tokens maps bearer token -> annotator name; with no tokens configured
    every caller acts as "anonymous" (local single-user runs). client and
    renderer are only needed for the improved-render preview endpoint.
    assets_dir, when given, is a static frontend build mounted at "/"
    (API routes keep priority; unauthenticated, like blob GETs).
    """
    app = FastAPI(title="viscritic studio")
    preview_cache: dict[tuple[str, str], dict] = {}
    preview_lock = threading.Lock()

    def require_annotator(authorization: str | None = Header(default=None)) -> str:
        if not tokens:
            return "anonymous"
        if authorization is None or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="bearer token required")
        name = tokens.get(authorization.removeprefix("Bearer "))
        if name is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return name

    def get_task(task_id: str, kind: str | None = None) -> dict:
        try:
            task = tasks.get(task_id)
        except VisCriticError:
            raise HTTPException(status_code=404, detail=f"no task {task_id}") from None
        if kind is not None and task["kind"] != kind:
            raise HTTPException(status_code=422, detail=f"task {task_id} is not a {kind} task")
        return task

    def get_record(record_id: str) -> dict:
        try:
            return store.get(record_id)
        except UnknownRecordError:
            raise HTTPException(status_code=404, detail=f"no record {record_id}") from None

    def claim(task_id: str, annotator: str, submission: dict) -> None:
        try:
            tasks.submit(task_id, annotator, submission)
        except VisCriticError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "records": len(store), "tasks": len(tasks)}

    @app.get("/tasks")
    def list_tasks(
        kind: str | None = None,
        status: str | None = "open",
        annotator: str = Depends(require_annotator),
    ) -> list[dict]:
        if status == "all":
            status = None
        return [_task_summary(t) for t in tasks.list(kind=kind, status=status)]

    @app.get("/tasks/{task_id}")
    def task_bundle(task_id: str, annotator: str = Depends(require_annotator)) -> dict:
        task = get_task(task_id)
        payload = task["payload"]
        bundle: dict = {"task": task}
        if task["kind"] == "select_round":
            bundle["records"] = [
                {
                    "record_id": rid,
                    "render_url": _blob_url(get_record(rid)["instance"]["render_ref"]),
                }
                for rid in payload["record_ids"]
            ]
        elif task["kind"] == "render_dedup":
            candidate = get_record(payload["record_id"])
            head = get_record(payload["cluster_id"])
            bundle["candidate"] = {
                "record_id": candidate["id"],
                "render_url": _blob_url(candidate["instance"]["render_ref"]),
                "code": candidate["instance"]["code"],
            }
            bundle["head"] = {
                "record_id": head["id"],
                "render_url": _blob_url(head["instance"]["render_ref"]),
                "code": head["instance"]["code"],
            }
        else:
            record = get_record(payload["record_id"])
            turns = record["generations"]
            bundle.update(
                {
                    "record_id": record["id"],
                    "instruction": record["instruction"],
                    "persona": record["persona"],
                    "reference_render_url": _blob_url(record["instance"]["render_ref"]),
                    "candidate_render_url": _blob_url(turns[-1]["render_ref"]) if turns else None,
                    "suggestions": payload["suggestions"],
                    "defect_categories": list(model.DEFECT_CATEGORIES),
                    "turns": [
                        {
                            "turn_index": t["turn_index"],
                            "producer_model": t["producer_model"],
                            "code": t["code"],
                            "render_url": _blob_url(t["render_ref"]),
                            "runtime_errors": t["runtime_errors"],
                            "feedback_used": t["feedback_used"],
                        }
                        for t in turns
                    ],
                }
            )
        return bundle

    @app.post("/tasks/{task_id}/selection")
    def submit_selection(
        task_id: str,
        body: SelectionBody,
        annotator: str = Depends(require_annotator),
    ) -> dict:
        task = get_task(task_id, "select_round")
        round_ids = task["payload"]["record_ids"]
        selected = list(dict.fromkeys(body.selected_ids))
        unknown = [rid for rid in selected if rid not in round_ids]
        if unknown:
            raise HTTPException(status_code=422, detail=f"ids not in this round: {unknown}")
        for rid in selected:
            record = get_record(rid)
            if record["stage"] != "Filtered" or record.get("dropped_reason") is not None:
                raise HTTPException(status_code=409, detail=f"record {rid} is not selectable")
        claim(task_id, annotator, {"selected_ids": selected})
        for rid in selected:
            store.advance_stage(
                rid,
                "Selected",
                {"selected_by": annotator, "round_id": task["payload"]["round_id"]},
            )
        return {"task_id": task_id, "selected": len(selected)}

    @app.post("/tasks/{task_id}/dedup")
    def submit_dedup(
        task_id: str,
        body: DedupBody,
        annotator: str = Depends(require_annotator),
    ) -> dict:
        task = get_task(task_id, "render_dedup")
        payload = task["payload"]
        record = get_record(payload["record_id"])
        if record["stage"] != "Selected":
            raise HTTPException(status_code=409, detail=f"record {record['id']} left the dedup queue")
        claim(task_id, annotator, {"keep": body.keep})
        resolve_duplicate(store, payload["record_id"], payload["cluster_id"], body.keep, annotator)
        return {"task_id": task_id, "kept": body.keep}

    @app.post("/tasks/{task_id}/critique")
    def submit_critique(
        task_id: str,
        body: CritiqueBody,
        annotator: str = Depends(require_annotator),
    ) -> dict:
        task = get_task(task_id, "critique")
        record = get_record(task["payload"]["record_id"])
        turns = record["generations"]
        findings = [{"category": f.category, "text": f.text} for f in body.findings]
        if not findings:
            raise HTTPException(status_code=422, detail="empty critique")
        no_defect = [f for f in findings if f["category"] == "NoDefect"]
        if no_defect and len(findings) > 1:
            raise HTTPException(status_code=422, detail="NoDefect excludes defect findings")
        target = body.target_turn if body.target_turn is not None else len(turns) - 1
        if not 0 <= target < len(turns):
            raise HTTPException(status_code=422, detail=f"no generation turn {target}")
        turn = turns[target]
        if turn["render_ref"] is None or turn["runtime_errors"]:
            raise HTTPException(status_code=409, detail=f"turn {target} has no clean render to critique")
        critique = model.make_critique("human", findings, body.suggestion, target)
        try:
            model.validate_critique(critique, len(turns), "critique")
        except InvariantError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        if record["stage"] not in ("Generated", "Critiqued"):
            raise HTTPException(status_code=409, detail=f"record {record['id']} is not awaiting critique")
        claim(task_id, annotator, {"critique": critique})
        try:
            if record["stage"] == "Generated":
                store.advance_stage(record["id"], "Critiqued", {"critique": critique})
            else:
                store.update(record["id"], "add_critique", critique=critique)
        except (InvariantError, StageTransitionError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return {"task_id": task_id, "record_id": record["id"], "stage": "Critiqued"}

    @app.post("/tasks/{task_id}/preview")
    def preview_improvement(
        task_id: str,
        body: PreviewBody,
        annotator: str = Depends(require_annotator),
    ) -> dict:
        if client is None or renderer is None:
            raise HTTPException(status_code=503, detail="preview needs a gateway client and a renderer")
        task = get_task(task_id, "critique")
        record = get_record(task["payload"]["record_id"])
        if not body.feedback.strip():
            raise HTTPException(status_code=422, detail="preview needs feedback text")
        key = (record["id"], sha256_hex(body.feedback.encode("utf-8")))
        with preview_lock:
            hit = preview_cache.get(key)
        if hit is not None:
            return {**hit, "cached": True}
        code = improve_code(
            client,
            previous_code=record["generations"][-1]["code"],
            feedback=body.feedback,
            illustration=record["dataset"]["illustration"],
            query=record["instruction"],
            model_name=improve_model,
        )
        outcome = renderer.render(code, files=bundle_files_map(store, record), settings=render_settings)
        image_url = None
        if outcome.image is not None:
            image_url = _blob_url(store.blobs.put(outcome.image, "png"))
        errors = list(outcome.runtime_exceptions)
        if outcome.timed_out:
            errors.append("render timeout")
        result = {
            "record_id": record["id"],
            "feedback_hash": key[1],
            "image_url": image_url,
            "code": code,
            "errors": errors,
            "cached": False,
        }
        with preview_lock:
            preview_cache[key] = {k: v for k, v in result.items() if k != "cached"}
        return result

    @app.get("/blobs/{rest:path}")
    def serve_blob(rest: str) -> Response:
        ref = f"blobs/{rest}"
        if not store.blobs.exists(ref):
            raise HTTPException(status_code=404, detail=f"no blob {ref}")
        suffix = ref.rsplit(".", 1)[-1]
        return Response(
            content=store.blobs.get(ref),
            media_type=_CONTENT_TYPES.get(suffix, "application/octet-stream"),
        )

    if assets_dir is not None:
        from starlette.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=assets_dir, html=True), name="assets")

    return app


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
