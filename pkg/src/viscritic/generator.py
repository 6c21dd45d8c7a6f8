"""Candidate generation, feedback-driven improvement, and render fan-out.

Turn 0 comes from the generation prompt at the Exported stage; later turns
come from the improvement prompt and always carry the feedback that drove
them. Rendering happens separately so batches can fan out over a worker
pool, and compile-error filtering flags records whose latest turn never
produced an image.
"""

from __future__ import annotations

from . import model
from .errors import TagParseError, VisCriticError
from .llm import ChatClient, ChatRequest
from .prompts import render_prompt
from .render import RenderSettings, RenderWorker
from .store import RecordStore
from .tagparse import parse_tagged


def parse_generation_reply(text: str) -> str:
    doc = parse_tagged(text, expected_tags=("CODE",))
    block = doc.block("CODE")
    if block.payload is None:
        raise TagParseError("CODE must carry a fenced payload")
    return block.payload.body


def parse_improvement_reply(text: str) -> str:
    doc = parse_tagged(text, expected_tags=("IMPROVED_CODE",))
    block = doc.block("IMPROVED_CODE")
    if block.payload is None:
        raise TagParseError("IMPROVED_CODE must carry a fenced payload")
    return block.payload.body


def generate_visualization(
    store: RecordStore,
    client: ChatClient,
    record_id: str,
    model_name: str,
    temperature: float = 0.0,
) -> dict:
    """Exported -> Generated with turn 0 from the generation prompt."""
    record = store.get(record_id)
    if record.get("dataset") is None or not record.get("instruction"):
        raise VisCriticError(f"record {record_id}: not exported yet")
    prompt = render_prompt(
        "generate",
        {
            "data_illustration": record["dataset"]["illustration"],
            "user_query": record["instruction"],
        },
    )
    reply = client.chat(
        ChatRequest(model=model_name, text=prompt.text, temperature=temperature, purpose="generate")
    )
    try:
        code = parse_generation_reply(reply.text)
    except TagParseError as exc:
        store.update(record_id, "mark_dropped", reason=f"generation reply unusable: {exc}")
        exc.args = (f"record {record_id}: {exc}",)
        raise
    turn = model.make_turn(0, model_name, code)
    store.advance_stage(record_id, "Generated", {"generation": turn})
    return turn


def improve_code(
    client: ChatClient,
    previous_code: str,
    feedback: str,
    illustration: str,
    query: str,
    model_name: str,
    temperature: float = 0.0,
) -> str:
    """Pure improvement call; used for stored turns and studio previews."""
    prompt = render_prompt(
        "improve",
        {
            "previous_code": previous_code,
            "feedback_for_improvement": feedback,
            "data_illustration": illustration,
            "user_query": query,
        },
    )
    reply = client.chat(
        ChatRequest(model=model_name, text=prompt.text, temperature=temperature, purpose="improve")
    )
    return parse_improvement_reply(reply.text)


def improve_visualization(
    store: RecordStore,
    client: ChatClient,
    record_id: str,
    feedback: str,
    model_name: str,
    temperature: float = 0.0,
) -> dict:
    """Append turn k+1 improving the latest turn with the given feedback."""
    record = store.get(record_id)
    turns = record["generations"]
    if not turns:
        raise VisCriticError(f"record {record_id}: no generation turn to improve")
    if not feedback:
        raise VisCriticError(f"record {record_id}: improvement needs feedback text")
    code = improve_code(
        client,
        previous_code=turns[-1]["code"],
        feedback=feedback,
        illustration=record["dataset"]["illustration"],
        query=record["instruction"],
        model_name=model_name,
        temperature=temperature,
    )
    turn = model.make_turn(len(turns), model_name, code, feedback_used=feedback)
    store.update(record_id, "add_generation_turn", turn=turn)
    return turn


# --- rendering --------------------------------------------------------------


def bundle_files_map(store: RecordStore, record: dict) -> dict[str, bytes]:
    """Exported data files laid out under data_folder/ for the renderer."""
    bundle = record.get("dataset") or {"files": []}
    return {
        f"data_folder/{f['file_name']}": store.blobs.get(f["blob_ref"])
        for f in bundle["files"]
    }


def render_instances(
    store: RecordStore,
    renderer: RenderWorker,
    settings: RenderSettings | None = None,
) -> dict:
    """Render ingested instances that have no capture yet."""
    summary = {"rendered": 0, "failed": 0, "skipped": 0}
    for record in store.query():
        if record["instance"].get("render_ref") is not None or record.get("dropped_reason"):
            summary["skipped"] += 1
            continue
        outcome = renderer.render(record["instance"]["code"], settings=settings)
        if outcome.image is None:
            reason = (
                outcome.runtime_exceptions[0]
                if outcome.runtime_exceptions
                else "render timeout"
            )
            store.update(record["id"], "mark_dropped", reason=f"instance render failed: {reason}")
            summary["failed"] += 1
            continue
        ref = store.blobs.put(outcome.image, "png")
        store.update(record["id"], "set_instance_render", render_ref=ref)
        summary["rendered"] += 1
    return summary


def render_turns(
    store: RecordStore,
    renderer: RenderWorker,
    settings: RenderSettings | None = None,
) -> dict:
    """Render generation turns that were never attempted."""
    summary = {"rendered": 0, "failed": 0, "skipped": 0}
    for record in store.query():
        if not record["generations"]:
            continue
        files = bundle_files_map(store, record)
        for turn in record["generations"]:
            attempted = turn.get("render_ref") is not None or bool(turn.get("runtime_errors"))
            if attempted:
                summary["skipped"] += 1
                continue
            outcome = renderer.render(turn["code"], files=files, settings=settings)
            if outcome.image is None:
                errors = list(outcome.runtime_exceptions) or ["render timeout"]
                store.update(
                    record["id"],
                    "set_turn_render",
                    turn_index=turn["turn_index"],
                    render_ref=None,
                    runtime_errors=errors,
                )
                summary["failed"] += 1
            else:
                ref = store.blobs.put(outcome.image, "png")
                store.update(
                    record["id"],
                    "set_turn_render",
                    turn_index=turn["turn_index"],
                    render_ref=ref,
                    runtime_errors=[],
                )
                summary["rendered"] += 1
    return summary


def render_all(
    store: RecordStore,
    renderer: RenderWorker,
    settings: RenderSettings | None = None,
) -> dict:
    instances = render_instances(store, renderer, settings)
    turns = render_turns(store, renderer, settings)
    return {"instances": instances, "turns": turns}


def filter_compile_errors(store: RecordStore) -> dict:
    """Partition generated records by whether the latest turn rendered.

    Records whose latest turn raised or never produced an image are flagged
    with a dropped reason and leave the critique flow; they stay in the
    store for provenance.
    """
    kept: list[str] = []
    dropped: list[str] = []
    for record in store.query():
        if not record["generations"]:
            continue
        latest = record["generations"][-1]
        clean = latest.get("render_ref") is not None and not latest.get("runtime_errors")
        if clean:
            kept.append(record["id"])
            continue
        dropped.append(record["id"])
        if record.get("dropped_reason") is None:
            errors = latest.get("runtime_errors") or ["no successful render"]
            store.update(record["id"], "mark_dropped", reason=f"compile error: {errors[0]}")
    return {"kept": kept, "dropped": dropped}


def scan_critique_eligibility(store: RecordStore) -> list[str]:
    """Violations of: critiqued turns must have a successful render."""
    violations = []
    for record in store.query(stage="Critiqued"):
        for i, critique in enumerate(record["critiques"]):
            turn = record["generations"][critique["target_turn"]]
            if turn.get("render_ref") is None or turn.get("runtime_errors"):
                violations.append(
                    f"{record['id']}: critique {i} targets turn "
                    f"{critique['target_turn']} without a successful render"
                )
    return violations
