"""Instruction synthesis, export instrumentation, and export validation.

The record gains its dataset only at the Exported stage, but the
instruction prompt already needs a data illustration. Synthesis therefore
instruments and harvests exports transiently to build that illustration;
the export stage repeats the same calls (the chat cache and deterministic
render make the repeat cheap and byte-stable) and persists the bundle.
"""

from __future__ import annotations

import base64
import random

from .errors import PayloadError, VisCriticError
from .llm import ChatClient, ChatRequest
from .model import EXPERTISE_LEVELS, FILE_TYPES
from .preview import build_illustration, build_preview
from .prompts import render_prompt
from .render import RenderSettings, RenderWorker, visual_similarity
from .store import RecordStore
from .tagparse import parse_json_payload, parse_tagged

EXPORT_FOLDER = "data_folder"
DEFAULT_SIMILARITY_THRESHOLD = 0.95


# --- reply parsing ---------------------------------------------------------


def parse_instruction_batch(text: str) -> list[dict]:
    """SUBSECTION1_RESULT_LIST -> [{persona, query}]; malformed items dropped."""
    doc = parse_tagged(text, expected_tags=("SUBSECTION1_RESULT_LIST",))
    payload = parse_json_payload(doc.block("SUBSECTION1_RESULT_LIST"))
    if not isinstance(payload, list):
        raise PayloadError("SUBSECTION1_RESULT_LIST must be a json list")
    items = []
    for entry in payload:
        if not isinstance(entry, dict):
            continue
        profile = entry.get("user_profile")
        expertise = entry.get("data_vis_expertise")
        scenario = entry.get("usage_scenario")
        query = entry.get("query")
        if not (profile and scenario and query) or expertise not in EXPERTISE_LEVELS:
            continue
        items.append(
            {
                "persona": {
                    "user_profile": profile,
                    "data_vis_expertise": expertise,
                    "usage_scenario": scenario,
                },
                "query": query,
            }
        )
    if not items:
        raise PayloadError("no usable persona/query items in reply")
    return items


def parse_export_reply(text: str) -> tuple[list[dict], str]:
    """Export reply -> (planned files, instrumented html)."""
    doc = parse_tagged(text, expected_tags=("SUBSECTION1_PLAN", "SUBSECTION2_EDITED_CODE"))
    plan = parse_json_payload(doc.block("SUBSECTION1_PLAN"))
    if not isinstance(plan, dict) or not isinstance(plan.get("file_list"), list):
        raise PayloadError("SUBSECTION1_PLAN must carry a file_list")
    files = []
    seen = set()
    for entry in plan["file_list"]:
        if not isinstance(entry, dict) or not entry.get("file_name"):
            raise PayloadError("plan entry without a file_name")
        name = entry["file_name"]
        file_type = entry.get("file_type")
        if file_type not in FILE_TYPES:
            raise PayloadError(f"unsupported file type {file_type!r}")
        if name in seen:
            raise PayloadError(f"duplicate planned file {name!r}")
        seen.add(name)
        files.append(
            {
                "file_name": name,
                "file_type": file_type,
                "description": entry.get("description", ""),
            }
        )
    if not files:
        raise PayloadError("empty export plan")
    block = doc.block("SUBSECTION2_EDITED_CODE")
    if block.payload is None:
        raise PayloadError("SUBSECTION2_EDITED_CODE must carry a fenced payload")
    return files, block.payload.body


def parse_rewrite_reply(text: str) -> str:
    doc = parse_tagged(text, expected_tags=("EDITED_CODE",))
    block = doc.block("EDITED_CODE")
    if block.payload is None:
        raise PayloadError("EDITED_CODE must carry a fenced payload")
    return block.payload.body


def choose_instruction(candidates: list[dict], rng: random.Random | None = None) -> dict:
    """One instruction per pipeline pass, picked uniformly from the batch."""
    rng = rng or random.Random()
    return candidates[rng.randrange(len(candidates))]


# --- gateway operations ----------------------------------------------------


def instrument_export(client: ChatClient, code: str, model_name: str) -> dict:
    """Ask the model to add export-array pushes; returns {plan, code}."""
    prompt = render_prompt("export", {"html_file": code})
    reply = client.chat(
        ChatRequest(model=model_name, text=prompt.text, purpose="export")
    )
    plan, instrumented = parse_export_reply(reply.text)
    for planned in plan:
        if planned["file_name"] not in instrumented:
            raise PayloadError(
                f"planned file {planned['file_name']!r} never appears in the edited code"
            )
    return {"plan": plan, "code": instrumented}


def harvest_exports(
    renderer: RenderWorker,
    instrumented_code: str,
    plan: list[dict],
    settings: RenderSettings | None = None,
) -> list[dict]:
    """Run the instrumented document and decode its export-array entries."""
    outcome = renderer.render(instrumented_code, settings=settings)
    if outcome.timed_out:
        raise VisCriticError("export run timed out")
    if outcome.runtime_exceptions:
        raise VisCriticError(
            f"runtime error during export run: {outcome.runtime_exceptions[0]}"
        )
    if not outcome.exported_data:
        raise VisCriticError("no exports: document pushed nothing onto the export array")
    by_plan = {entry["file_name"]: entry for entry in plan}
    harvested = {}
    for entry in outcome.exported_data:
        name = entry.get("filename")
        if name not in by_plan:
            raise VisCriticError(f"unplanned export {name!r}")
        if name in harvested:
            raise VisCriticError(f"export {name!r} pushed twice")
        try:
            data = base64.b64decode(entry.get("data", ""), validate=True)
        except (ValueError, TypeError) as exc:
            raise VisCriticError(f"export {name!r} is not valid base64") from exc
        harvested[name] = data
    missing = [name for name in by_plan if name not in harvested]
    if missing:
        raise VisCriticError(f"planned files never exported: {missing}")
    return [{**planned, "data": harvested[planned["file_name"]]} for planned in plan]


def harvest_bundle_parts(
    client: ChatClient,
    renderer: RenderWorker,
    code: str,
    model_name: str,
    settings: RenderSettings | None = None,
) -> dict:
    """Instrument + run + preview; shared by synthesis and export stages."""
    instrumented = instrument_export(client, code, model_name)
    files = harvest_exports(renderer, instrumented["code"], instrumented["plan"], settings)
    previews = [
        {"file_name": f["file_name"], "preview": build_preview(f["file_type"], f["data"])}
        for f in files
    ]
    meta = [
        {key: f[key] for key in ("file_name", "file_type", "description")} for f in files
    ]
    return {
        "files": files,
        "meta": meta,
        "previews": previews,
        "illustration": build_illustration(meta, previews),
    }


def validate_export(
    client: ChatClient,
    renderer: RenderWorker,
    code: str,
    files: list[dict],
    illustration: str,
    model_name: str,
    settings: RenderSettings | None = None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> dict:
    """Rewrite the document to read exported files and compare renders."""
    reference = renderer.render(code, settings=settings)
    if reference.image is None:
        raise VisCriticError("reference document failed to render")
    prompt = render_prompt(
        "verify_export",
        {
            "reference_html_file_for_visualization": code,
            "multi_src_data_illustration": illustration,
            "input_data_folder_name": EXPORT_FOLDER,
        },
    )
    reply = client.chat(
        ChatRequest(model=model_name, text=prompt.text, purpose="verify_export")
    )
    rewritten = parse_rewrite_reply(reply.text)
    file_map = {f"{EXPORT_FOLDER}/{f['file_name']}": f["data"] for f in files}
    candidate = renderer.render(rewritten, files=file_map, settings=settings)
    if candidate.image is None:
        raise VisCriticError(
            "rewritten document failed to render: "
            + (candidate.runtime_exceptions[0] if candidate.runtime_exceptions else "timeout")
        )
    similarity = visual_similarity(reference.image, candidate.image)
    return {
        "valid": similarity >= threshold,
        "rewritten_code": rewritten,
        "similarity": similarity,
        "threshold": threshold,
    }


# --- store orchestration ---------------------------------------------------


def synthesize_record(
    store: RecordStore,
    client: ChatClient,
    renderer: RenderWorker,
    record_id: str,
    model_name: str,
    settings: RenderSettings | None = None,
    rng: random.Random | None = None,
) -> dict:
    """Deduplicated -> Synthesized with a persona-grounded instruction."""
    record = store.get(record_id)
    code = record["instance"]["code"]
    render_ref = record["instance"].get("render_ref")
    if not render_ref:
        raise VisCriticError(f"record {record_id}: instance has no render")
    image = store.blobs.get(render_ref)
    parts = harvest_bundle_parts(client, renderer, code, model_name, settings)
    prompt = render_prompt(
        "instruct", {"vis_code": code, "data_illustration": parts["illustration"]}
    )
    reply = client.chat(
        ChatRequest(model=model_name, text=prompt.text, images=(image,), purpose="instruct")
    )
    candidates = parse_instruction_batch(reply.text)
    chosen = choose_instruction(candidates, rng)
    store.advance_stage(
        record_id,
        "Synthesized",
        {
            "instruction": chosen["query"],
            "persona": chosen["persona"],
            "instruction_candidates": candidates,
        },
    )
    return chosen


def export_record(
    store: RecordStore,
    client: ChatClient,
    renderer: RenderWorker,
    record_id: str,
    model_name: str,
    settings: RenderSettings | None = None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> dict:
    """Synthesized -> Exported with the harvested, validated dataset bundle."""
    record = store.get(record_id)
    code = record["instance"]["code"]
    parts = harvest_bundle_parts(client, renderer, code, model_name, settings)
    validation = validate_export(
        client,
        renderer,
        code,
        parts["files"],
        parts["illustration"],
        model_name,
        settings,
        threshold,
    )
    stored_files = []
    for f in parts["files"]:
        suffix = f["file_name"].rsplit(".", 1)[-1] if "." in f["file_name"] else "bin"
        stored_files.append(
            {
                "file_name": f["file_name"],
                "file_type": f["file_type"],
                "description": f["description"],
                "blob_ref": store.blobs.put(f["data"], suffix),
            }
        )
    bundle = {
        "files": stored_files,
        "previews": parts["previews"],
        "illustration": parts["illustration"],
    }
    rewritten_ref = store.blobs.put(validation["rewritten_code"].encode("utf-8"), "html")
    payload = {
        "dataset": bundle,
        "export_validation": {
            "valid": validation["valid"],
            "similarity": validation["similarity"],
            "threshold": validation["threshold"],
            "rewritten_ref": rewritten_ref,
        },
    }
    store.advance_stage(record_id, "Exported", payload)
    return payload
