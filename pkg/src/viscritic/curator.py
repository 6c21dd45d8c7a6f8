"""Quality funnel over ingested instances.

filter_record and classify_record send the rendered image through the chat
gateway and fold the parsed verdicts into the record store. Dedup runs
locally over simhash fingerprints: auto-kept heads advance, near-duplicate
members stay behind for the manual render-review queue. Selection rounds
batch classified records per typology label for the annotation studio.
"""

from __future__ import annotations

from .errors import PayloadError, VisCriticError
from .llm import ChatClient, ChatRequest
from .model import FILTER_LABELS, TYPOLOGY_LABELS
from .prompts import render_prompt
from .simhash import SimhashIndex, simhash64
from .store import RecordStore
from .tagparse import parse_json_payload, parse_tagged

REJECTION_LABELS = tuple(label for label in FILTER_LABELS if label != "Pass")
DEFAULT_ROUND_SIZE = 50


def _with_record_id(record_id: str):
    """Context manager stamping the record id onto pipeline errors."""

    class _Stamp:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if isinstance(exc, VisCriticError):
                exc.args = (f"record {record_id}: {exc}",)
            return False

    return _Stamp()


def parse_filter_reply(text: str) -> dict:
    """Reply text -> verdict dict; the filtered flag decides, Pass otherwise."""
    doc = parse_tagged(text, expected_tags=("FILTERING_RESULT",))
    payload = parse_json_payload(doc.block("FILTERING_RESULT"))
    if not isinstance(payload, dict) or not isinstance(payload.get("Filtered"), bool):
        raise PayloadError("FILTERING_RESULT must carry a boolean Filtered field")
    rationale = ""
    if "THINKING" in doc:
        block = doc.block("THINKING")
        rationale = (block.payload.body if block.payload else block.text) or ""
    if not payload["Filtered"]:
        return {"filtered": False, "label": "Pass", "rationale": rationale}
    label = payload.get("Label")
    if label not in REJECTION_LABELS:
        raise PayloadError(f"unknown label {label!r}")
    return {"filtered": True, "label": label, "rationale": rationale}


def parse_classification_reply(text: str) -> str:
    doc = parse_tagged(text, expected_tags=("CLASSIFICATION_RESULT",))
    payload = parse_json_payload(doc.block("CLASSIFICATION_RESULT"))
    label = payload.get("Label") if isinstance(payload, dict) else None
    if label not in TYPOLOGY_LABELS:
        raise PayloadError(f"unknown label {label!r}")
    return label


def _instance_image(store: RecordStore, record: dict) -> bytes:
    render_ref = record["instance"].get("render_ref")
    if not render_ref:
        raise VisCriticError("instance has no render to inspect")
    return store.blobs.get(render_ref)


def filter_record(
    store: RecordStore,
    client: ChatClient,
    record_id: str,
    model_name: str,
    temperature: float = 0.0,
) -> dict:
    """Run the filtering prompt over one Ingested record; stage -> Filtered."""
    with _with_record_id(record_id):
        record = store.get(record_id)
        image = _instance_image(store, record)
        prompt = render_prompt("filter", {"html_code": record["instance"]["code"]})
        request = ChatRequest(
            model=model_name,
            text=prompt.text,
            temperature=temperature,
            images=(image,),
            purpose="filter",
        )
        verdict = parse_filter_reply(client.chat(request).text)
        store.advance_stage(record_id, "Filtered", {"filter_verdict": verdict})
        return verdict


def classify_record(
    store: RecordStore,
    client: ChatClient,
    record_id: str,
    model_name: str,
    temperature: float = 0.0,
) -> str:
    """Typology-classify one record that passed filtering."""
    with _with_record_id(record_id):
        record = store.get(record_id)
        verdict = record.get("filter_verdict")
        if verdict is None or verdict["filtered"]:
            raise VisCriticError("classification requires a passed filter verdict")
        image = _instance_image(store, record)
        prompt = render_prompt("classify", {})
        request = ChatRequest(
            model=model_name,
            text=prompt.text,
            temperature=temperature,
            images=(image,),
            purpose="classify",
        )
        label = parse_classification_reply(client.chat(request).text)
        store.update(record_id, "set_typology", label=label)
        return label


def dedup_records(store: RecordStore, threshold: int = 3, shingle: int = 1) -> dict:
    """Greedy simhash dedup over Selected records.

    Heads advance to Deduplicated immediately; members stay Selected and are
    reported as pending manual render review. Records that already passed
    dedup seed the index, so a re-run never promotes a known near-duplicate.
    """
    index = SimhashIndex(threshold)
    for record in store.query():
        if record.get("dedup") is not None and record.get("dropped_reason") is None:
            fingerprint = simhash64(record["instance"]["code"], shingle=shingle)
            index.add(record["id"], fingerprint)

    kept: list[str] = []
    clusters: dict[str, list[str]] = {}
    pending: list[dict] = []
    for record in store.query(stage="Selected"):
        if record.get("dropped_reason") is not None:
            continue
        fingerprint = simhash64(record["instance"]["code"], shingle=shingle)
        head = index.nearest_within(fingerprint)
        if head is None:
            index.add(record["id"], fingerprint)
            store.advance_stage(
                record["id"],
                "Deduplicated",
                {"dedup": {"cluster_id": record["id"], "role": "head", "decided_by": "auto"}},
            )
            kept.append(record["id"])
            clusters[record["id"]] = []
        else:
            clusters.setdefault(head, []).append(record["id"])
            pending.append({"id": record["id"], "cluster_id": head})
    return {"kept": kept, "clusters": clusters, "pending_review": pending}


def resolve_duplicate(
    store: RecordStore,
    record_id: str,
    cluster_id: str,
    keep: bool,
    decided_by: str,
) -> None:
    """Fold one manual render-review decision for a pending near-duplicate."""
    if keep:
        store.advance_stage(
            record_id,
            "Deduplicated",
            {"dedup": {"cluster_id": cluster_id, "role": "member", "decided_by": decided_by}},
        )
    else:
        store.update(record_id, "mark_dropped", reason=f"duplicate of {cluster_id}")


def build_selection_rounds(records: list[dict], round_size: int = DEFAULT_ROUND_SIZE) -> list[dict]:
    """Per-typology batches of at most round_size records, append order kept.

    Each round is label-homogeneous; labels emit in typology-list order so
    the output is deterministic for a given record list.
    """
    if round_size < 1:
        raise VisCriticError(f"round size must be positive, got {round_size}")
    by_label: dict[str, list[str]] = {label: [] for label in TYPOLOGY_LABELS}
    for record in records:
        label = record["instance"].get("typology_label")
        if label is None:
            raise VisCriticError(f"record {record['id']}: not classified yet")
        by_label[label].append(record["id"])
    rounds = []
    for label in TYPOLOGY_LABELS:
        ids = by_label[label]
        for start in range(0, len(ids), round_size):
            chunk = ids[start : start + round_size]
            rounds.append(
                {
                    "round_id": f"round-{label}-{start // round_size}",
                    "typology_label": label,
                    "record_ids": chunk,
                }
            )
    return rounds
