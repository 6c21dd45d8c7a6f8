"""Domain types, validation, and the pipeline stage machine.

Records are plain JSON-shaped dicts so they serialize to the event log
without a conversion layer; this module is the single place that knows
their schema. Builders construct well-formed values, ``validate_record``
enforces every invariant and reports the offending field path.
"""

from __future__ import annotations

import secrets
from typing import Any

# Pipeline stages in transition order; a record may only advance to the
# immediate successor of its current stage.
STAGES = (
    "Ingested",
    "Filtered",
    "Selected",
    "Deduplicated",
    "Synthesized",
    "Exported",
    "Generated",
    "Critiqued",
)
STAGE_INDEX = {name: i for i, name in enumerate(STAGES)}

SPLITS = ("train", "test", "unassigned")

TYPOLOGY_LABELS = (
    "Bar",
    "Point",
    "Line",
    "Node-link",
    "Area",
    "Grid",
    "Continuous-ColorPattern",
    "Glyph",
    "Text",
)

DEFECT_CATEGORIES = (
    "InstructionCompliance",
    "VisualClarity",
    "SemanticalReadability",
    "NoDefect",
)

FILE_TYPES = (
    "csv_table",
    "json_topojson",
    "json_geojson",
    "png_image",
    "jpg_image",
    "svg_image",
)

FILTER_LABELS = (
    "Not Data Visualization",
    "Low Quality Visualization",
    "Not Static Visualization",
    "Pass",
)

EXPERTISE_LEVELS = ("Low", "Medium", "High")

# Fields each stage's advance payload must (and may) carry.
STAGE_PAYLOAD_KEYS: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "Filtered": (frozenset({"filter_verdict"}), frozenset()),
    "Selected": (frozenset({"selected_by"}), frozenset({"round_id"})),
    "Deduplicated": (frozenset({"dedup"}), frozenset()),
    "Synthesized": (
        frozenset({"instruction", "persona"}),
        frozenset({"instruction_candidates"}),
    ),
    "Exported": (frozenset({"dataset"}), frozenset({"export_validation"})),
    "Generated": (frozenset({"generation"}), frozenset()),
    "Critiqued": (frozenset({"critique"}), frozenset()),
}


def new_id() -> str:
    """Content-independent random 128-bit token rendered as hex."""
    return secrets.token_hex(16)


# ---------------------------------------------------------------------------
# Builders


def make_instance(
    source_notebook: str,
    cell_ids: list[str],
    code: str,
    instance_id: str | None = None,
    render_ref: str | None = None,
    typology_label: str | None = None,
) -> dict:
    return {
        "id": instance_id or new_id(),
        "source_notebook": source_notebook,
        "cell_ids": list(cell_ids),
        "code": code,
        "render_ref": render_ref,
        "typology_label": typology_label,
    }


def make_record(instance: dict, record_id: str | None = None) -> dict:
    """A fresh Ingested record holding only the human-created instance."""
    return {
        "id": record_id or new_id(),
        "instance": instance,
        "instruction": None,
        "persona": None,
        "dataset": None,
        "generations": [],
        "critiques": [],
        "stage": "Ingested",
        "split": "unassigned",
        "filter_verdict": None,
        "selected_by": None,
        "round_id": None,
        "dedup": None,
        "instruction_candidates": None,
        "export_validation": None,
        "dropped_reason": None,
    }


def make_turn(
    turn_index: int,
    producer_model: str,
    code: str,
    feedback_used: str | None = None,
) -> dict:
    return {
        "turn_index": turn_index,
        "producer_model": producer_model,
        "code": code,
        "render_ref": None,
        "runtime_errors": [],
        "feedback_used": feedback_used,
    }


def make_critique(
    author: str,
    findings: list[dict],
    suggestion: str | None = None,
    target_turn: int = 0,
) -> dict:
    return {
        "author": author,
        "findings": [dict(f) for f in findings],
        "suggestion": suggestion,
        "target_turn": target_turn,
    }


# ---------------------------------------------------------------------------
# Validation


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        from .errors import InvariantError

        raise InvariantError(path, msg)


def validate_instance(instance: Any, path: str = "instance") -> None:
    _require(isinstance(instance, dict), path, "must be an object")
    _require(bool(instance.get("id")), f"{path}.id", "must be non-empty")
    cell_ids = instance.get("cell_ids")
    _require(
        isinstance(cell_ids, list) and len(cell_ids) > 0,
        f"{path}.cell_ids",
        "must be a non-empty list",
    )
    _require(bool(instance.get("code")), f"{path}.code", "must be non-empty")
    label = instance.get("typology_label")
    if label is not None:
        _require(
            label in TYPOLOGY_LABELS,
            f"{path}.typology_label",
            f"unknown label {label!r}",
        )
    ref = instance.get("render_ref")
    if ref is not None:
        _require(isinstance(ref, str) and ref != "", f"{path}.render_ref", "must be a path")


def validate_persona(persona: Any, path: str = "persona") -> None:
    _require(isinstance(persona, dict), path, "must be an object")
    for key in ("user_profile", "data_vis_expertise", "usage_scenario"):
        _require(key in persona, f"{path}.{key}", "missing")
    _require(
        persona["data_vis_expertise"] in EXPERTISE_LEVELS,
        f"{path}.data_vis_expertise",
        f"must be one of {EXPERTISE_LEVELS}",
    )


def validate_filter_verdict(verdict: Any, path: str = "filter_verdict") -> None:
    _require(isinstance(verdict, dict), path, "must be an object")
    _require(isinstance(verdict.get("filtered"), bool), f"{path}.filtered", "must be a bool")
    label = verdict.get("label")
    _require(label in FILTER_LABELS, f"{path}.label", f"unknown label {label!r}")
    _require(
        verdict["filtered"] == (label != "Pass"),
        f"{path}.label",
        "filtered flag and label disagree",
    )


def validate_bundle(bundle: Any, path: str = "dataset") -> None:
    _require(isinstance(bundle, dict), path, "must be an object")
    files = bundle.get("files")
    _require(isinstance(files, list), f"{path}.files", "must be a list")
    names = set()
    for i, f in enumerate(files):
        fp = f"{path}.files[{i}]"
        _require(bool(f.get("file_name")), f"{fp}.file_name", "must be non-empty")
        _require(
            f.get("file_type") in FILE_TYPES,
            f"{fp}.file_type",
            f"unsupported file type {f.get('file_type')!r}",
        )
        _require(bool(f.get("blob_ref")), f"{fp}.blob_ref", "must reference stored bytes")
        names.add(f["file_name"])
    previews = bundle.get("previews")
    _require(isinstance(previews, list), f"{path}.previews", "must be a list")
    previewed = set()
    for i, p in enumerate(previews):
        pp = f"{path}.previews[{i}]"
        _require(p.get("file_name") in names, f"{pp}.file_name", "preview for unknown file")
        _require("preview" in p, f"{pp}.preview", "missing")
        previewed.add(p["file_name"])
    # every file needs a preview or an explicit binary-resource stub
    _require(
        names == previewed,
        f"{path}.previews",
        f"files without preview entry: {sorted(names - previewed)}",
    )
    _require(
        isinstance(bundle.get("illustration"), str),
        f"{path}.illustration",
        "must be a string",
    )


def validate_turn(turn: Any, index: int, path: str) -> None:
    _require(isinstance(turn, dict), path, "must be an object")
    _require(turn.get("turn_index") == index, f"{path}.turn_index", f"expected {index}")
    _require(bool(turn.get("producer_model")), f"{path}.producer_model", "must be non-empty")
    _require(bool(turn.get("code")), f"{path}.code", "must be non-empty")
    fb = turn.get("feedback_used")
    if index == 0:
        _require(fb is None, f"{path}.feedback_used", "turn 0 cannot carry feedback")
    else:
        _require(bool(fb), f"{path}.feedback_used", "improvement turns must carry feedback")
    _require(
        isinstance(turn.get("runtime_errors"), list),
        f"{path}.runtime_errors",
        "must be a list",
    )


def validate_critique(critique: Any, n_turns: int, path: str) -> None:
    _require(isinstance(critique, dict), path, "must be an object")
    author = critique.get("author")
    _require(
        author == "human" or (isinstance(author, str) and author.startswith("model:")),
        f"{path}.author",
        "must be 'human' or 'model:<name>'",
    )
    findings = critique.get("findings")
    _require(isinstance(findings, list), f"{path}.findings", "must be a list")
    for i, finding in enumerate(findings):
        fp = f"{path}.findings[{i}]"
        _require(
            finding.get("category") in DEFECT_CATEGORIES,
            f"{fp}.category",
            f"unknown category {finding.get('category')!r}",
        )
        _require(isinstance(finding.get("text"), str), f"{fp}.text", "must be a string")
    defect_findings = [f for f in findings if f["category"] != "NoDefect"]
    if defect_findings:
        _require(
            any(f["text"].strip() for f in defect_findings),
            f"{path}.findings",
            "defect critique needs at least one non-empty finding text",
        )
    else:
        # no-defect verdict: a preference suggestion is mandatory
        _require(
            bool(critique.get("suggestion") and critique["suggestion"].strip()),
            f"{path}.suggestion",
            "suggestion required for a no-defect critique",
        )
    target = critique.get("target_turn")
    _require(
        isinstance(target, int) and 0 <= target < n_turns,
        f"{path}.target_turn",
        f"must index into generations (0..{n_turns - 1})",
    )


def validate_record(record: Any) -> None:
    """Check every record-level invariant; raises InvariantError on the first."""
    _require(isinstance(record, dict), "record", "must be an object")
    _require(bool(record.get("id")), "id", "must be non-empty")
    _require(record.get("stage") in STAGES, "stage", f"unknown stage {record.get('stage')!r}")
    _require(record.get("split") in SPLITS, "split", f"unknown split {record.get('split')!r}")
    validate_instance(record.get("instance"))

    if record.get("persona") is not None:
        validate_persona(record["persona"])
    if record.get("filter_verdict") is not None:
        validate_filter_verdict(record["filter_verdict"])
    if record.get("dataset") is not None:
        validate_bundle(record["dataset"])

    generations = record.get("generations")
    _require(isinstance(generations, list), "generations", "must be a list")
    critiques = record.get("critiques")
    _require(isinstance(critiques, list), "critiques", "must be a list")

    # quintuplet discipline: critiques => generations => dataset => instruction
    if critiques:
        _require(bool(generations), "critiques", "quintuplet discipline: critiques require generations")
    if generations:
        _require(
            record.get("dataset") is not None,
            "generations",
            "quintuplet discipline: generations require a dataset",
        )
    if record.get("dataset") is not None:
        _require(
            bool(record.get("instruction")),
            "dataset",
            "quintuplet discipline: a dataset requires an instruction",
        )

    for i, turn in enumerate(generations):
        validate_turn(turn, i, f"generations[{i}]")
    for i, critique in enumerate(critiques):
        validate_critique(critique, len(generations), f"critiques[{i}]")


def validate_evaluation(result: Any, path: str = "evaluation") -> None:
    _require(isinstance(result, dict), path, "must be an object")
    kind = result.get("kind")
    _require(kind in ("likert", "pairwise"), f"{path}.kind", "must be likert or pairwise")
    likert, pairwise = result.get("likert"), result.get("pairwise")
    _require(
        (likert is None) != (pairwise is None),
        path,
        "exactly one of likert/pairwise must be populated",
    )
    if kind == "likert":
        _require(likert is not None, f"{path}.likert", "missing for kind=likert")
        score = likert.get("score")
        _require(
            isinstance(score, int) and 1 <= score <= 5,
            f"{path}.likert.score",
            "score must be an integer in [1, 5]",
        )
        _require(bool(likert.get("judge_model")), f"{path}.likert.judge_model", "missing")
    else:
        _require(pairwise is not None, f"{path}.pairwise", "missing for kind=pairwise")
        _require(
            pairwise.get("verdict") in ("A", "B", "Tie"),
            f"{path}.pairwise.verdict",
            "must be A, B, or Tie",
        )
    subject = result.get("subject")
    _require(isinstance(subject, dict) and bool(subject.get("record_id")), f"{path}.subject", "missing record ref")


# ---------------------------------------------------------------------------
# Stage machine


def check_transition(current: str, new: str) -> None:
    from .errors import StageTransitionError

    if new not in STAGE_INDEX:
        raise StageTransitionError(f"unknown stage {new!r}")
    if STAGE_INDEX[new] != STAGE_INDEX[current] + 1:
        raise StageTransitionError(
            f"illegal transition {current} -> {new}; next legal stage is "
            f"{STAGES[STAGE_INDEX[current] + 1] if STAGE_INDEX[current] + 1 < len(STAGES) else 'none'}"
        )


def check_stage_payload(stage: str, payload: dict) -> None:
    from .errors import StageTransitionError

    required, optional = STAGE_PAYLOAD_KEYS[stage]
    keys = set(payload)
    missing = required - keys
    if missing:
        raise StageTransitionError(f"stage {stage} payload missing required field(s): {sorted(missing)}")
    unknown = keys - required - optional
    if unknown:
        raise StageTransitionError(f"stage {stage} payload has unknown field(s): {sorted(unknown)}")


def apply_stage_payload(record: dict, stage: str, payload: dict) -> dict:
    """Fold a stage-advance payload into a record copy (the event-fold step)."""
    out = dict(record)
    out["stage"] = stage
    if stage == "Filtered":
        out["filter_verdict"] = payload["filter_verdict"]
    elif stage == "Selected":
        out["selected_by"] = payload["selected_by"]
        out["round_id"] = payload.get("round_id")
    elif stage == "Deduplicated":
        out["dedup"] = payload["dedup"]
    elif stage == "Synthesized":
        out["instruction"] = payload["instruction"]
        out["persona"] = payload["persona"]
        out["instruction_candidates"] = payload.get("instruction_candidates")
    elif stage == "Exported":
        out["dataset"] = payload["dataset"]
        out["export_validation"] = payload.get("export_validation")
    elif stage == "Generated":
        out["generations"] = list(record["generations"]) + [payload["generation"]]
    elif stage == "Critiqued":
        out["critiques"] = list(record["critiques"]) + [payload["critique"]]
    return out
