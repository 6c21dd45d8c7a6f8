"""Critique-quality evaluation and training-set export.

Likert judging sends the scoring rubric with the candidate render and
both critiques to a judge model; pairwise trials present two critiques
in seeded random order to a rater and de-randomize the verdict. Metrics
aggregate stored evaluation results; the training exporter serializes
critiqued records into chat-style JSONL for fine-tuning consumers.
"""

from __future__ import annotations

import random
import re
import statistics
from pathlib import Path

from .errors import PayloadError, TagParseError, VisCriticError
from .llm import ChatClient, ChatRequest
from .prompts import render_prompt
from .store import RecordStore
from .tagparse import parse_final_score
from .util import canonical_json, sha256_hex

HIGH_SCORE_MIN = 3
SCORE_VALUES = (1, 2, 3, 4, 5)

_RETRY_SUFFIX = (
    "\n\nEnd your reply with a line of the form 'Final Score: N' "
    "where N is an integer from 1 to 5."
)


# --- critique serialization -----------------------------------------------------


def serialize_critique(critique: dict) -> str:
    """Category-prefixed findings, then the suggestion, one per line."""
    lines = []
    for finding in critique["findings"]:
        text = finding["text"].strip()
        lines.append(f"{finding['category']}: {text}" if text else finding["category"])
    suggestion = (critique.get("suggestion") or "").strip()
    if suggestion:
        lines.append(f"Suggestion: {suggestion}")
    return "\n".join(lines)


def critique_input_text(record: dict) -> str:
    """The user-side text a critic sees: instruction plus data illustration."""
    return f"{record['instruction']}\n\n{record['dataset']['illustration']}"


def _target_turn(record: dict, critique: dict) -> dict:
    turn = record["generations"][critique["target_turn"]]
    if turn["render_ref"] is None:
        raise VisCriticError(
            f"record {record['id']}: critique targets turn {critique['target_turn']} "
            "which has no render"
        )
    return turn


# --- Likert judging ---------------------------------------------------------------


def judge_likert(
    client: ChatClient,
    instruction: str,
    render: bytes,
    ground_truth: str,
    candidate: str,
    judge_model: str,
    record_id: str,
    candidate_source: str = "model",
    temperature: float = 0.0,
) -> dict:
    """Score one candidate critique 1..5 against the human ground truth.

    An unparseable reply is retried once with an explicit format reminder
    (the changed prompt also defeats the response cache); a second failure
    flags the result instead of raising, so batch runs can report coverage.
    """
    prompt = render_prompt(
        "likert_judge",
        {
            "user_instruction": instruction,
            "ground_truth_feedback": ground_truth,
            "candidate_feedback": candidate,
        },
    )
    subject = {"record_id": record_id, "candidate_source": candidate_source}
    text = prompt.text
    last_error = ""
    for attempt in (1, 2):
        reply = client.chat(
            ChatRequest(
                model=judge_model,
                text=text,
                temperature=temperature,
                images=(render,),
                purpose="judge",
            )
        )
        try:
            score = parse_final_score(reply.text)
        except TagParseError as exc:
            last_error = str(exc)
            text = prompt.text + _RETRY_SUFFIX
            continue
        return {
            "kind": "likert",
            "subject": subject,
            "likert": {
                "score": score,
                "judge_model": judge_model,
                "rationale": reply.text,
            },
            "flagged": False,
            "attempts": attempt,
        }
    return {
        "kind": "likert",
        "subject": subject,
        "likert": None,
        "flagged": True,
        "error": last_error,
        "attempts": 2,
    }


def predict_critique(
    client: ChatClient,
    store: RecordStore,
    record: dict,
    model_name: str,
) -> str:
    """Ask a critic model for feedback on a record's critiqued turn.

    Uses the same input composition as the training export, so a
    fine-tuned critic is queried exactly as it was trained. Decoding is
    pinned to temperature 0 by gateway policy.
    """
    critique = record["critiques"][0]
    turn = _target_turn(record, critique)
    reply = client.chat(
        ChatRequest(
            model=model_name,
            text=critique_input_text(record),
            temperature=0.0,
            images=(store.blobs.get(turn["render_ref"]),),
            purpose="critique_predict",
        )
    )
    return reply.text


def judge_records(
    store: RecordStore,
    client: ChatClient,
    judge_model: str,
    candidates: dict[str, str],
    candidate_source: str = "model",
    split: str | None = None,
    temperature: float = 0.0,
) -> dict:
    """Judge candidate critiques for Critiqued records; store clean results.

    candidates maps record id -> candidate feedback text. Flagged results
    are excluded from the store and reported, so aggregates declare their
    denominator.
    """
    judged, flagged = [], []
    for record in store.query(stage="Critiqued", split=split):
        candidate = candidates.get(record["id"])
        if candidate is None or record.get("dropped_reason") is not None:
            continue
        critique = record["critiques"][0]
        turn = _target_turn(record, critique)
        result = judge_likert(
            client,
            instruction=record["instruction"],
            render=store.blobs.get(turn["render_ref"]),
            ground_truth=serialize_critique(critique),
            candidate=candidate,
            judge_model=judge_model,
            record_id=record["id"],
            candidate_source=candidate_source,
            temperature=temperature,
        )
        if result["flagged"]:
            flagged.append({"record_id": record["id"], "error": result["error"]})
        else:
            store.append_evaluation(
                {"kind": "likert", "subject": result["subject"], "likert": result["likert"], "pairwise": None}
            )
            judged.append(result)
    return {"judged": len(judged), "flagged": len(flagged), "flagged_records": flagged}


# --- pairwise protocol ---------------------------------------------------------------


def present_pairwise(feedback_1: str, feedback_2: str, seed: int) -> dict:
    """Render the comparison instruction with seeded A/B order randomization."""
    swapped = random.Random(seed).random() < 0.5
    first, second = (feedback_2, feedback_1) if swapped else (feedback_1, feedback_2)
    prompt = render_prompt("pairwise", {"feedback_1": first, "feedback_2": second})
    return {"text": prompt.text, "swapped": swapped, "seed": seed}


def normalize_verdict(raw: str) -> str:
    verdict = raw.strip().rstrip(".:").strip().upper()
    if verdict in ("A", "B"):
        return verdict
    if verdict in ("C", "TIE"):
        return "Tie"
    raise PayloadError(f"pairwise verdict must be A, B, or Tie, got {raw!r}")


def resolve_pairwise(presentation: dict, raw_verdict: str) -> dict:
    """De-randomize a rater's verdict back to the stable feedback sides."""
    verdict = normalize_verdict(raw_verdict)
    if verdict == "Tie":
        outcome = "tie"
    elif (verdict == "A") == presentation["swapped"]:
        outcome = "feedback_2"
    else:
        outcome = "feedback_1"
    return {
        "verdict": verdict,
        "outcome": outcome,
        "swapped": presentation["swapped"],
        "seed": presentation["seed"],
    }


_VERDICT_TOKEN_RE = re.compile(r"\b(?:(A|B|C)|[Tt]ie)\b")


def parse_verdict_reply(text: str) -> str:
    """Pull the rater's choice out of a free-text reply; last token wins."""
    matches = _VERDICT_TOKEN_RE.findall(text or "")
    if not matches:
        raise PayloadError("no A/B/Tie verdict found in reply")
    return normalize_verdict(matches[-1] or "Tie")


def _record_seed(record_id: str, seed_base: int) -> int:
    return seed_base ^ int(sha256_hex(record_id.encode())[:8], 16)


def run_pairwise(
    store: RecordStore,
    client: ChatClient,
    rater_model: str,
    sides: tuple[str, str],
    candidates_1: dict[str, str],
    candidates_2: dict[str, str],
    split: str | None = None,
    seed_base: int = 0,
    temperature: float = 0.0,
) -> dict:
    """Run seeded-order pairwise trials over a split and store the verdicts.

    Presentation order comes from a per-record seed, so re-runs show each
    rater the same ordering. Records missing either side are skipped.
    """
    trials, skipped = 0, []
    for record in store.query(stage="Critiqued", split=split):
        rid = record["id"]
        if record.get("dropped_reason") is not None:
            continue
        feedback_1, feedback_2 = candidates_1.get(rid), candidates_2.get(rid)
        if feedback_1 is None or feedback_2 is None:
            skipped.append(rid)
            continue
        presentation = present_pairwise(feedback_1, feedback_2, _record_seed(rid, seed_base))
        reply = client.chat(
            ChatRequest(
                model=rater_model,
                text=presentation["text"],
                temperature=temperature,
                purpose="pairwise",
            )
        )
        verdict = parse_verdict_reply(reply.text)
        record_pairwise(store, rid, presentation, verdict, sides, rater=f"model:{rater_model}")
        trials += 1
    return {"trials": trials, "skipped": skipped}


def record_pairwise(
    store: RecordStore,
    record_id: str,
    presentation: dict,
    raw_verdict: str,
    sides: tuple[str, str],
    rater: str = "human",
) -> dict:
    """Store one de-randomized pairwise verdict for a record."""
    resolved = resolve_pairwise(presentation, raw_verdict)
    result = {
        "kind": "pairwise",
        "subject": {"record_id": record_id, "sides": list(sides)},
        "likert": None,
        "pairwise": {**resolved, "rater": rater},
    }
    store.append_evaluation(result)
    return result


# --- aggregation ------------------------------------------------------------------------


def aggregate(results: list[dict]) -> dict:
    """Mean/high-rate/histogram for Likert plus win/tie/loss per opponent pair."""
    likert_scores = [r["likert"]["score"] for r in results if r["kind"] == "likert"]
    pairwise_results = [r for r in results if r["kind"] == "pairwise"]
    report: dict = {"empty": not results, "likert": None, "pairwise": {}}
    if likert_scores:
        histogram = {value: likert_scores.count(value) for value in SCORE_VALUES}
        report["likert"] = {
            "count": len(likert_scores),
            "mean": statistics.fmean(likert_scores),
            "high_rate": sum(1 for s in likert_scores if s >= HIGH_SCORE_MIN) / len(likert_scores),
            "histogram": histogram,
        }
    by_pair: dict[str, list[dict]] = {}
    for result in pairwise_results:
        sides = result["subject"].get("sides") or ["feedback_1", "feedback_2"]
        by_pair.setdefault(f"{sides[0]} vs {sides[1]}", []).append(result)
    for pair, entries in by_pair.items():
        outcomes = [e["pairwise"]["outcome"] for e in entries]
        n = len(outcomes)
        report["pairwise"][pair] = {
            "count": n,
            "win": outcomes.count("feedback_1") / n,
            "tie": outcomes.count("tie") / n,
            "loss": outcomes.count("feedback_2") / n,
        }
    return report


def format_report(report: dict) -> str:
    """Human-readable rendering of an aggregate() result."""
    if report["empty"]:
        return "No evaluation results.\n"
    lines = []
    likert = report["likert"]
    if likert:
        lines.append("Likert judging")
        lines.append(f"  results: {likert['count']}")
        lines.append(f"  mean score: {likert['mean']:.3f}")
        lines.append(f"  high rate (>= {HIGH_SCORE_MIN}): {likert['high_rate']:.1%}")
        marks = " ".join(f"{value}:{likert['histogram'][value]}" for value in SCORE_VALUES)
        lines.append(f"  histogram: {marks}")
    for pair, stats in report["pairwise"].items():
        lines.append(f"Pairwise {pair} ({stats['count']} trials)")
        lines.append(
            f"  win {stats['win']:.1%} / tie {stats['tie']:.1%} / loss {stats['loss']:.1%}"
        )
    return "\n".join(lines) + "\n"


# --- ablation slicing ------------------------------------------------------------------


def ablation_slices(records: list, sizes: list[int], seed: int) -> dict:
    """Nested seeded subsets so size is the only variable across slices."""
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise VisCriticError(f"slice sizes must be non-decreasing, got {sizes}")
    if sizes and sizes[-1] > len(records):
        raise VisCriticError(f"slice size {sizes[-1]} exceeds {len(records)} records")
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    return {"seed": seed, "sizes": list(sizes), "slices": [shuffled[:k] for k in sizes]}


# --- training export ----------------------------------------------------------------------


def training_example(record: dict) -> dict:
    """One chat-style example: instruction+illustration in, critique out."""
    critique = record["critiques"][0]
    turn = _target_turn(record, critique)
    return {
        "id": record["id"],
        "messages": [
            {"role": "user", "content": critique_input_text(record)},
            {"role": "assistant", "content": serialize_critique(critique)},
        ],
        "images": [turn["render_ref"]],
    }


def export_training_set(store: RecordStore, split: str, out_path: str | Path) -> dict:
    """Write one JSONL line per critiqued record in the split.

    Lines are canonical JSON in append order, so re-exports are
    byte-identical. Image paths are store-relative.
    """
    out_path = Path(out_path)
    examples = []
    for record in store.query(stage="Critiqued", split=split):
        if record.get("dropped_reason") is not None:
            continue
        examples.append(training_example(record))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(canonical_json(example) + "\n")
    return {"written": len(examples), "path": str(out_path)}
