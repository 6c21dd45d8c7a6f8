"""Annotation task queues backing the critique studio.

Tasks are a thin coordination layer over the record store: each task
names the records an annotator works on, carries queue-specific payload
refs, and folds in one submission. The log is append-only JSONL like the
record log, so a restarted studio replays to the same queue state.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import random
import re
import threading
import time
from pathlib import Path

from . import model
from .curator import build_selection_rounds
from .errors import PayloadError, TaskError
from .llm import ChatClient, ChatRequest
from .prompts import render_prompt
from .store import RecordStore
from .tagparse import extract_fenced, parse_json_payload
from .util import canonical_json

log = logging.getLogger(__name__)

TASK_KINDS = ("select_round", "render_dedup", "critique")
TASK_STATUSES = ("open", "submitted", "qa_flagged")

DEFAULT_SUGGESTION_COUNT = 3

# static visualizations only: suggestions steering toward motion get flagged
_MOTION_RE = re.compile(r"interact|animat|hover|tooltip", re.IGNORECASE)


def _check_payload(kind: str, payload: dict) -> None:
    if kind == "select_round":
        ids = payload.get("record_ids")
        if not isinstance(ids, list) or not ids:
            raise TaskError("select_round payload needs a non-empty record_ids list")
        if payload.get("typology_label") not in model.TYPOLOGY_LABELS:
            raise TaskError(f"select_round payload has unknown typology {payload.get('typology_label')!r}")
        if not payload.get("round_id"):
            raise TaskError("select_round payload needs a round_id")
    elif kind == "render_dedup":
        if not payload.get("record_id") or not payload.get("cluster_id"):
            raise TaskError("render_dedup payload needs record_id and cluster_id")
    elif kind == "critique":
        if not payload.get("record_id"):
            raise TaskError("critique payload needs a record_id")
        if not isinstance(payload.get("suggestions"), list):
            raise TaskError("critique payload needs a suggestions list")


class TaskStore:
    """Event-sourced annotation tasks (create / submit / qa_flag)."""

    def __init__(self, root: str | Path, durable: bool = True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._path = self.root / "tasks.jsonl"
        self._lock = threading.Lock()
        self._durable = durable
        self._tasks: dict[str, dict] = {}
        self._order: list[str] = []
        self._replay()
        self._fh = open(self._path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TaskStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _replay(self) -> None:
        if not self._path.exists():
            return
        with open(self._path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "create":
            task = event["task"]
            self._tasks[task["task_id"]] = task
            self._order.append(task["task_id"])
        elif kind == "submit":
            task = self._tasks[event["task_id"]]
            task["status"] = "submitted"
            task["annotator"] = event["annotator"]
            task["submission"] = event["submission"]
            task["submitted_ts"] = event["ts"]
        elif kind == "qa_flag":
            self._tasks[event["task_id"]]["status"] = "qa_flagged"
        else:
            raise TaskError(f"unknown task event kind {kind!r}")

    def _commit(self, event: dict) -> None:
        self._fh.write(canonical_json(event) + "\n")
        self._fh.flush()
        if self._durable:
            import os

            os.fsync(self._fh.fileno())
        self._apply(event)

    def create_task(self, kind: str, payload: dict, annotator: str = "") -> str:
        if kind not in TASK_KINDS:
            raise TaskError(f"unknown task kind {kind!r}")
        _check_payload(kind, payload)
        task = {
            "task_id": model.new_id(),
            "kind": kind,
            "payload": copy.deepcopy(payload),
            "status": "open",
            "annotator": annotator,
            "created_ts": time.time(),
            "submitted_ts": None,
            "submission": None,
        }
        with self._lock:
            self._commit({"event": "create", "task": task, "ts": task["created_ts"]})
        return task["task_id"]

    def get(self, task_id: str) -> dict:
        with self._lock:
            if task_id not in self._tasks:
                raise TaskError(f"no task {task_id}")
            return copy.deepcopy(self._tasks[task_id])

    def list(
        self,
        kind: str | None = None,
        status: str | None = None,
        annotator: str | None = None,
    ) -> list[dict]:
        """Matching tasks in creation order."""
        with self._lock:
            out = []
            for tid in self._order:
                task = self._tasks[tid]
                if kind is not None and task["kind"] != kind:
                    continue
                if status is not None and task["status"] != status:
                    continue
                if annotator is not None and task["annotator"] != annotator:
                    continue
                out.append(copy.deepcopy(task))
            return out

    def submit(self, task_id: str, annotator: str, submission: dict) -> dict:
        """Compare-and-set open -> submitted; a submitted task never reopens."""
        with self._lock:
            if task_id not in self._tasks:
                raise TaskError(f"no task {task_id}")
            task = self._tasks[task_id]
            if task["status"] != "open":
                raise TaskError(f"task {task_id} already submitted")
            if not annotator:
                raise TaskError("submission needs an annotator name")
            self._commit(
                {
                    "event": "submit",
                    "task_id": task_id,
                    "annotator": annotator,
                    "submission": copy.deepcopy(submission),
                    "ts": time.time(),
                }
            )
            return copy.deepcopy(task)

    def flag_qa(self, task_id: str) -> dict:
        with self._lock:
            if task_id not in self._tasks:
                raise TaskError(f"no task {task_id}")
            task = self._tasks[task_id]
            if task["status"] == "open":
                raise TaskError(f"task {task_id} has no submission to review")
            if task["status"] == "submitted":
                self._commit({"event": "qa_flag", "task_id": task_id, "ts": time.time()})
            return copy.deepcopy(task)

    def qa_sample(
        self,
        annotator: str,
        period: tuple[float, float],
        rate: float,
        seed: int = 0,
    ) -> list[dict]:
        """Flag a seeded sample of an annotator's submissions for review.

        Population: the annotator's submitted or already-flagged tasks with
        submitted_ts in [start, end), in submission order. Sample size is
        ceil(rate * n); indices come from random.Random(seed).sample and the
        flags land in population order, so a fixed seed reproduces exactly.
        """
        if not 0.0 < rate <= 1.0:
            raise TaskError(f"qa rate must be in (0, 1], got {rate}")
        start, end = period
        with self._lock:
            population = [
                self._tasks[tid]
                for tid in self._order
                if self._tasks[tid]["annotator"] == annotator
                and self._tasks[tid]["status"] in ("submitted", "qa_flagged")
                and self._tasks[tid]["submitted_ts"] is not None
                and start <= self._tasks[tid]["submitted_ts"] < end
            ]
            k = math.ceil(rate * len(population))
            chosen = sorted(random.Random(seed).sample(range(len(population)), k))
            flagged = []
            for idx in chosen:
                task = population[idx]
                if task["status"] == "submitted":
                    self._commit({"event": "qa_flag", "task_id": task["task_id"], "ts": time.time()})
                flagged.append(copy.deepcopy(task))
            return flagged

    def __len__(self) -> int:
        return len(self._order)


# --- queue builders over the record store ------------------------------------


def _tasked_record_ids(tasks: TaskStore, kind: str) -> set[str]:
    ids: set[str] = set()
    for task in tasks.list(kind=kind):
        payload = task["payload"]
        if kind == "select_round":
            ids.update(payload["record_ids"])
        else:
            ids.add(payload["record_id"])
    return ids


def create_selection_tasks(
    store: RecordStore,
    tasks: TaskStore,
    round_size: int | None = None,
) -> list[str]:
    """Queue label-homogeneous selection rounds for passed, classified records.

    Records already covered by any selection task are left out, so re-runs
    only pick up newly filtered material.
    """
    covered = _tasked_record_ids(tasks, "select_round")
    pool = [
        record
        for record in store.query(stage="Filtered")
        if record["id"] not in covered
        and record.get("dropped_reason") is None
        and record["filter_verdict"]["label"] == "Pass"
    ]
    kwargs = {} if round_size is None else {"round_size": round_size}
    created = []
    for round_spec in build_selection_rounds(pool, **kwargs):
        created.append(tasks.create_task("select_round", round_spec))
    return created


def create_dedup_tasks(
    store: RecordStore,
    tasks: TaskStore,
    pending_review: list[dict],
) -> list[str]:
    """Queue render-review tasks for near-duplicates awaiting a keep/drop call."""
    covered = _tasked_record_ids(tasks, "render_dedup")
    created = []
    for item in pending_review:
        if item["id"] in covered:
            continue
        store.get(item["id"])  # fail fast on unknown ids
        created.append(
            tasks.create_task(
                "render_dedup",
                {"record_id": item["id"], "cluster_id": item["cluster_id"]},
            )
        )
    return created


def eligible_for_critique(record: dict) -> bool:
    """Generated, undropped, latest turn rendered cleanly, reference rendered."""
    if record["stage"] != "Generated" or record.get("dropped_reason") is not None:
        return False
    if record["instance"].get("render_ref") is None:
        return False
    turn = record["generations"][-1]
    return turn["render_ref"] is not None and not turn["runtime_errors"]


def create_critique_tasks(
    store: RecordStore,
    tasks: TaskStore,
    client: ChatClient | None = None,
    model_name: str = "",
    n_suggestions: int = DEFAULT_SUGGESTION_COUNT,
) -> list[str]:
    """Queue critique tasks for renderable Generated records.

    With a gateway client, each task is seeded with model-generated reference
    suggestions; these stay on the task payload and are never copied into the
    human critique.
    """
    covered = _tasked_record_ids(tasks, "critique")
    created = []
    for record in store.query(stage="Generated"):
        if record["id"] in covered or not eligible_for_critique(record):
            continue
        suggestions: list[dict] = []
        if client is not None:
            suggestions = generate_suggestions(client, store, record, n_suggestions, model_name)
        created.append(
            tasks.create_task(
                "critique",
                {"record_id": record["id"], "suggestions": suggestions},
            )
        )
    return created


# --- reference suggestions ----------------------------------------------------


def parse_suggestion_reply(text: str, expected: int) -> list[dict]:
    """Fenced json list of strength/suggestion pairs -> normalized dicts."""
    items = parse_json_payload(extract_fenced(text))
    if not isinstance(items, list):
        raise PayloadError("suggestion reply must be a json list")
    out = []
    for item in items:
        if not isinstance(item, dict):
            raise PayloadError("suggestion entries must be objects")
        strength = item.get("Human Version Strength")
        suggestion = item.get("Suggestion for AI Version")
        if not strength or not suggestion:
            raise PayloadError("suggestion entry missing strength or suggestion text")
        out.append(
            {
                "human_version_strength": str(strength),
                "suggestion": str(suggestion),
                "flagged": bool(_MOTION_RE.search(f"{strength} {suggestion}")),
            }
        )
    if not out:
        raise PayloadError("suggestion reply carried no pairs")
    if len(out) != expected:
        log.warning("asked for %d suggestions, reply carried %d", expected, len(out))
    return out


def generate_suggestions(
    client: ChatClient,
    store: RecordStore,
    record: dict,
    n: int = DEFAULT_SUGGESTION_COUNT,
    model_name: str = "",
    temperature: float = 0.0,
) -> list[dict]:
    """Compare the candidate render against the human reference for hints."""
    human_ref = record["instance"].get("render_ref")
    turns = record["generations"]
    candidate_ref = turns[-1]["render_ref"] if turns else None
    if human_ref is None or candidate_ref is None:
        raise TaskError(f"record {record['id']}: suggestions need both renders")
    prompt = render_prompt(
        "suggest",
        {"num_of_suggestion": n, "user_query": record["instruction"]},
    )
    reply = client.chat(
        ChatRequest(
            model=model_name,
            text=prompt.text,
            temperature=temperature,
            images=(store.blobs.get(candidate_ref), store.blobs.get(human_ref)),
            purpose="suggest",
        )
    )
    return parse_suggestion_reply(reply.text, n)
