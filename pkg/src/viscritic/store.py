"""Append-only record store and content-addressed blob store.

The record log is a JSONL file of events (append / advance / update);
current record state is a fold over that log, rebuilt on open. Versions
are never rewritten, which keeps the human-in-the-loop pipeline auditable.
A single designated writer holds an exclusive flock; any number of
readers can replay a consistent prefix of the file.
"""

from __future__ import annotations

import copy
import fcntl
import json
import random
import threading
import time
from pathlib import Path

from . import model
from .errors import InvariantError, StageTransitionError, UnknownRecordError, VisCriticError
from .util import canonical_json, sha256_hex

_BLOB_SUFFIXES = {"png", "jpg", "svg", "csv", "json", "html", "txt", "bin"}

# Non-stage mutations allowed on a stored record. Each op folds a small,
# validated patch; anything else must go through advance_stage.
UPDATE_OPS = (
    "set_typology",
    "set_split",
    "set_instance_render",
    "add_generation_turn",
    "set_turn_render",
    "add_critique",
    "mark_dropped",
)


class BlobStore:
    """Content-addressed bytes keyed by sha256; paths are store-relative."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, suffix: str = "bin") -> str:
        suffix = suffix.lstrip(".").lower() or "bin"
        if suffix not in _BLOB_SUFFIXES:
            suffix = "bin"
        digest = sha256_hex(data)
        rel = f"blobs/{digest[:2]}/{digest}.{suffix}"
        path = self.root.parent / rel
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(data)
            tmp.rename(path)
        return rel

    def get(self, ref: str) -> bytes:
        path = self.root.parent / ref
        if not path.is_file():
            raise VisCriticError(f"unknown blob {ref}")
        return path.read_bytes()

    def exists(self, ref: str) -> bool:
        return (self.root.parent / ref).is_file()


class RecordStore:
    """Event-sourced store for PipelineRecords plus evaluation results."""

    def __init__(self, root: str | Path, writer: bool = True, durable: bool = True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.blobs = BlobStore(self.root / "blobs")
        self._records_path = self.root / "records.jsonl"
        self._evals_path = self.root / "evaluations.jsonl"
        self._lock = threading.Lock()
        self._durable = durable
        self._writer = writer
        self._records: dict[str, dict] = {}
        self._order: list[str] = []
        self._history: dict[str, list[dict]] = {}
        self._evaluations: list[dict] = []
        self._lockfile = None
        if writer:
            self._lockfile = open(self.root / ".writer.lock", "w")
            try:
                fcntl.flock(self._lockfile, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise VisCriticError(f"store {self.root} already has a writer") from None
        self._replay()
        self._fh = open(self._records_path, "a", encoding="utf-8") if writer else None

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None
        if self._lockfile:
            fcntl.flock(self._lockfile, fcntl.LOCK_UN)
            self._lockfile.close()
            self._lockfile = None

    def __enter__(self) -> "RecordStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- event log ----------------------------------------------------------

    def _replay(self) -> None:
        if self._records_path.exists():
            with open(self._records_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))
        if self._evals_path.exists():
            with open(self._evals_path, encoding="utf-8") as fh:
                self._evaluations = [json.loads(l) for l in fh if l.strip()]

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        rid = event["id"]
        if kind == "append":
            self._records[rid] = event["record"]
            self._order.append(rid)
        elif kind == "advance":
            self._records[rid] = model.apply_stage_payload(
                self._records[rid], event["stage"], event["payload"]
            )
        elif kind == "update":
            self._records[rid] = _apply_update(self._records[rid], event["op"], event["args"])
        else:
            raise VisCriticError(f"unknown event kind {kind!r}")
        self._history.setdefault(rid, []).append(event)

    def _write(self, event: dict) -> None:
        if self._fh is None:
            raise VisCriticError("store opened read-only")
        self._fh.write(canonical_json(event) + "\n")
        self._fh.flush()
        if self._durable:
            import os

            os.fsync(self._fh.fileno())

    def _commit(self, event: dict) -> dict:
        self._write(event)
        self._apply(event)
        return copy.deepcopy(self._records[event["id"]])

    # -- operations ---------------------------------------------------------

    def append_record(self, record: dict) -> str:
        """Validate and durably append a new record; returns its stable id."""
        record = copy.deepcopy(record)
        record.setdefault("id", model.new_id())
        model.validate_record(record)
        with self._lock:
            if record["id"] in self._records:
                raise InvariantError("id", f"duplicate record id {record['id']}")
            self._commit({"event": "append", "id": record["id"], "record": record, "ts": time.time()})
        return record["id"]

    def advance_stage(self, record_id: str, new_stage: str, payload: dict) -> dict:
        """Move a record to its next stage, folding in that stage's fields."""
        with self._lock:
            record = self._get_locked(record_id)
            model.check_transition(record["stage"], new_stage)
            model.check_stage_payload(new_stage, payload)
            candidate = model.apply_stage_payload(record, new_stage, payload)
            model.validate_record(candidate)
            return self._commit(
                {"event": "advance", "id": record_id, "stage": new_stage, "payload": payload, "ts": time.time()}
            )

    def update(self, record_id: str, op: str, **args) -> dict:
        """Apply a whitelisted non-stage mutation (typology, split, renders...)."""
        if op not in UPDATE_OPS:
            raise VisCriticError(f"unknown update op {op!r}")
        with self._lock:
            record = self._get_locked(record_id)
            candidate = _apply_update(record, op, args)
            model.validate_record(candidate)
            return self._commit({"event": "update", "id": record_id, "op": op, "args": args, "ts": time.time()})

    def _get_locked(self, record_id: str) -> dict:
        if record_id not in self._records:
            raise UnknownRecordError(f"no record {record_id}")
        return self._records[record_id]

    def get(self, record_id: str) -> dict:
        with self._lock:
            return copy.deepcopy(self._get_locked(record_id))

    def query(
        self,
        stage: str | None = None,
        split: str | None = None,
        typology: str | None = None,
    ) -> list[dict]:
        """All matching records in append order."""
        with self._lock:
            out = []
            for rid in self._order:
                rec = self._records[rid]
                if stage is not None and rec["stage"] != stage:
                    continue
                if split is not None and rec["split"] != split:
                    continue
                if typology is not None and rec["instance"].get("typology_label") != typology:
                    continue
                out.append(copy.deepcopy(rec))
            return out

    def history(self, record_id: str) -> list[dict]:
        with self._lock:
            self._get_locked(record_id)
            return copy.deepcopy(self._history[record_id])

    def __len__(self) -> int:
        return len(self._order)

    # -- split assignment ---------------------------------------------------

    def assign_splits(self, test_count: int, seed: int, strategy: str = "uniform") -> dict:
        """Assign train/test splits to all unassigned records.

        ``uniform`` samples the test set uniformly at random; ``by_typology``
        stratifies the draw across typology labels. Seed is stored with every
        assignment event for provenance.
        """
        if strategy not in ("uniform", "by_typology"):
            raise VisCriticError(f"unknown split strategy {strategy!r}")
        with self._lock:
            pool = [rid for rid in self._order if self._records[rid]["split"] == "unassigned"]
        if test_count > len(pool):
            raise VisCriticError(f"test_count {test_count} exceeds {len(pool)} unassigned records")
        rng = random.Random(seed)
        if strategy == "uniform":
            test_ids = set(rng.sample(pool, test_count))
        else:
            by_label: dict[str, list[str]] = {}
            for rid in pool:
                label = self.get(rid)["instance"].get("typology_label") or ""
                by_label.setdefault(label, []).append(rid)
            test_ids = set()
            remaining = test_count
            labels = sorted(by_label)
            for i, label in enumerate(labels):
                group = by_label[label]
                share = round(test_count * len(group) / len(pool)) if i < len(labels) - 1 else remaining
                share = min(share, len(group), remaining)
                test_ids.update(rng.sample(group, share))
                remaining -= share
            # top up from leftover pool if rounding under-filled
            leftovers = [rid for rid in pool if rid not in test_ids]
            if remaining > 0:
                test_ids.update(rng.sample(leftovers, remaining))
        counts = {"train": 0, "test": 0}
        for rid in pool:
            split = "test" if rid in test_ids else "train"
            self.update(rid, "set_split", split=split, seed=seed, strategy=strategy)
            counts[split] += 1
        return counts

    # -- evaluations --------------------------------------------------------

    def append_evaluation(self, result: dict) -> None:
        model.validate_evaluation(result)
        with self._lock:
            if self._fh is None:
                raise VisCriticError("store opened read-only")
            with open(self._evals_path, "a", encoding="utf-8") as fh:
                fh.write(canonical_json(result) + "\n")
            self._evaluations.append(copy.deepcopy(result))

    def evaluations(self, kind: str | None = None) -> list[dict]:
        with self._lock:
            return [copy.deepcopy(e) for e in self._evaluations if kind is None or e["kind"] == kind]

    # -- integrity ----------------------------------------------------------

    def scan_invariants(self) -> list[str]:
        """Full-store scan; returns human-readable violations (empty = healthy)."""
        violations = []
        with self._lock:
            for rid in self._order:
                try:
                    model.validate_record(self._records[rid])
                except InvariantError as exc:
                    violations.append(f"{rid}: {exc}")
                stages = [
                    model.STAGE_INDEX[e["record"]["stage"] if e["event"] == "append" else e["stage"]]
                    for e in self._history[rid]
                    if e["event"] in ("append", "advance")
                ]
                if any(b < a for a, b in zip(stages, stages[1:])):
                    violations.append(f"{rid}: stage history not monotonic: {stages}")
        return violations


def _apply_update(record: dict, op: str, args: dict) -> dict:
    out = copy.deepcopy(record)
    if op == "set_typology":
        out["instance"]["typology_label"] = args["label"]
    elif op == "set_split":
        out["split"] = args["split"]
    elif op == "set_instance_render":
        out["instance"]["render_ref"] = args["render_ref"]
    elif op == "add_generation_turn":
        if not out["generations"]:
            raise StageTransitionError("add_generation_turn requires an existing turn 0 (advance to Generated first)")
        turn = args["turn"]
        if turn.get("turn_index") != len(out["generations"]):
            raise InvariantError("turn.turn_index", f"expected {len(out['generations'])}")
        out["generations"] = out["generations"] + [turn]
    elif op == "set_turn_render":
        idx = args["turn_index"]
        if not 0 <= idx < len(out["generations"]):
            raise InvariantError("turn_index", f"no generation turn {idx}")
        turn = dict(out["generations"][idx])
        turn["render_ref"] = args.get("render_ref")
        turn["runtime_errors"] = list(args.get("runtime_errors", []))
        turns = list(out["generations"])
        turns[idx] = turn
        out["generations"] = turns
    elif op == "add_critique":
        if record["stage"] != "Critiqued":
            raise StageTransitionError("add_critique is only legal on Critiqued records (first critique advances the stage)")
        out["critiques"] = out["critiques"] + [args["critique"]]
    elif op == "mark_dropped":
        out["dropped_reason"] = args["reason"]
    return out
