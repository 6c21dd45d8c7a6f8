"""Shared fixtures: temp stores, canonical sample records, stage walking."""

from __future__ import annotations

import pytest

from viscritic import model
from viscritic.store import RecordStore


@pytest.fixture()
def store(tmp_path):
    s = RecordStore(tmp_path / "store", durable=False)
    yield s
    s.close()


def sample_instance(**over):
    base = dict(
        source_notebook="nb-1",
        cell_ids=["c1", "c2"],
        code="<html><body><script>draw()</script></body></html>",
    )
    base.update(over)
    return model.make_instance(**base)


def sample_record(**over):
    rec = model.make_record(sample_instance())
    rec.update(over)
    return rec


def sample_bundle(blob_ref="blobs/aa/deadbeef.csv"):
    return {
        "files": [
            {
                "file_name": "data.csv",
                "file_type": "csv_table",
                "description": "the table behind the chart",
                "blob_ref": blob_ref,
            }
        ],
        "previews": [{"file_name": "data.csv", "preview": [{"column": "x", "properties": {"dtype": "number"}}]}],
        "illustration": "### File: data.csv (csv_table)",
    }


def sample_persona():
    return {
        "user_profile": "data journalist",
        "data_vis_expertise": "Medium",
        "usage_scenario": "newsroom graphic",
    }


STAGE_PAYLOADS = {
    "Filtered": lambda: {"filter_verdict": {"filtered": False, "label": "Pass", "rationale": "clean"}},
    "Selected": lambda: {"selected_by": "annotator-1", "round_id": "round-0"},
    "Deduplicated": lambda: {"dedup": {"cluster_id": "cl-0", "role": "head", "decided_by": "auto"}},
    "Synthesized": lambda: {"instruction": "plot the data", "persona": sample_persona()},
    "Exported": lambda: {"dataset": sample_bundle()},
    "Generated": lambda: {"generation": model.make_turn(0, "mock-model", "<html>v0</html>")},
    "Critiqued": lambda: {
        "critique": model.make_critique(
            "human",
            [{"category": "VisualClarity", "text": "legend cut off"}],
            target_turn=0,
        )
    },
}


def walk_stages(store, record_id, upto="Critiqued"):
    """Advance a record through every stage up to and including `upto`."""
    for stage in model.STAGES[1:]:
        store.advance_stage(record_id, stage, STAGE_PAYLOADS[stage]())
        if stage == upto:
            break
    return store.get(record_id)
