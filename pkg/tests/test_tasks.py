"""Annotation task queues: CAS submit, QA sampling, queue builders."""

from __future__ import annotations

import math
import random

import pytest
from conftest import STAGE_PAYLOADS, sample_instance, walk_stages

from viscritic import model
from viscritic.errors import PayloadError, TaskError, UnknownRecordError
from viscritic.llm import ChatClient, MockProvider
from viscritic.tasks import (
    TaskStore,
    create_critique_tasks,
    create_dedup_tasks,
    create_selection_tasks,
    eligible_for_critique,
    generate_suggestions,
    parse_suggestion_reply,
)


@pytest.fixture()
def tasks(tmp_path):
    t = TaskStore(tmp_path / "tasks", durable=False)
    yield t
    t.close()


def round_payload(n=3, label="Bar", round_id="round-Bar-0"):
    return {
        "round_id": round_id,
        "typology_label": label,
        "record_ids": [f"rec-{i}" for i in range(n)],
    }


def suggestion_reply(pairs):
    import json

    return "``` json\n" + json.dumps(
        [
            {"Human Version Strength": s, "Suggestion for AI Version": g}
            for s, g in pairs
        ],
        indent=4,
    ) + "\n```"


def make_client(scripts):
    provider = MockProvider(scripts)
    return ChatClient(provider, sleeper=lambda _: None), provider


# --- TaskStore basics ---------------------------------------------------------


def test_create_and_get(tasks):
    tid = tasks.create_task("select_round", round_payload())
    task = tasks.get(tid)
    assert task["kind"] == "select_round"
    assert task["status"] == "open"
    assert task["submission"] is None
    assert task["payload"]["record_ids"] == ["rec-0", "rec-1", "rec-2"]


def test_unknown_kind_and_bad_payloads(tasks):
    with pytest.raises(TaskError, match="unknown task kind"):
        tasks.create_task("review", {})
    with pytest.raises(TaskError, match="record_ids"):
        tasks.create_task("select_round", {"round_id": "r", "typology_label": "Bar", "record_ids": []})
    with pytest.raises(TaskError, match="typology"):
        tasks.create_task("select_round", round_payload(label="Chart"))
    with pytest.raises(TaskError, match="cluster_id"):
        tasks.create_task("render_dedup", {"record_id": "a"})
    with pytest.raises(TaskError, match="suggestions"):
        tasks.create_task("critique", {"record_id": "a"})


def test_list_filters(tasks):
    a = tasks.create_task("select_round", round_payload())
    b = tasks.create_task("render_dedup", {"record_id": "x", "cluster_id": "y"})
    tasks.submit(b, "casey", {"keep": True})
    assert [t["task_id"] for t in tasks.list()] == [a, b]
    assert [t["task_id"] for t in tasks.list(status="open")] == [a]
    assert [t["task_id"] for t in tasks.list(kind="render_dedup")] == [b]
    assert [t["task_id"] for t in tasks.list(annotator="casey")] == [b]


def test_submit_cas(tasks):
    tid = tasks.create_task("render_dedup", {"record_id": "x", "cluster_id": "y"})
    tasks.submit(tid, "casey", {"keep": False})
    task = tasks.get(tid)
    assert task["status"] == "submitted"
    assert task["annotator"] == "casey"
    assert task["submission"] == {"keep": False}
    assert task["submitted_ts"] is not None
    with pytest.raises(TaskError, match="already submitted"):
        tasks.submit(tid, "robin", {"keep": True})
    # the losing submission never lands
    assert tasks.get(tid)["submission"] == {"keep": False}


def test_submit_unknown_and_anonymous(tasks):
    with pytest.raises(TaskError, match="no task"):
        tasks.submit("missing", "casey", {})
    tid = tasks.create_task("render_dedup", {"record_id": "x", "cluster_id": "y"})
    with pytest.raises(TaskError, match="annotator"):
        tasks.submit(tid, "", {})


def test_qa_flag_lifecycle(tasks):
    tid = tasks.create_task("render_dedup", {"record_id": "x", "cluster_id": "y"})
    with pytest.raises(TaskError, match="no submission"):
        tasks.flag_qa(tid)
    tasks.submit(tid, "casey", {"keep": True})
    tasks.flag_qa(tid)
    assert tasks.get(tid)["status"] == "qa_flagged"
    tasks.flag_qa(tid)  # idempotent
    assert tasks.get(tid)["status"] == "qa_flagged"
    with pytest.raises(TaskError, match="already submitted"):
        tasks.submit(tid, "robin", {"keep": False})


def test_replay_restores_state(tmp_path):
    with TaskStore(tmp_path / "tasks", durable=False) as first:
        a = first.create_task("select_round", round_payload())
        b = first.create_task("render_dedup", {"record_id": "x", "cluster_id": "y"})
        first.submit(b, "casey", {"keep": True})
        first.flag_qa(b)
    with TaskStore(tmp_path / "tasks", durable=False) as second:
        assert len(second) == 2
        assert second.get(a)["status"] == "open"
        replayed = second.get(b)
        assert replayed["status"] == "qa_flagged"
        assert replayed["submission"] == {"keep": True}
        assert replayed["annotator"] == "casey"


# --- QA sampling ---------------------------------------------------------------


def submit_n(tasks, n, annotator="casey"):
    ids = []
    for i in range(n):
        tid = tasks.create_task("render_dedup", {"record_id": f"r{i}", "cluster_id": "c"})
        tasks.submit(tid, annotator, {"keep": True})
        ids.append(tid)
    return ids


def test_qa_rate_one_flags_all(tasks):
    ids = submit_n(tasks, 7)
    flagged = tasks.qa_sample("casey", (0.0, float("inf")), 1.0, seed=5)
    assert sorted(t["task_id"] for t in flagged) == sorted(ids)
    assert all(tasks.get(tid)["status"] == "qa_flagged" for tid in ids)


def test_qa_sample_matches_seeded_oracle(tasks):
    ids = submit_n(tasks, 100)
    rate, seed = 0.1, 20260816
    flagged = tasks.qa_sample("casey", (0.0, float("inf")), rate, seed=seed)
    k = math.ceil(rate * 100)
    expected_idx = sorted(random.Random(seed).sample(range(100), k))
    assert [t["task_id"] for t in flagged] == [ids[i] for i in expected_idx]
    assert len(flagged) == k == 10


def test_qa_sample_ceils_fractional_counts(tasks):
    submit_n(tasks, 10)
    flagged = tasks.qa_sample("casey", (0.0, float("inf")), 0.25, seed=1)
    assert len(flagged) == 3


def test_qa_empty_period(tasks):
    ids = submit_n(tasks, 5)
    cutoff = tasks.get(ids[0])["submitted_ts"]
    assert tasks.qa_sample("casey", (0.0, cutoff), 1.0) == []
    assert tasks.qa_sample("casey", (cutoff, cutoff), 1.0) == []


def test_qa_scopes_to_annotator_and_period(tasks):
    mine = submit_n(tasks, 3, "casey")
    submit_n(tasks, 3, "robin")
    flagged = tasks.qa_sample("casey", (0.0, float("inf")), 1.0)
    assert sorted(t["task_id"] for t in flagged) == sorted(mine)
    for task in tasks.list(annotator="robin"):
        assert task["status"] == "submitted"


def test_qa_rate_bounds(tasks):
    for rate in (0.0, -0.1, 1.5):
        with pytest.raises(TaskError, match="rate"):
            tasks.qa_sample("casey", (0.0, 1.0), rate)


# --- queue builders -------------------------------------------------------------


def filtered_record(store, label="Bar", passed=True):
    rid = store.append_record(model.make_record(sample_instance()))
    verdict = (
        {"filtered": False, "label": "Pass", "rationale": ""}
        if passed
        else {"filtered": True, "label": "Low Quality Visualization", "rationale": ""}
    )
    store.advance_stage(rid, "Filtered", {"filter_verdict": verdict})
    store.update(rid, "set_typology", label=label)
    return rid


def test_selection_queue_rounds_and_rerun(store, tasks):
    ids = [filtered_record(store) for _ in range(120)]
    created = create_selection_tasks(store, tasks, round_size=50)
    assert len(created) == 3
    sizes = [len(tasks.get(t)["payload"]["record_ids"]) for t in created]
    assert sizes == [50, 50, 20]
    covered = [rid for t in created for rid in tasks.get(t)["payload"]["record_ids"]]
    assert covered == ids
    # re-run queues nothing new; fresh records get their own round
    assert create_selection_tasks(store, tasks, round_size=50) == []
    extra = [filtered_record(store, label="Line") for _ in range(4)]
    (new_task,) = create_selection_tasks(store, tasks, round_size=50)
    assert tasks.get(new_task)["payload"]["record_ids"] == extra
    assert tasks.get(new_task)["payload"]["typology_label"] == "Line"


def test_selection_queue_skips_rejected_and_dropped(store, tasks):
    good = filtered_record(store)
    filtered_record(store, passed=False)
    dropped = filtered_record(store)
    store.update(dropped, "mark_dropped", reason="broken image")
    (tid,) = create_selection_tasks(store, tasks)
    assert tasks.get(tid)["payload"]["record_ids"] == [good]


def test_dedup_queue_and_rerun(store, tasks):
    head = store.append_record(model.make_record(sample_instance()))
    member = store.append_record(model.make_record(sample_instance()))
    pending = [{"id": member, "cluster_id": head}]
    (tid,) = create_dedup_tasks(store, tasks, pending)
    assert tasks.get(tid)["payload"] == {"record_id": member, "cluster_id": head}
    assert create_dedup_tasks(store, tasks, pending) == []
    with pytest.raises(UnknownRecordError):
        create_dedup_tasks(store, tasks, [{"id": "ghost", "cluster_id": head}])


def generated_record(store, clean=True, with_reference=True):
    rid = store.append_record(model.make_record(sample_instance()))
    walk_stages(store, rid, upto="Generated")
    if with_reference:
        ref = store.blobs.put(b"human-png", "png")
        store.update(rid, "set_instance_render", render_ref=ref)
    if clean:
        ref = store.blobs.put(b"model-png", "png")
        store.update(rid, "set_turn_render", turn_index=0, render_ref=ref, runtime_errors=[])
    else:
        store.update(rid, "set_turn_render", turn_index=0, render_ref=None, runtime_errors=["boom"])
    return rid


def test_eligibility_rules(store):
    clean = generated_record(store)
    assert eligible_for_critique(store.get(clean))

    broken = generated_record(store, clean=False)
    assert not eligible_for_critique(store.get(broken))

    unreferenced = generated_record(store, with_reference=False)
    assert not eligible_for_critique(store.get(unreferenced))

    dropped = generated_record(store)
    store.update(dropped, "mark_dropped", reason="qa")
    assert not eligible_for_critique(store.get(dropped))

    exported = store.append_record(model.make_record(sample_instance()))
    walk_stages(store, exported, upto="Exported")
    assert not eligible_for_critique(store.get(exported))


def test_critique_queue_with_suggestions(store, tasks):
    rid = generated_record(store)
    generated_record(store, clean=False)  # ineligible, skipped
    client, provider = make_client(
        {"suggest": suggestion_reply([("clear axis", "label the y axis"), ("palette", "use one hue")])}
    )
    created = create_critique_tasks(store, tasks, client, model_name="mock-model", n_suggestions=2)
    assert len(created) == 1
    payload = tasks.get(created[0])["payload"]
    assert payload["record_id"] == rid
    assert [s["suggestion"] for s in payload["suggestions"]] == ["label the y axis", "use one hue"]
    request = provider.calls[0]
    assert request.purpose == "suggest"
    assert len(request.images) == 2
    assert request.images == (b"model-png", b"human-png")
    assert "2 most important suggestions" in request.text
    assert "plot the data" in request.text
    # re-run queues nothing while the task exists
    assert create_critique_tasks(store, tasks, client, model_name="mock-model") == []


def test_critique_queue_without_client_has_no_suggestions(store, tasks):
    generated_record(store)
    (tid,) = create_critique_tasks(store, tasks)
    assert tasks.get(tid)["payload"]["suggestions"] == []


# --- suggestion parsing ----------------------------------------------------------


def test_parse_suggestions_three_pairs():
    reply = suggestion_reply([("a", "x"), ("b", "y"), ("c", "z")])
    out = parse_suggestion_reply(reply, 3)
    assert [s["human_version_strength"] for s in out] == ["a", "b", "c"]
    assert [s["suggestion"] for s in out] == ["x", "y", "z"]
    assert all(s["flagged"] is False for s in out)


def test_parse_suggestions_count_is_advisory(caplog):
    reply = suggestion_reply([("a", "x"), ("b", "y")])
    with caplog.at_level("WARNING"):
        out = parse_suggestion_reply(reply, 3)
    assert len(out) == 2
    assert any("asked for 3" in r.message for r in caplog.records)


def test_parse_suggestions_flags_motion():
    reply = suggestion_reply(
        [
            ("steady", "add a hover tooltip for details"),
            ("calm", "animate the bars on load"),
            ("fine", "increase font size"),
        ]
    )
    out = parse_suggestion_reply(reply, 3)
    assert [s["flagged"] for s in out] == [True, True, False]


def test_parse_suggestions_malformed():
    with pytest.raises(PayloadError, match="json list"):
        parse_suggestion_reply('``` json\n{"Human Version Strength": "a"}\n```', 3)
    with pytest.raises(PayloadError, match="missing strength"):
        parse_suggestion_reply('``` json\n[{"Suggestion for AI Version": "x"}]\n```', 3)
    with pytest.raises(PayloadError, match="no pairs"):
        parse_suggestion_reply("``` json\n[]\n```", 3)


def test_generate_suggestions_requires_both_renders(store):
    rid = generated_record(store, with_reference=False)
    client, _ = make_client({"suggest": suggestion_reply([("a", "x")])})
    with pytest.raises(TaskError, match="both renders"):
        generate_suggestions(client, store, store.get(rid), 3, "mock-model")
