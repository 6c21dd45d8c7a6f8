import base64
import json
import random

import pytest

from viscritic import model
from viscritic.errors import PayloadError, VisCriticError
from viscritic.llm import ChatClient, ChatRequest, MockProvider
from viscritic.render import RenderSettings, RenderWorker
from viscritic.synthesizer import (
    choose_instruction,
    export_record,
    harvest_exports,
    instrument_export,
    parse_export_reply,
    parse_instruction_batch,
    synthesize_record,
    validate_export,
)

SETTINGS = RenderSettings(viewport_width=300, viewport_height=200, timeout_ms=4000)


@pytest.fixture(scope="module")
def worker():
    w = RenderWorker()
    yield w
    w.close()


# --- fixture documents -----------------------------------------------------

CSV_BYTES = b"name,value\na,30\nb,50\nc,20\n"

DRAW = """
const canvas = document.createElement('canvas');
canvas.width = 300; canvas.height = 200;
document.body.appendChild(canvas);
const ctx = canvas.getContext('2d');
ctx.fillStyle = 'steelblue';
rows.forEach((r, i) => { ctx.fillRect(20 + i*60, 180 - r[1], 40, r[1]); });
"""

ORIGINAL = (
    "<html><body><script>\n"
    "const rows = [['a', 30], ['b', 50], ['c', 20]];\n" + DRAW + "</script></body></html>"
)

INSTRUMENTED = (
    "<html><body><script>\n"
    "const rows = [['a', 30], ['b', 50], ['c', 20]];\n" + DRAW + """
const csvContent = "name,value\\na,30\\nb,50\\nc,20\\n";
globalThis.exported_data = globalThis.exported_data || [];
globalThis.exported_data.push({filename: "bars.csv", data: btoa(csvContent), type: "text/csv"});
</script></body></html>"""
)

REWRITTEN = (
    "<html><body><script>\n"
    "const res = await fetch('./data_folder/bars.csv');\n"
    "const text = await res.text();\n"
    "const rows = text.trim().split('\\n').slice(1).map(l => {"
    " const p = l.split(','); return [p[0], Number(p[1])]; });\n" + DRAW + "</script></body></html>"
)

BLANK_REWRITE = "<html><body><script>\nconst nothing = 1;\n</script></body></html>"

PLAN = [{"file_name": "bars.csv", "file_type": "csv_table", "description": "bar values"}]


def export_reply(plan=None, code=INSTRUMENTED):
    return (
        "[SUBSECTION1_PLAN]\n``` json\n"
        + json.dumps({"file_list": plan if plan is not None else PLAN})
        + "\n```\n[/SUBSECTION1_PLAN]\n"
        "[SUBSECTION2_EDITED_CODE]\n``` html\n" + code + "\n```\n[/SUBSECTION2_EDITED_CODE]"
    )


def rewrite_reply(code=REWRITTEN):
    return "[EDITED_CODE]\n``` html\n" + code + "\n```\n[/EDITED_CODE]"


def batch_reply(items):
    return (
        "[SUBSECTION1_RESULT_LIST]\n``` json\n"
        + json.dumps(items)
        + "\n```\n[/SUBSECTION1_RESULT_LIST]"
    )


def batch_items(n=3):
    return [
        {
            "user_profile": f"analyst {i}",
            "data_vis_expertise": ("Low", "Medium", "High")[i % 3],
            "usage_scenario": f"scenario {i}",
            "query": f"draw the bars, variant {i}",
        }
        for i in range(n)
    ]


def make_client(scripts):
    return ChatClient(MockProvider(scripts), sleeper=lambda s: None)


# --- parsing ----------------------------------------------------------------


def test_parse_batch_of_three():
    items = parse_instruction_batch(batch_reply(batch_items(3)))
    assert len(items) == 3
    for item in items:
        assert item["persona"]["data_vis_expertise"] in ("Low", "Medium", "High")
        assert item["query"]


def test_parse_batch_drops_malformed_items():
    raw = batch_items(3)
    del raw[1]["query"]
    raw[2]["data_vis_expertise"] = "Expert"
    items = parse_instruction_batch(batch_reply(raw))
    assert len(items) == 1
    assert items[0]["query"] == "draw the bars, variant 0"


def test_parse_batch_empty_or_not_list():
    with pytest.raises(PayloadError, match="no usable"):
        parse_instruction_batch(batch_reply([]))
    with pytest.raises(PayloadError, match="json list"):
        parse_instruction_batch(batch_reply({"query": "x"}))


def test_choose_instruction_membership():
    # membership scan: the pick is always drawn from its own batch
    rng = random.Random(42)
    for _ in range(20):
        items = parse_instruction_batch(batch_reply(batch_items(rng.randint(1, 6))))
        chosen = choose_instruction(items, rng)
        assert chosen in items


def test_parse_export_reply_happy():
    plan, code = parse_export_reply(export_reply())
    assert plan == PLAN
    assert code == INSTRUMENTED


def test_parse_export_reply_rejects_unsupported_type():
    bad = [{"file_name": "t.xml", "file_type": "xml_table", "description": ""}]
    with pytest.raises(PayloadError, match="unsupported file type"):
        parse_export_reply(export_reply(plan=bad))


def test_parse_export_reply_rejects_duplicates_and_empty():
    dup = PLAN + PLAN
    with pytest.raises(PayloadError, match="duplicate"):
        parse_export_reply(export_reply(plan=dup))
    with pytest.raises(PayloadError, match="empty export plan"):
        parse_export_reply(export_reply(plan=[]))


def test_instrument_export_checks_filename_mentions():
    plan = [{"file_name": "absent.csv", "file_type": "csv_table", "description": ""}]
    client = make_client({"export": export_reply(plan=plan)})
    with pytest.raises(PayloadError, match="never appears"):
        instrument_export(client, ORIGINAL, "mock-model")


def test_instrument_export_happy():
    client = make_client({"export": export_reply()})
    result = instrument_export(client, ORIGINAL, "mock-model")
    assert result["plan"] == PLAN
    assert "globalThis.exported_data" in result["code"]


# --- harvest ----------------------------------------------------------------


def test_harvest_byte_identity(worker):
    files = harvest_exports(worker, INSTRUMENTED, PLAN, SETTINGS)
    assert len(files) == 1
    assert files[0]["file_name"] == "bars.csv"
    assert files[0]["file_type"] == "csv_table"
    assert files[0]["data"] == CSV_BYTES


def test_harvest_nothing_pushed(worker):
    with pytest.raises(VisCriticError, match="no exports"):
        harvest_exports(worker, ORIGINAL, PLAN, SETTINGS)


def test_harvest_runtime_error(worker):
    doc = "<html><body><script>throw new Error('dead');</script></body></html>"
    with pytest.raises(VisCriticError, match="runtime error"):
        harvest_exports(worker, doc, PLAN, SETTINGS)


def test_harvest_unplanned_export(worker):
    doc = INSTRUMENTED.replace('filename: "bars.csv"', 'filename: "other.csv"')
    with pytest.raises(VisCriticError, match="unplanned export"):
        harvest_exports(worker, doc, PLAN, SETTINGS)


def test_harvest_bad_base64(worker):
    doc = INSTRUMENTED.replace("btoa(csvContent)", "'%%%not-base64%%%'")
    with pytest.raises(VisCriticError, match="base64"):
        harvest_exports(worker, doc, PLAN, SETTINGS)


def test_harvest_missing_planned_file(worker):
    plan = PLAN + [{"file_name": "extra.csv", "file_type": "csv_table", "description": ""}]
    with pytest.raises(VisCriticError, match="never exported"):
        harvest_exports(worker, INSTRUMENTED, plan, SETTINGS)


GEO_BYTES = json.dumps(
    {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [8.5, 47.4]},
                "properties": {"name": "zrh"},
            }
        ],
    }
).encode()
PNG_BYTES = b"\x89PNG\r\n\x1a\n fake png payload bytes"


def test_harvest_mixed_types(worker):
    plan = [
        {"file_name": "t.csv", "file_type": "csv_table", "description": "table"},
        {"file_name": "g.geojson", "file_type": "json_geojson", "description": "geo"},
        {"file_name": "i.png", "file_type": "png_image", "description": "icon"},
    ]
    pushes = "".join(
        "globalThis.exported_data.push({filename: '%s', data: '%s', type: '%s'});\n"
        % (name, base64.b64encode(data).decode(), mime)
        for name, data, mime in [
            ("t.csv", CSV_BYTES, "text/csv"),
            ("g.geojson", GEO_BYTES, "application/geo+json"),
            ("i.png", PNG_BYTES, "image/png"),
        ]
    )
    doc = (
        "<html><body><script>\nglobalThis.exported_data = [];\n"
        + pushes
        + "</script></body></html>"
    )
    files = harvest_exports(worker, doc, plan, SETTINGS)
    by_name = {f["file_name"]: f for f in files}
    assert by_name["t.csv"]["data"] == CSV_BYTES
    assert by_name["g.geojson"]["data"] == GEO_BYTES
    assert by_name["i.png"]["data"] == PNG_BYTES
    assert by_name["g.geojson"]["file_type"] == "json_geojson"
    assert by_name["i.png"]["file_type"] == "png_image"


# --- validation ---------------------------------------------------------------


def harvested_files():
    return [{"file_name": "bars.csv", "file_type": "csv_table", "description": "bar values", "data": CSV_BYTES}]


def test_validate_export_identical_renders(worker):
    client = make_client({"verify_export": rewrite_reply()})
    result = validate_export(
        client, worker, ORIGINAL, harvested_files(), "illustration text", "mock-model", SETTINGS
    )
    assert result["similarity"] == 1.0
    assert result["valid"] is True
    assert result["rewritten_code"] == REWRITTEN


def test_validate_export_blank_rewrite_queued(worker):
    client = make_client({"verify_export": rewrite_reply(BLANK_REWRITE)})
    result = validate_export(
        client, worker, ORIGINAL, harvested_files(), "illustration text", "mock-model", SETTINGS
    )
    # blank vs steelblue ink: mean masked difference is max|steelblue-white|/255
    assert result["similarity"] == pytest.approx(1 - 185 / 255, abs=1e-6)
    assert result["valid"] is False


def test_validate_export_render_failure(worker):
    broken = "<html><body><script>throw new Error('no');</script></body></html>"
    client = make_client({"verify_export": rewrite_reply(broken)})
    with pytest.raises(VisCriticError, match="failed to render"):
        validate_export(
            client, worker, ORIGINAL, harvested_files(), "illustration text", "mock-model", SETTINGS
        )


def test_validate_export_prompt_bindings(worker):
    provider = MockProvider({"verify_export": rewrite_reply()})
    client = ChatClient(provider, sleeper=lambda s: None)
    validate_export(
        client, worker, ORIGINAL, harvested_files(), "THE_ILLUSTRATION", "mock-model", SETTINGS
    )
    text = provider.calls[0].text
    assert "'./data_folder'" in text
    assert "THE_ILLUSTRATION" in text
    assert "const rows" in text


# --- store orchestration -----------------------------------------------------


def deduplicated_record(store, worker):
    outcome = worker.render(ORIGINAL, settings=SETTINGS)
    ref = store.blobs.put(outcome.image, "png")
    record = model.make_record(model.make_instance("nb-1", ["c1"], ORIGINAL, render_ref=ref))
    rid = store.append_record(record)
    store.advance_stage(
        rid, "Filtered", {"filter_verdict": {"filtered": False, "label": "Pass", "rationale": ""}}
    )
    store.advance_stage(rid, "Selected", {"selected_by": "a1", "round_id": "r0"})
    store.advance_stage(
        rid, "Deduplicated", {"dedup": {"cluster_id": rid, "role": "head", "decided_by": "auto"}}
    )
    return rid


def full_scripts():
    return {
        "export": export_reply(),
        "instruct": batch_reply(batch_items(3)),
        "verify_export": rewrite_reply(),
    }


def test_synthesize_record(store, worker):
    rid = deduplicated_record(store, worker)
    client = make_client(full_scripts())
    chosen = synthesize_record(
        store, client, worker, rid, "mock-model", SETTINGS, rng=random.Random(3)
    )
    record = store.get(rid)
    assert record["stage"] == "Synthesized"
    assert record["instruction"] == chosen["query"]
    assert record["persona"] == chosen["persona"]
    candidates = record["instruction_candidates"]
    assert len(candidates) == 3
    assert any(c["query"] == record["instruction"] for c in candidates)


def test_synthesize_illustration_binding(store, worker):
    rid = deduplicated_record(store, worker)
    provider = MockProvider(full_scripts())
    client = ChatClient(provider, sleeper=lambda s: None)
    synthesize_record(store, client, worker, rid, "mock-model", SETTINGS)
    instruct_calls = [c for c in provider.calls if c.purpose == "instruct"]
    assert len(instruct_calls) == 1
    # the transient harvest feeds the instruction prompt a real illustration
    assert '"column": "name"' in instruct_calls[0].text
    assert len(instruct_calls[0].images) == 1


def test_export_record_round_trip(store, worker, tmp_path):
    rid = deduplicated_record(store, worker)
    provider = MockProvider(full_scripts())
    client = ChatClient(provider, cache_dir=tmp_path / "cache", sleeper=lambda s: None)
    synthesize_record(store, client, worker, rid, "mock-model", SETTINGS)
    payload = export_record(store, client, worker, rid, "mock-model", SETTINGS)
    record = store.get(rid)
    assert record["stage"] == "Exported"
    bundle = record["dataset"]
    assert [f["file_name"] for f in bundle["files"]] == ["bars.csv"]
    assert store.blobs.get(bundle["files"][0]["blob_ref"]) == CSV_BYTES
    assert '"column": "name"' in bundle["illustration"]
    validation = record["export_validation"]
    assert validation["valid"] is True
    assert validation["similarity"] == 1.0
    assert store.blobs.get(validation["rewritten_ref"]).decode() == REWRITTEN
    assert payload["dataset"] == bundle
    # the warm chat cache made the second instrumentation pass free
    assert provider.call_count("export") == 1


def test_export_record_requires_synthesized(store, worker):
    rid = deduplicated_record(store, worker)
    client = make_client(full_scripts())
    with pytest.raises(VisCriticError):
        export_record(store, client, worker, rid, "mock-model", SETTINGS)
