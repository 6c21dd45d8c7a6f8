"""Command-line pipeline driver.

One process coordinates every stage against a record store: ingest,
LLM-backed curation and synthesis, rendering, the annotation studio
server, judging, and training-set export. Stage runners share a summary
shape {processed, succeeded, failed, skipped} whose counts always sum to
the number of eligible records, and they only touch records still
waiting at the stage boundary, so re-runs are no-ops on settled content.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import curator, evaluator, generator, studio, synthesizer
from .config import load_config, validate_config
from .errors import ConfigError, VisCriticError
from .extractor import extract_instances
from .llm import ChatClient, HttpProvider, MockProvider
from .model import make_record
from .preview import build_preview
from .prompts import available_prompts, get_template, render_prompt
from .render import RenderSettings, RenderWorker, default_worker_command
from .store import RecordStore
from .tasks import TaskStore, create_critique_tasks, create_dedup_tasks, create_selection_tasks


class Context:
    """Lazy handles shared by stage runners within one invocation."""

    def __init__(self, cfg: dict, store_dir: Path, mock: bool = False):
        self.cfg = cfg
        self.store_dir = store_dir
        self.mock = mock
        self._store: RecordStore | None = None
        self._tasks: TaskStore | None = None
        self._worker: RenderWorker | None = None
        self._clients: dict = {}
        self._mock_provider: MockProvider | None = None

    @property
    def store(self) -> RecordStore:
        if self._store is None:
            self._store = RecordStore(self.store_dir)
        return self._store

    @property
    def tasks(self) -> TaskStore:
        if self._tasks is None:
            self._tasks = TaskStore(self.store_dir)
        return self._tasks

    @property
    def settings(self) -> RenderSettings:
        render = self.cfg["render"]
        return RenderSettings(
            viewport_width=render["viewport_width"],
            viewport_height=render["viewport_height"],
            timeout_ms=render["timeout_ms"],
        )

    @property
    def worker(self) -> RenderWorker:
        if self._worker is None:
            command = self.cfg["render"]["command"] or default_worker_command()
            self._worker = RenderWorker(command)
        return self._worker

    def _cache_dir(self):
        configured = self.cfg["gateway"]["cache_dir"]
        if configured == "auto":
            return self.store_dir / "llm-cache"
        return configured or None

    def _mock(self) -> MockProvider:
        if self._mock_provider is None:
            scripts = None
            scripts_path = self.cfg["gateway"]["mock_scripts"]
            if scripts_path:
                scripts = json.loads(Path(scripts_path).read_text("utf-8"))
            self._mock_provider = MockProvider(scripts or {})
        return self._mock_provider

    def uses_mock(self, purpose: str) -> bool:
        return self.mock or self.cfg["models"][purpose]["provider"] == "mock"

    def client(self, purpose: str) -> ChatClient:
        block = self.cfg["models"][purpose]
        if self.uses_mock(purpose):
            key = "mock"
        else:
            key = ("http", block["base_url"], block["api_key_env"])
        if key not in self._clients:
            if key == "mock":
                provider = self._mock()
            else:
                api_key = os.environ.get(block["api_key_env"], "") if block["api_key_env"] else ""
                provider = HttpProvider(block["base_url"], api_key)
            gateway = self.cfg["gateway"]
            self._clients[key] = ChatClient(
                provider,
                cache_dir=self._cache_dir(),
                max_attempts=gateway["max_attempts"],
                base_delay=gateway["base_delay"],
                backoff_factor=gateway["backoff_factor"],
                jitter=gateway["jitter"],
                max_in_flight=self.cfg["concurrency"],
            )
        return self._clients[key]

    def model_name(self, purpose: str, override: str | None = None) -> str:
        return override or self.cfg["models"][purpose]["model"]

    def optional_client(self, purpose: str) -> ChatClient | None:
        """Structured replies need a script; a mock without one for this purpose cannot give them."""
        if self.uses_mock(purpose) and not self._mock().has_script(purpose):
            return None
        return self.client(purpose)

    def close(self) -> None:
        if self._worker is not None:
            self._worker.close()
            self._worker = None
        if self._tasks is not None:
            self._tasks.close()
            self._tasks = None
        if self._store is not None:
            self._store.close()
            self._store = None


def _summary() -> dict:
    return {"processed": 0, "succeeded": 0, "failed": 0, "skipped": 0, "failures": []}


def _attempt(summary: dict, record_id: str, fn) -> None:
    summary["processed"] += 1
    try:
        fn()
    except VisCriticError as exc:
        summary["failed"] += 1
        summary["failures"].append({"record_id": record_id, "reason": str(exc)})
    else:
        summary["succeeded"] += 1


def _skip(summary: dict) -> None:
    summary["processed"] += 1
    summary["skipped"] += 1


# --- stage runners --------------------------------------------------------------


def run_extract(ctx: Context, args) -> dict:
    summary = _summary()
    notebooks_dir = Path(getattr(args, "notebooks", None) or ctx.cfg["ingest"]["notebooks"])
    paths = sorted(notebooks_dir.glob("*.json")) + sorted(notebooks_dir.glob("*.ipynb"))
    if not paths:
        raise VisCriticError(f"no notebook files under {notebooks_dir}")
    seen = {
        (
            r["instance"]["source_notebook"],
            tuple(r["instance"]["cell_ids"]),
            r["instance"]["code"],
        )
        for r in ctx.store.query()
    }
    for path in paths:
        try:
            instances = extract_instances(path.read_bytes())
        except VisCriticError as exc:
            summary["processed"] += 1
            summary["failed"] += 1
            summary["failures"].append({"record_id": str(path), "reason": str(exc)})
            continue
        for instance, _unresolved in instances:
            key = (instance["source_notebook"], tuple(instance["cell_ids"]), instance["code"])
            if key in seen:
                _skip(summary)
                continue
            seen.add(key)
            _attempt(summary, instance["id"], lambda i=instance: ctx.store.append_record(make_record(i)))
    return summary


def run_render_all(ctx: Context, args) -> dict:
    result = generator.render_all(ctx.store, ctx.worker, ctx.settings)
    summary = _summary()
    for part in result.values():
        summary["succeeded"] += part["rendered"]
        summary["failed"] += part["failed"]
        summary["skipped"] += part["skipped"]
    summary["processed"] = summary["succeeded"] + summary["failed"] + summary["skipped"]
    return summary


def run_filter(ctx: Context, args) -> dict:
    summary = _summary()
    client = ctx.client("filter")
    model_name = ctx.model_name("filter")
    for record in ctx.store.query(stage="Ingested"):
        if record.get("dropped_reason") or not record["instance"].get("render_ref"):
            _skip(summary)
            continue
        _attempt(
            summary,
            record["id"],
            lambda rid=record["id"]: curator.filter_record(ctx.store, client, rid, model_name),
        )
    return summary


def run_classify(ctx: Context, args) -> dict:
    summary = _summary()
    client = ctx.client("classify")
    model_name = ctx.model_name("classify")
    for record in ctx.store.query(stage="Filtered"):
        verdict = record.get("filter_verdict") or {}
        done = record["instance"].get("typology_label") is not None
        if record.get("dropped_reason") or verdict.get("filtered") or done:
            _skip(summary)
            continue
        _attempt(
            summary,
            record["id"],
            lambda rid=record["id"]: curator.classify_record(ctx.store, client, rid, model_name),
        )
    return summary


def run_rounds(ctx: Context, args) -> dict:
    summary = _summary()
    round_size = getattr(args, "size", None) or ctx.cfg["selection"]["round_size"]
    created = create_selection_tasks(ctx.store, ctx.tasks, round_size=round_size)
    newly = sum(len(ctx.tasks.get(tid)["payload"]["record_ids"]) for tid in created)
    pool = [
        r
        for r in ctx.store.query(stage="Filtered")
        if not r.get("dropped_reason") and not (r.get("filter_verdict") or {}).get("filtered")
    ]
    summary["processed"] = len(pool)
    summary["succeeded"] = newly
    summary["skipped"] = len(pool) - newly
    summary["tasks_created"] = created
    return summary


def run_dedup(ctx: Context, args) -> dict:
    threshold = getattr(args, "threshold", None)
    if threshold is None:
        threshold = ctx.cfg["simhash"]["threshold"]
    result = curator.dedup_records(ctx.store, threshold=threshold, shingle=ctx.cfg["simhash"]["shingle"])
    created = create_dedup_tasks(ctx.store, ctx.tasks, result["pending_review"])
    summary = _summary()
    summary["succeeded"] = len(result["kept"])
    summary["skipped"] = len(result["pending_review"])
    summary["processed"] = summary["succeeded"] + summary["skipped"]
    summary["pending_review"] = result["pending_review"]
    summary["tasks_created"] = created
    return summary


def run_synth(ctx: Context, args) -> dict:
    summary = _summary()
    client = ctx.client("instruct")
    model_name = ctx.model_name("instruct")
    for record in ctx.store.query(stage="Deduplicated"):
        if record.get("dropped_reason"):
            _skip(summary)
            continue
        _attempt(
            summary,
            record["id"],
            lambda rid=record["id"]: synthesizer.synthesize_record(
                ctx.store, client, ctx.worker, rid, model_name, ctx.settings
            ),
        )
    return summary


def run_export(ctx: Context, args) -> dict:
    summary = _summary()
    client = ctx.client("export")
    model_name = ctx.model_name("export")
    threshold = ctx.cfg["export"]["similarity_threshold"]
    for record in ctx.store.query(stage="Synthesized"):
        if record.get("dropped_reason"):
            _skip(summary)
            continue
        _attempt(
            summary,
            record["id"],
            lambda rid=record["id"]: synthesizer.export_record(
                ctx.store, client, ctx.worker, rid, model_name, ctx.settings, threshold
            ),
        )
    return summary


def run_generate(ctx: Context, args) -> dict:
    summary = _summary()
    client = ctx.client("generate")
    model_name = ctx.model_name("generate", getattr(args, "model", None))
    for record in ctx.store.query(stage="Exported"):
        if record.get("dropped_reason"):
            _skip(summary)
            continue
        _attempt(
            summary,
            record["id"],
            lambda rid=record["id"]: generator.generate_visualization(ctx.store, client, rid, model_name),
        )
    return summary


def run_critique_tasks(ctx: Context, args) -> dict:
    client = ctx.optional_client("suggest")
    created = create_critique_tasks(
        ctx.store,
        ctx.tasks,
        client=client,
        model_name=ctx.model_name("suggest"),
        n_suggestions=ctx.cfg["studio"]["suggestions"],
    )
    summary = _summary()
    summary["processed"] = summary["succeeded"] = len(created)
    summary["tasks_created"] = created
    return summary


STAGE_RUNNERS = {
    "extract": run_extract,
    "render-all": run_render_all,
    "filter": run_filter,
    "classify": run_classify,
    "rounds": run_rounds,
    "dedup": run_dedup,
    "synth": run_synth,
    "export": run_export,
    "generate": run_generate,
    "critique-tasks": run_critique_tasks,
}


# --- non-stage commands ------------------------------------------------------------


def cmd_validate(ctx: Context, args) -> int:
    if not args.config:
        raise ConfigError("validate needs --config pointing at the file to check")
    normalized = validate_config(args.config)
    print(json.dumps(normalized, indent=2, sort_keys=True))
    return 0


def cmd_preview(ctx: Context, args) -> int:
    records = (
        [ctx.store.get(args.record)] if args.record else ctx.store.query(stage="Exported")
    )
    for record in records:
        bundle = record.get("dataset")
        if not bundle:
            raise VisCriticError(f"record {record['id']} has no exported dataset")
        files = []
        for f in bundle["files"]:
            data = ctx.store.blobs.get(f["blob_ref"])
            files.append(
                {
                    "file_name": f["file_name"],
                    "file_type": f["file_type"],
                    "preview": build_preview(f["file_type"], data),
                }
            )
        print(json.dumps({"record_id": record["id"], "files": files}, sort_keys=True))
    return 0


def cmd_improve(ctx: Context, args) -> int:
    feedback = Path(args.feedback_file).read_text("utf-8").strip()
    turn = generator.improve_visualization(
        ctx.store,
        ctx.client("improve"),
        args.record,
        feedback,
        ctx.model_name("improve"),
    )
    print(json.dumps({"record_id": args.record, "turn_index": turn["turn_index"]}))
    return 0


def cmd_serve(ctx: Context, args) -> int:
    studio_cfg = ctx.cfg["studio"]
    tokens = _parse_tokens(os.environ.get(studio_cfg["tokens_env"], ""))
    assets_dir = studio_cfg["assets"] or None
    if assets_dir is not None and not Path(assets_dir).is_dir():
        raise ConfigError(f"studio.assets dir not found: {assets_dir}")
    app = studio.build_app(
        ctx.store,
        ctx.tasks,
        client=ctx.optional_client("improve"),
        renderer=ctx.worker,
        render_settings=ctx.settings,
        tokens=tokens,
        improve_model=ctx.model_name("improve"),
        assets_dir=assets_dir,
    )
    host = args.host or studio_cfg["host"]
    port = args.port or studio_cfg["port"]
    print(f"studio listening on http://{host}:{port}")
    studio.serve(app, host=host, port=port)
    return 0


def _parse_tokens(raw: str) -> dict[str, str]:
    tokens = {}
    for pair in filter(None, (p.strip() for p in raw.split(","))):
        if ":" not in pair:
            raise ConfigError(f"token entry {pair!r} must look like token:annotator")
        token, annotator = pair.split(":", 1)
        tokens[token.strip()] = annotator.strip()
    return tokens


def _load_candidates(path: str) -> dict[str, str]:
    """A JSON object, or JSONL of {record_id, text}, mapping records to feedback."""
    text = Path(path).read_text("utf-8").strip()
    if text.startswith("{") and "\n{" not in text:
        loaded = json.loads(text)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected an object mapping record ids to text")
        return {str(k): str(v) for k, v in loaded.items()}
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        out[row["record_id"]] = row["text"]
    return out


def cmd_judge(ctx: Context, args) -> int:
    split = "test" if args.test_split else None
    client = ctx.client("judge")
    judge_model = ctx.model_name("judge")
    if args.candidates:
        candidates = _load_candidates(args.candidates)
        source = args.source or "file"
    else:
        critic = ctx.client("critique_predict")
        critic_model = ctx.model_name("critique_predict")
        source = args.source or f"model:{critic_model}"
        candidates = {}
        for record in ctx.store.query(stage="Critiqued", split=split):
            if record.get("dropped_reason"):
                continue
            candidates[record["id"]] = evaluator.predict_critique(critic, ctx.store, record, critic_model)
    summary = evaluator.judge_records(
        ctx.store,
        client,
        judge_model,
        candidates,
        candidate_source=source,
        split=split,
        temperature=ctx.cfg["models"]["judge"]["temperature"],
    )
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_pairwise(ctx: Context, args) -> int:
    sides = []
    for part in args.pair.split(","):
        if "=" not in part:
            raise ConfigError("--pair must look like name1=file1,name2=file2")
        name, path = part.split("=", 1)
        sides.append((name.strip(), _load_candidates(path.strip())))
    if len(sides) != 2:
        raise ConfigError("--pair needs exactly two name=file entries")
    split = "test" if args.test_split else None
    result = evaluator.run_pairwise(
        ctx.store,
        ctx.client("pairwise"),
        ctx.model_name("pairwise"),
        sides=(sides[0][0], sides[1][0]),
        candidates_1=sides[0][1],
        candidates_2=sides[1][1],
        split=split,
        seed_base=ctx.cfg["splits"]["seed"],
    )
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_report(ctx: Context, args) -> int:
    results = ctx.store.evaluations()
    text = evaluator.format_report(evaluator.aggregate(results))
    if args.out:
        Path(args.out).write_text(text, "utf-8")
        print(f"report written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_export_train(ctx: Context, args) -> int:
    if args.assign_test is not None:
        counts = ctx.store.assign_splits(
            args.assign_test,
            seed=args.split_seed if args.split_seed is not None else ctx.cfg["splits"]["seed"],
            strategy=args.split_strategy or ctx.cfg["splits"]["strategy"],
        )
        print(json.dumps({"splits_assigned": counts}, sort_keys=True))
    summary = evaluator.export_training_set(ctx.store, args.split, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_run(ctx: Context, args) -> int:
    exit_code = 0
    for stage in args.stages:
        summary = STAGE_RUNNERS[stage](ctx, args)
        print(json.dumps({"stage": stage, **summary}, sort_keys=True))
        if summary["failed"]:
            exit_code = 1
    return exit_code


def dump_prompts(out_dir: str) -> int:
    """Render every registered prompt with placeholder stubs, no provider calls."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in available_prompts():
        template = get_template(name)
        bindings = {p: f"<{p}>" for p in template.placeholders}
        (out / f"{name}.txt").write_text(render_prompt(name, bindings).text, "utf-8")
    print(f"wrote {len(available_prompts())} prompts to {out}")
    return 0


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viscritic",
        description="Visualization-critique dataset pipeline.",
    )
    parser.add_argument("--store", help="record store directory (default from config)")
    parser.add_argument("--config", help="YAML config file; defaults apply when omitted")
    parser.add_argument("--concurrency", type=int, help="gateway in-flight request cap")
    parser.add_argument("--mock", action="store_true", help="force the mock provider everywhere")
    parser.add_argument(
        "--dry-run",
        metavar="DIR",
        help="render all prompts with placeholder stubs into DIR and exit",
    )
    sub = parser.add_subparsers(dest="command")

    for stage in ("extract", "filter", "classify", "synth", "export", "render-all"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        if stage == "extract":
            p.add_argument("--notebooks", help="directory of notebook files")
    dedup = sub.add_parser("dedup", help="near-duplicate clustering over selected records")
    dedup.add_argument("--threshold", type=int, help="max hamming distance (default from config)")
    rounds = sub.add_parser("rounds", help="queue selection rounds for annotators")
    rounds.add_argument("--size", type=int, help="instances per round (default from config)")
    sub.add_parser("critique-tasks", help="queue critique tasks for renderable generations")
    sub.add_parser("validate", help="check --config and echo the normalized result")
    preview = sub.add_parser("preview", help="print dataset previews for exported records")
    preview.add_argument("--record", help="limit to one record id")
    generate = sub.add_parser("generate", help="run the generation stage")
    generate.add_argument("--model", help="generator model override")
    improve = sub.add_parser("improve", help="append an improvement turn to one record")
    improve.add_argument("--record", required=True)
    improve.add_argument("--feedback-file", required=True)
    serve = sub.add_parser("serve", help="start the annotation studio API")
    serve.add_argument("--port", type=int)
    serve.add_argument("--host")
    judge = sub.add_parser("judge", help="Likert-judge candidate critiques")
    judge.add_argument("--test-split", action="store_true", help="restrict to the test split")
    judge.add_argument("--candidates", help="JSON/JSONL file mapping record ids to feedback")
    judge.add_argument("--source", help="label stored as the candidate source")
    pairwise = sub.add_parser("pairwise", help="randomized-order pairwise comparison")
    pairwise.add_argument("--pair", required=True, help="name1=file1,name2=file2 candidate files")
    pairwise.add_argument("--test-split", action="store_true")
    report = sub.add_parser("report", help="aggregate stored evaluation results")
    report.add_argument("--out", help="write the report here instead of stdout")
    export_train = sub.add_parser("export-train", help="write the fine-tuning JSONL")
    export_train.add_argument("--out", required=True)
    export_train.add_argument("--split", default="train")
    export_train.add_argument("--assign-test", type=int, help="assign splits first: test count")
    export_train.add_argument("--split-seed", type=int)
    export_train.add_argument("--split-strategy", choices=("uniform", "by_typology"))
    run = sub.add_parser("run", help="run a sequence of stages")
    run.add_argument("stages", nargs="+", choices=sorted(STAGE_RUNNERS), metavar="stage")
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "preview": cmd_preview,
    "improve": cmd_improve,
    "serve": cmd_serve,
    "judge": cmd_judge,
    "pairwise": cmd_pairwise,
    "report": cmd_report,
    "export-train": cmd_export_train,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dry_run:
        return dump_prompts(args.dry_run)
    if not args.command:
        parser.error("a subcommand is required (or --dry-run DIR)")
    try:
        cfg = load_config(args.config)
        if args.concurrency is not None:
            if args.concurrency < 1:
                raise ConfigError("concurrency must be at least 1")
            cfg["concurrency"] = args.concurrency
        store_dir = Path(args.store or cfg["store"])
        ctx = Context(cfg, store_dir, mock=args.mock)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command in STAGE_RUNNERS:
            summary = STAGE_RUNNERS[args.command](ctx, args)
            print(json.dumps({"stage": args.command, **summary}, sort_keys=True))
            return 1 if summary["failed"] else 0
        return COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (VisCriticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted, draining", file=sys.stderr)
        return 130
    finally:
        ctx.close()


if __name__ == "__main__":
    sys.exit(main())
