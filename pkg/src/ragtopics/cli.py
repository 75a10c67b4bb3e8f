"""Command-line entry point.

Every subcommand writes into ``<artifact_dir>/<run_id>/`` and prints one
``SUMMARY {json}`` line last. Exit status: 0 success, 1 runtime failure
(the failing stage is named on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation, pipeline
from .agent import Transcript
from .config import RunConfig, load_config, override
from .topicmodel import RoundResult

logger = logging.getLogger("ragtopics")

ARTIFACT_LAYOUT = """\
artifact layout (per run directory <artifact_dir>/<run_id>/):
  config.json        resolved configuration (its hash prefixes run_id)
  manifest.json      one {doc_id, source_row, char_length, chunk_count} per document
  chunks.jsonl       chunk records with character spans
  index.bin          vector index (header + float32 rows)
  transcripts/       one agent transcript per round
  rounds/            one RoundResult per round
  reports/           validity / reliability / comparison tables (txt, json, csv)
  summary.json       the SUMMARY line payload
"""


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="run config file (YAML or JSON); flags override it")
    g.add_argument("--artifact-dir", help="root directory for run directories")
    g.add_argument("--seed", type=int)
    g.add_argument("--csv", dest="csv_path", help="corpus CSV (header row required)")
    g.add_argument("--text-column")
    g.add_argument("--dedup", action="store_true", default=None, help="collapse exact-duplicate texts")
    g.add_argument("--skip-malformed", action="store_true", default=None,
                   help="skip and count malformed CSV rows instead of failing")
    g.add_argument("--max-chars", type=int, help="chunk size in characters")
    g.add_argument("--overlap-chars", type=int)
    e = p.add_argument_group("embedders")
    e.add_argument("--embed-backend", choices=["deterministic_test", "remote_http", "sentence_transformers"])
    e.add_argument("--embed-model")
    e.add_argument("--embed-dim", type=int)
    e.add_argument("--embed-url")
    e.add_argument("--eval-backend", choices=["deterministic_test", "remote_http", "sentence_transformers"])
    e.add_argument("--eval-model")
    e.add_argument("--eval-dim", type=int)
    e.add_argument("--eval-url")
    r = p.add_argument_group("evaluation")
    r.add_argument("--floor", type=float, help="similarity floor for reverse retrieval")
    r.add_argument("--cap", type=int, help="max chunks retrieved per topic")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragtopics",
        description="Agentic-RAG topic modeling and topic-quality evaluation.",
        epilog=ARTIFACT_LAYOUT + "\nThe LLM credential is read from the env var named by llm.api_key_env "
               "(default OPENAI_API_KEY); the embedding credential from embedder.api_key_env.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="CSV -> manifest + chunks")
    _common(p)

    p = sub.add_parser("index", help="ingest, embed and persist the vector index")
    _common(p)

    p = sub.add_parser("run", help="run N agent rounds of topic extraction")
    _common(p)
    p.add_argument("--rounds", type=int)
    p.add_argument("--k", type=int, help="topics per round")
    p.add_argument("--word-limit", type=int)
    p.add_argument("--subject")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--max-parse-retries", type=int)
    p.add_argument("--retriever-k", type=int)
    p.add_argument("--concurrency", type=int, help="rounds run in parallel (default 1)")
    p.add_argument("--llm-backend", choices=["scripted", "http"])
    p.add_argument("--script", help="response script for the scripted backend")
    p.add_argument("--base-url", help="chat-completions base URL for the http backend")
    p.add_argument("--model", help="chat model name")
    p.add_argument("--temperature", type=float)

    ev = sub.add_parser("eval", help="validity or reliability metrics").add_subparsers(dest="metric", required=True)
    p = ev.add_parser("validity", help="weighted reverse-retrieval relevance of topic lists")
    _common(p)
    _topic_sources(p)
    p = ev.add_parser("reliability", help="anchor-round best-match similarity across rounds")
    _common(p)
    p.add_argument("--rounds-dir", help="directory of RoundResult or {name, labels} files, or a run directory")
    p.add_argument("--fixture", choices=["published"], help="use the bundled five published rounds")
    p.add_argument("--anchor", type=int, default=1, help="1-based anchor round (default 1)")
    p.add_argument("--full-matrix", action="store_true")

    bl = sub.add_parser("baseline", help="baseline topic models").add_subparsers(dest="baseline", required=True)
    p = bl.add_parser("lda", help="collapsed Gibbs LDA over the corpus")
    _common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--label-words", type=int)
    p.add_argument("--no-stemmer", action="store_true")

    p = sub.add_parser("compare", help="validity table over published lists and own rounds")
    _common(p)
    _topic_sources(p)
    p.add_argument("--with-lda", action="store_true", help="also fit and score the LDA baseline")

    p = sub.add_parser("report", help="render a run directory")
    p.add_argument("run_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _topic_sources(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fixtures", help="YAML file of {method_name, labels}; default: bundled published lists")
    p.add_argument("--method", action="append", help="restrict to these fixture method names (repeatable)")
    p.add_argument("--rounds-dir", help="also score rounds from this directory")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    a = vars(args)
    cfg.artifact_dir = a.get("artifact_dir") or cfg.artifact_dir
    if a.get("seed") is not None:
        cfg.seed = a["seed"]
    cfg.corpus = override(cfg.corpus, csv_path=a.get("csv_path"), text_column=a.get("text_column"),
                          dedup=a.get("dedup"), skip_malformed=a.get("skip_malformed"))
    cfg.chunking = override(cfg.chunking, max_chars=a.get("max_chars"), overlap_chars=a.get("overlap_chars"))
    cfg.index_embedder = override(cfg.index_embedder, backend=a.get("embed_backend"), model_name=a.get("embed_model"),
                                  dim=a.get("embed_dim"), base_url=a.get("embed_url"))
    cfg.eval_embedder = override(cfg.eval_embedder, backend=a.get("eval_backend"), model_name=a.get("eval_model"),
                                 dim=a.get("eval_dim"), base_url=a.get("eval_url"))
    cfg.eval = override(cfg.eval, floor=a.get("floor"), cap=a.get("cap"))
    cfg.topics = override(cfg.topics, rounds=a.get("rounds"), k=a.get("k") if args.command == "run" else None,
                          word_limit=a.get("word_limit"), subject=a.get("subject"), concurrency=a.get("concurrency"))
    cfg.agent = override(cfg.agent, max_steps=a.get("max_steps"), max_parse_retries=a.get("max_parse_retries"),
                         retriever_k=a.get("retriever_k"))
    cfg.llm = override(cfg.llm, backend=a.get("llm_backend"), script_path=a.get("script"), base_url=a.get("base_url"))
    cfg.llm = replace(cfg.llm, params=override(cfg.llm.params, model_name=a.get("model"),
                                               temperature=a.get("temperature"),
                                               seed=cfg.seed if cfg.llm.params.seed is None else None))
    if args.command == "baseline":
        cfg.lda = override(cfg.lda, k=a.get("k"), iterations=a.get("iterations"), label_words=a.get("label_words"),
                           stemmer=False if a.get("no_stemmer") else None)
    return cfg


def _fixtures(args, cfg: RunConfig) -> dict[str, list[str]]:
    fixtures = evaluation.load_fixtures(args.fixtures)
    if args.method:
        missing = set(args.method) - set(fixtures)
        if missing:
            raise ValueError(f"unknown fixture methods: {sorted(missing)}")
        fixtures = {m: fixtures[m] for m in args.method}
    elif args.command == "compare":
        fixtures = {m: fixtures[m] for m in (evaluation.AGENTIC_ROUNDS[0], evaluation.LLM_PROMPTING,
                                             evaluation.LDA_PUBLISHED)}
    if args.rounds_dir:
        names, lists = pipeline.load_rounds_dir(args.rounds_dir)
        for name, labels in zip(names, lists):
            fixtures[f"own_{name}"] = labels
    return fixtures


class Stage:
    """Tracks which stage is running so failures can name it."""

    name = "setup"


def _cmd_ingest(args, cfg, run_dir, stage):
    stage.name = "ingest"
    ing = pipeline.ingest(cfg, run_dir)
    return {"documents": len(ing.documents), "chunks": len(ing.chunks),
            "duplicates_collapsed": ing.duplicate_count, "malformed_skipped": ing.malformed_count}


def _cmd_index(args, cfg, run_dir, stage):
    stage.name = "index"
    ing, store = pipeline.index(cfg, run_dir)
    return {"documents": len(ing.documents), "chunks": len(ing.chunks), "dim": store.dim,
            "embedder": cfg.index_embedder.model_name}


def _cmd_run(args, cfg, run_dir, stage):
    stage.name = "run"
    outcomes = pipeline.run(cfg, run_dir)
    failed = [o.round_number for o in outcomes if not o.ok]
    for o in outcomes:
        if o.ok:
            print(f"round {o.round_number}: " + "; ".join(o.result.labels))
        else:
            print(f"round {o.round_number}: FAILED ({o.error})")
    info = {"rounds": len(outcomes), "succeeded": len(outcomes) - len(failed), "failed_rounds": failed}
    if failed:
        info["status"] = "failed"
    return info


def _cmd_validity(args, cfg, run_dir, stage):
    stage.name = "eval validity"
    reports = pipeline.validity_reports(cfg, run_dir, _fixtures(args, cfg))
    _write_validity(run_dir, reports, "validity")
    print(evaluation.format_validity_table(reports))
    return {"ranking": [{"method": r.method_name, "score": r.weighted_score} for r in reports]}


def _write_validity(run_dir: Path, reports, stem: str) -> None:
    rdir = run_dir / "reports"
    pipeline.write_json(rdir / f"{stem}.json", [r.to_dict() for r in reports])
    pipeline.write_text(rdir / f"{stem}.csv", evaluation.validity_csv(reports))
    pipeline.write_text(rdir / f"{stem}.txt", evaluation.format_validity_table(reports) + "\n")


def _cmd_reliability(args, cfg, run_dir, stage):
    stage.name = "eval reliability"
    if args.rounds_dir:
        names, lists = pipeline.load_rounds_dir(args.rounds_dir)
    elif args.fixture:
        fx = evaluation.load_fixtures()
        names = [f"R{i}" for i in range(1, 6)]
        lists = [fx[m] for m in evaluation.AGENTIC_ROUNDS]
    else:
        raise ValueError("give --rounds-dir or --fixture")
    if not 1 <= args.anchor <= len(lists):
        raise ValueError(f"--anchor must lie in 1..{len(lists)}")
    report = evaluation.reliability(lists, cfg.eval_embedder, args.anchor - 1, names, args.full_matrix)
    rdir = run_dir / "reports"
    pipeline.write_json(rdir / "reliability.json", report.to_dict())
    pipeline.write_text(rdir / "reliability.csv", evaluation.reliability_csv(report))
    pipeline.write_text(rdir / "reliability.txt", evaluation.format_reliability_table(report) + "\n")
    print(evaluation.format_reliability_table(report))
    return {"pairs": [{"pair": p, "score": v} for p, v in zip(report.pairs, report.scores_vs_anchor)]}


def _cmd_lda(args, cfg, run_dir, stage):
    stage.name = "baseline lda"
    model, topics = pipeline.lda_baseline(cfg, run_dir)
    for t in topics:
        print(f"topic {t.index}: {t.label}")
    return {"K": model.K, "vocab": len(model.vocab), "labels": [t.label for t in topics]}


def _cmd_compare(args, cfg, run_dir, stage):
    stage.name = "compare"
    fixtures = _fixtures(args, cfg)
    if args.with_lda:
        stage.name = "compare: baseline lda"
        _, topics = pipeline.lda_baseline(cfg, run_dir)
        fixtures["lda_baseline"] = [t.label for t in topics]
        stage.name = "compare"
    reports = pipeline.validity_reports(cfg, run_dir, fixtures)
    _write_validity(run_dir, reports, "compare")
    print(evaluation.format_validity_table(reports))
    return {"ranking": [{"method": r.method_name, "score": r.weighted_score} for r in reports]}


def report(run_dir: Path) -> tuple[str, dict]:
    """Render what a run directory contains; raises if it is not a run directory."""
    if not (run_dir / pipeline.CONFIG).exists():
        raise ValueError(f"{run_dir} is not a run directory (no {pipeline.CONFIG})")
    lines = [f"run directory: {run_dir}"]
    info: dict = {"run_dir": str(run_dir)}
    cfg = json.loads((run_dir / pipeline.CONFIG).read_text(encoding="utf-8"))
    lines.append(f"corpus: {cfg['corpus'].get('csv_path')}  index embedder: {cfg['index_embedder']['model_name']}")
    if (run_dir / pipeline.MANIFEST).exists():
        manifest = json.loads((run_dir / pipeline.MANIFEST).read_text(encoding="utf-8"))
        n_chunks = sum(m["chunk_count"] for m in manifest)
        lines.append(f"documents: {len(manifest)}  chunks: {n_chunks}")
        info["documents"] = len(manifest)
    rounds = sorted((run_dir / "rounds").glob("*.json")) if (run_dir / "rounds").is_dir() else []
    info["rounds"] = len(rounds)
    for path in rounds:
        rr = RoundResult.load(path)
        tpath = run_dir / "transcripts" / f"{rr.transcript_ref}.json"
        transcript = Transcript.load(tpath)
        n_tools = sum(1 for s in transcript.steps if s.kind == "tool_call")
        lines.append(f"\nround {rr.round_number} ({n_tools} tool calls, outcome {transcript.outcome}):")
        for t in rr.topics:
            flag = "  [over word limit]" if t.violates_word_limit else ""
            lines.append(f"  {t.index:2d}. {t.label}{flag}")
    tdir = run_dir / "transcripts"
    info["transcripts"] = len(list(tdir.glob("*.json"))) if tdir.is_dir() else 0
    rdir = run_dir / "reports"
    if rdir.is_dir():
        for txt in sorted(rdir.glob("*.txt")):
            lines.append(f"\n{txt.stem}:\n{txt.read_text(encoding='utf-8').rstrip()}")
    return "\n".join(lines), info


COMMANDS = {
    "ingest": _cmd_ingest,
    "index": _cmd_index,
    "run": _cmd_run,
    "compare": _cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    stage = Stage()
    summary: dict = {"command": args.command}
    try:
        if args.command == "report":
            stage.name = "report"
            run_dir = Path(args.run_dir)
            text, info = report(run_dir)
            print(text)
            pipeline.write_text(run_dir / "reports" / "report.md", "```\n" + text + "\n```\n")
            summary.update(info, run_id=run_dir.name, status="ok")
        else:
            stage.name = "config"
            cfg = resolve_config(args)
            run_id, run_dir = pipeline.new_run_dir(cfg)
            summary.update(run_id=run_id, run_dir=str(run_dir))
            if args.command == "eval":
                handler = _cmd_validity if args.metric == "validity" else _cmd_reliability
                summary["command"] = f"eval {args.metric}"
            elif args.command == "baseline":
                handler = _cmd_lda
                summary["command"] = "baseline lda"
            else:
                handler = COMMANDS[args.command]
            info = handler(args, cfg, run_dir, stage)
            summary["status"] = "ok"
            summary.update(info)
            pipeline.write_json(run_dir / "summary.json", summary)
    except Exception as exc:  # any runtime failure maps to exit 1 with the stage named
        logger.debug("stage %s failed", stage.name, exc_info=True)
        print(f"error: stage '{stage.name}' failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        summary.update(status="error", stage=stage.name, error=f"{type(exc).__name__}: {exc}")
        print("SUMMARY " + json.dumps(summary, sort_keys=True))
        return 1
    print("SUMMARY " + json.dumps(summary, sort_keys=True))
    return 0 if summary.get("status") == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
