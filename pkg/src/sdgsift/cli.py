"""Command-line entry point: ingest, classify, ensemble, report, cache stats.

Logs go to stderr; data goes to files and stdout. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import analytics, corpus, ensemble, evaluation, prompting, registry, store
from .backend import (
    BackendUnavailableError,
    CompletionBackend,
    CredentialError,
    ModelConfig,
    ReplayBackend,
    ScriptMissError,
    load_replay_script,
)
from .config import ConfigError, PipelineConfig, load_config

logger = logging.getLogger("sdgsift")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _load_registry(cfg: PipelineConfig) -> registry.Registry:
    if cfg.registry_path is not None:
        return registry.load_registry(cfg.registry_path)
    return registry.default_registry()


def _prompt_spec_for_goal(cfg: PipelineConfig, goal: int) -> prompting.PromptSpec:
    for path in cfg.prompt_spec_paths:
        spec = prompting.load_prompt_spec(path)
        if spec.goal_number == goal:
            return spec
    if goal == 1:
        return prompting.default_prompt_spec()
    raise ConfigError(f"no prompt spec configured for goal {goal}")


def _validate_goal(goal: int) -> int:
    if not corpus.GOAL_MIN <= goal <= corpus.GOAL_MAX:
        raise ConfigError(
            f"goal must be in {corpus.GOAL_MIN}..{corpus.GOAL_MAX}, got {goal}"
        )
    return goal


def _make_backend(cfg: ModelConfig, replay_path: Path | None) -> CompletionBackend | None:
    """Completion source for one model; patched in tests to instrument calls."""
    if replay_path is not None:
        return ReplayBackend(load_replay_script(replay_path), cfg.model_id)
    return None  # judge_corpus constructs the live HTTP backend


def _out_dir(args: argparse.Namespace, cfg: PipelineConfig) -> Path:
    if args.out_dir is not None:
        return Path(args.out_dir)
    if cfg.output_dir is not None:
        return cfg.output_dir
    return Path("out")


def _read_corpus_files(paths: list[Path]) -> list[corpus.Document]:
    docs: list[corpus.Document] = []
    for path in paths:
        if not path.exists():
            raise ConfigError(f"corpus file does not exist: {path}")
        with open(path, "r", encoding="utf-8") as fp:
            docs.extend(corpus.read_corpus(fp))
    keys = [d.doc_key for d in docs]
    if len(set(keys)) != len(keys):
        raise ConfigError(
            "corpus contains duplicate doc_keys; re-run ingest to merge duplicates"
        )
    return docs


def cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    out_path = Path(args.out)
    all_records: list[corpus.RawRecord] = []
    all_errors: list[corpus.RowError] = []
    for in_path in args.inputs:
        path = Path(in_path)
        if not path.exists():
            raise ConfigError(f"input file does not exist: {path}")
        fmt = args.format or {"csv": "csv", "jsonl": "jsonl", "ndjson": "jsonl"}.get(
            path.suffix.lstrip(".").lower()
        )
        if fmt is None:
            raise ConfigError(
                f"cannot infer format of {path}; pass --format csv|jsonl"
            )
        with open(path, "r", encoding="utf-8", newline="") as fp:
            records, errors = corpus.ingest_records(fp, fmt)
        for err in errors:
            logger.warning("%s line %d: %s", path, err.line, err.message)
        all_records.extend(records)
        all_errors.extend(errors)

    documents, rejections = corpus.validate_batch(all_records)
    merged = corpus.merge_duplicates(documents)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fp:
        corpus.write_corpus(merged, fp)
    logger.info(
        "ingested=%d rejected=%d row_errors=%d merged=%d documents=%d",
        len(all_records), len(rejections), len(all_errors),
        len(documents) - len(merged), len(merged),
    )
    return EXIT_OK


def _select_models(args: argparse.Namespace, cfg: PipelineConfig) -> list[ModelConfig]:
    if not cfg.models:
        raise ConfigError("no models configured; classify needs at least one [[models]] entry")
    if args.models in (None, "all"):
        return list(cfg.models)
    wanted = [m.strip() for m in args.models.split(",") if m.strip()]
    if not wanted:
        raise ConfigError("--models selected no models")
    return [cfg.model_by_id(m) for m in wanted]


def cmd_classify(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    goal = _validate_goal(args.goal)
    reg = _load_registry(cfg)
    spec = _prompt_spec_for_goal(cfg, goal)
    spec.validate(reg)
    models = _select_models(args, cfg)
    out_dir = _out_dir(args, cfg)
    replay_path = Path(args.replay) if args.replay else None
    if replay_path is not None and not replay_path.exists():
        raise ConfigError(f"replay script does not exist: {replay_path}")

    corpus_paths = [Path(args.corpus)] if args.corpus else list(cfg.corpus_paths)
    if not corpus_paths:
        raise ConfigError("no corpus given; pass --corpus or set [corpus] paths")
    docs = _read_corpus_files(corpus_paths)
    logger.info("loaded %d documents from %d file(s)", len(docs), len(corpus_paths))

    cache_path = Path(args.cache) if args.cache else cfg.cache_path
    if cache_path is None:
        cache_path = out_dir / "cache.jsonl"
    workers = args.workers if args.workers is not None else cfg.workers

    any_success = False
    any_records = False
    with store.VerdictCache(cache_path) as cache:
        for model_cfg in models:
            backend = _make_backend(model_cfg, replay_path)

            def report_progress(done: int, total: int, _model: str = model_cfg.model_id) -> None:
                if done == total or done % 200 == 0:
                    logger.info("model=%s judged %d/%d", _model, done, total)

            try:
                run = evaluation.judge_corpus(
                    docs, goal, spec, model_cfg, cache, reg,
                    workers=workers, backend=backend, progress=report_progress,
                )
            except CredentialError as exc:
                raise ConfigError(f"model {model_cfg.model_id}: {exc}") from exc
            run_dir = out_dir / "runs" / f"goal{goal}" / model_cfg.model_id
            store.save_run_result(run, run_dir)
            counts = run.counts()
            any_records = any_records or bool(run.records)
            judged = counts["relevant"] + counts["nonrelevant"]
            any_success = any_success or judged > 0
            hit_pct = (
                100 * counts["cache_hits"] // len(run.records) if run.records else 0
            )
            logger.info(
                "model=%s records=%d relevant=%d nonrelevant=%d parse_failures=%d "
                "backend_failures=%d skipped=%d cache hits: %d%%",
                model_cfg.model_id, len(run.records), counts["relevant"],
                counts["nonrelevant"], counts["parse_failures"],
                counts["backend_failures"], counts["skipped"], hit_pct,
            )
            logger.info("wrote %s", run_dir / store.VERDICTS_FILENAME)

    if any_records and not any_success:
        logger.error("no document was judged successfully by any model")
        return EXIT_RUNTIME
    return EXIT_OK


def _runs_dir(args: argparse.Namespace, cfg: PipelineConfig, goal: int) -> Path:
    if args.runs_dir is not None:
        return Path(args.runs_dir)
    return _out_dir(args, cfg) / "runs" / f"goal{goal}"


def _load_runs(runs_dir: Path, members: list[str] | None) -> list[evaluation.RunResult]:
    if not runs_dir.exists():
        raise ConfigError(f"runs directory does not exist: {runs_dir}")
    model_dirs = sorted(
        d for d in runs_dir.iterdir() if (d / store.MANIFEST_FILENAME).exists()
    )
    if members:
        by_name = {d.name: d for d in model_dirs}
        missing = [m for m in members if m not in by_name]
        if missing:
            raise ConfigError(f"member run(s) not found under {runs_dir}: {missing}")
        model_dirs = [by_name[m] for m in members]
    if not model_dirs:
        raise ConfigError(f"no runs found under {runs_dir}")
    return [store.load_run_result(d) for d in model_dirs]


def cmd_ensemble(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    goal = _validate_goal(args.goal)
    rule = args.rule or cfg.ensemble.rule
    if rule not in ensemble.RULES:
        raise ConfigError(f"unknown ensemble rule {rule!r}")
    members = (
        [m.strip() for m in args.members.split(",")]
        if args.members
        else list(cfg.ensemble.members) or None
    )
    runs = _load_runs(_runs_dir(args, cfg, goal), members)
    stage_order = (
        [m.strip() for m in args.stages.split(",")]
        if args.stages
        else list(cfg.ensemble.stage_order) or None
    )
    try:
        results = ensemble.combine_runs(runs, rule, stage_order=stage_order)
    except ensemble.EnsembleError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME

    out_path = Path(args.out) if args.out else _out_dir(args, cfg) / "panel.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fp:
        ensemble.write_panel(results, fp)

    decided = [r for r in results if r.combined is not None]
    undecided = len(results) - len(decided)
    relevant = sum(1 for r in decided if r.combined == evaluation.RELEVANT)
    rate = float(100 * Fraction(relevant, len(decided))) if decided else 0.0
    print(f"rule={rule} documents={len(results)} combined_relevant_pct={rate:.1f} "
          f"undecided={undecided}")
    if rule == "cascade":
        consulted: dict[str, int] = {}
        for result in results:
            for model_id, _ in result.stage_trace:
                consulted[model_id] = consulted.get(model_id, 0) + 1
        for model_id, count in consulted.items():
            print(f"stage={model_id} invocations={count}")
    logger.info("wrote %s", out_path)
    return EXIT_OK


def cmd_report(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    goal = _validate_goal(args.goal)
    members = [m.strip() for m in args.members.split(",")] if args.members else None
    runs = _load_runs(_runs_dir(args, cfg, goal), members)
    if len(runs) != 3:
        raise ConfigError(
            f"report needs exactly 3 runs, found {len(runs)} under the runs directory"
        )
    try:
        report = analytics.build_report(runs, goal)
        report_dir = Path(args.report_dir) if args.report_dir else _out_dir(args, cfg) / "report"
        paths = analytics.emit_report(report, report_dir)
    except (analytics.EmptyRunError, analytics.UndefinedComparisonError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME

    print("model_id,n_judged,n_failures,pct_relevant,pct_nonrelevant")
    for s in report.runs:
        print(
            f"{s.model_id},{s.n_judged},{s.n_failures},"
            f"{s.pct_relevant:.1f},{s.pct_nonrelevant:.1f}"
        )
    for path in paths:
        logger.info("wrote %s", path)
    return EXIT_OK


def cmd_cache_stats(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cache_path = Path(args.cache) if args.cache else cfg.cache_path
    if cache_path is None:
        raise ConfigError("no cache path given; pass --cache or set [cache] path")
    if not cache_path.exists():
        raise ConfigError(f"cache file does not exist: {cache_path}")
    with store.VerdictCache(cache_path) as cache:
        stats = cache.stats()
    print(
        f"path={stats.path} live={stats.live} redundant={stats.redundant} "
        f"size_bytes={stats.size_bytes}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdgsift",
        description=(
            "Judge keyword-retrieved scholarly abstracts for genuine contribution "
            "to UN SDG targets with LLM evaluation agents."
        ),
    )
    parser.add_argument("--config", help="TOML pipeline config file")
    parser.add_argument("--out-dir", help="output directory (default: config or ./out)")
    parser.add_argument("--replay", help="JSONL replay script for offline classification")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="ingest, clean, and deduplicate records")
    p_ingest.add_argument("--in", dest="inputs", action="append", required=True,
                          help="input CSV/JSONL file (repeatable)")
    p_ingest.add_argument("--format", choices=("csv", "jsonl"),
                          help="input format (default: from file extension)")
    p_ingest.add_argument("--out", required=True, help="output corpus JSONL")
    p_ingest.set_defaults(func=cmd_ingest)

    p_classify = sub.add_parser("classify", help="judge a corpus with configured models")
    p_classify.add_argument("--goal", type=int, required=True, help="SDG goal number")
    p_classify.add_argument("--corpus", help="corpus JSONL (default: config [corpus] paths)")
    p_classify.add_argument("--models", help='"all" or comma-separated model ids')
    p_classify.add_argument("--workers", type=int, help="parallel judging workers")
    p_classify.add_argument("--cache", help="verdict cache path")
    p_classify.set_defaults(func=cmd_classify)

    p_ensemble = sub.add_parser("ensemble", help="combine member runs into panel labels")
    p_ensemble.add_argument("--goal", type=int, required=True)
    p_ensemble.add_argument("--rule", choices=ensemble.RULES)
    p_ensemble.add_argument("--runs-dir", help="directory holding per-model run dirs")
    p_ensemble.add_argument("--members", help="comma-separated member model ids")
    p_ensemble.add_argument("--stages", help="comma-separated cascade stage order")
    p_ensemble.add_argument("--out", help="panel output path")
    p_ensemble.set_defaults(func=cmd_ensemble)

    p_report = sub.add_parser("report", help="emit agreement report over three runs")
    p_report.add_argument("--goal", type=int, required=True)
    p_report.add_argument("--runs-dir", help="directory holding per-model run dirs")
    p_report.add_argument("--members", help="comma-separated member model ids")
    p_report.add_argument("--report-dir", help="where to write report files")
    p_report.set_defaults(func=cmd_report)

    p_cache = sub.add_parser("cache", help="cache inspection")
    cache_sub = p_cache.add_subparsers(dest="cache_command", required=True)
    p_stats = cache_sub.add_parser("stats", help="print cache statistics")
    p_stats.add_argument("--cache", help="verdict cache path")
    p_stats.set_defaults(func=cmd_cache_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        return args.func(args, cfg)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except registry.RegistryError as exc:
        logger.error("registry: %s", exc)
        return EXIT_USAGE
    except prompting.PromptSpecError as exc:
        logger.error("prompt spec: %s", exc)
        return EXIT_USAGE
    except corpus.IngestError as exc:
        logger.error("ingest: %s", exc)
        return EXIT_USAGE
    except registry.UnknownGoalError as exc:
        logger.error("registry: %s", exc)
        return EXIT_USAGE
    except ScriptMissError as exc:
        logger.error("replay script: %s", exc)
        return EXIT_RUNTIME
    except (BackendUnavailableError, corpus.RetrievalError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
