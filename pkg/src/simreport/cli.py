"""Command-line entry point wiring config files to the generator, the
report pipelines and the judging harness.

All human-facing output goes to stderr; stdout carries one JSON object
per invocation when ``--json`` is set, and nothing otherwise.  Exit codes:
0 success, 2 config error, 3 ingest error, 4 extraction failure, 5 tool
error, 6 transport error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import evalscore, llm, pipeline, render, simgen
from .errors import (
    AuthError,
    BackendError,
    ChartError,
    ConfigError,
    ExtractionFailed,
    IngestError,
    IoError,
    JudgeParseError,
    MetricError,
    MockExhausted,
    MockMismatch,
    RenderError,
    ScoreError,
    SimReportError,
    ToolError,
    ToolParseError,
    TransportError,
)

EXIT_USAGE = 64

log = logging.getLogger("simreport")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _exit_code_for(exc: SimReportError) -> int:
    if isinstance(exc, (ConfigError, ScoreError)):
        return pipeline.EXIT_CONFIG
    if isinstance(exc, IngestError):
        return pipeline.EXIT_INGEST
    if isinstance(exc, (ExtractionFailed, JudgeParseError)):
        return pipeline.EXIT_EXTRACTION
    if isinstance(exc, (ToolError, ToolParseError, ChartError, MetricError,
                        RenderError, IoError)):
        return pipeline.EXIT_TOOL
    if isinstance(exc, (TransportError, BackendError, AuthError, MockMismatch,
                        MockExhausted)):
        return pipeline.EXIT_TRANSPORT
    return 1


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the seed from the config file")
    common.add_argument("--mock-script", metavar="FILE", default=None,
                        help="use a scripted mock backend from this JSON file")
    common.add_argument("--verbose", action="store_true",
                        help="debug logging on stderr")
    common.add_argument("--json", action="store_true", dest="json_output",
                        help="print one machine-readable JSON object on stdout")

    parser = _Parser(prog="simreport",
                     description="Simulation-deduction report generation and judging.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a synthetic experiment directory")
    p.add_argument("--config", required=True, help="simgen.json")
    p.add_argument("--out", required=True, help="experiment output directory")

    p = sub.add_parser("generate", parents=[common],
                       help="run the staged report pipeline")
    p.add_argument("--config", required=True, help="run config.json")

    p = sub.add_parser("baseline", parents=[common],
                       help="run the single-shot baseline (one model call, no tools)")
    p.add_argument("--config", required=True, help="run config.json")

    p = sub.add_parser("summarize", parents=[common],
                       help="condense a report D bundle into a case summary")
    p.add_argument("--case", required=True, help="case directory (with case.json)")
    p.add_argument("--report", default=None,
                   help="report D out_dir (default: <case>/report_d)")
    p.add_argument("--out", default=None,
                   help="where to write summary.json/.md (default: the report dir)")

    p = sub.add_parser("score", parents=[common],
                       help="score a generated report with judges")
    p.add_argument("--report", required=True, help="path of report.md")
    p.add_argument("--judges", default=None, help="judges config JSON")
    p.add_argument("--human", default=None, help="scores_human.csv")
    p.add_argument("--out", default=None,
                   help="scores.json path (default: next to the report)")

    p = sub.add_parser("compare", parents=[common],
                       help="pivot scores.json files into the comparison grid")
    p.add_argument("--runs", required=True, help="directory scanned for scores.json")
    p.add_argument("--out", default=None,
                   help="output directory (default: the runs directory)")

    p = sub.add_parser("validate-config", parents=[common],
                       help="parse a run config and check its input roles")
    p.add_argument("--config", required=True, help="run config.json")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {
        "simulate": _cmd_simulate,
        "generate": _cmd_generate,
        "baseline": _cmd_baseline,
        "summarize": _cmd_summarize,
        "score": _cmd_score,
        "compare": _cmd_compare,
        "validate-config": _cmd_validate_config,
    }[args.command]
    try:
        payload = handler(args)
    except SimReportError as exc:
        stage = getattr(exc, "stage_name", None)
        where = f" [stage {stage}]" if stage else ""
        log.error("%s%s: %s", type(exc).__name__, where, exc)
        log.debug("traceback", exc_info=True)
        return _exit_code_for(exc)
    if args.json_output:
        print(json.dumps(payload, ensure_ascii=False))
    return pipeline.EXIT_OK


def _cmd_simulate(args) -> dict[str, Any]:
    config, factors, trials_per_case = simgen.load_sim_config(
        args.config, seed_override=args.seed)
    manifest = simgen.generate_experiment(config, factors, trials_per_case, args.out)
    n_cases = max(1, len(list(manifest.parent.glob("cases/*"))))
    log.info("wrote experiment manifest %s (%d cases x %d trials)",
             manifest, n_cases, trials_per_case)
    return {"manifest": str(manifest), "cases": n_cases,
            "trials_per_case": trials_per_case}


def _load_config(args) -> pipeline.RunConfig:
    return pipeline.load_run_config(args.config, seed_override=args.seed,
                                    mock_script=args.mock_script)


def _cmd_generate(args) -> dict[str, Any]:
    config = _load_config(args)
    bundle = pipeline.run_report(config)
    log.info("report %s written under %s", bundle.report_type, config.out_dir)
    return {"out_dir": str(config.out_dir),
            "report": str(config.out_dir / "report.md"),
            "figures": len(bundle.figures)}


def _cmd_baseline(args) -> dict[str, Any]:
    config = _load_config(args)
    bundle = pipeline.run_baseline(config)
    log.info("baseline report %s written under %s", bundle.report_type,
             config.out_dir)
    return {"out_dir": str(config.out_dir),
            "report": str(config.out_dir / "report.md"),
            "figures": len(bundle.figures)}


def _cmd_summarize(args) -> dict[str, Any]:
    case_dir = Path(args.case)
    report_dir = Path(args.report) if args.report else case_dir / "report_d"
    summary = pipeline.summarize_case(case_dir, report_dir, out_dir=args.out)
    out_dir = Path(args.out) if args.out else report_dir
    log.info("case %s summarized: goal achieved in %d of %d trials",
             summary.case_id, summary.goal_count, summary.n_trials)
    return {"summary": str(out_dir / "summary.json"),
            "case_id": summary.case_id, "goal_count": summary.goal_count}


def _load_judges(judges_path: str) -> list[tuple[str, Any]]:
    path = Path(judges_path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read judges config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("judges"), list):
        raise ConfigError("judges config needs a top-level 'judges' array")
    judges = []
    for raw in obj["judges"]:
        if not isinstance(raw, dict) or "judge_id" not in raw:
            raise ConfigError("each judge needs a judge_id")
        judge_id = raw["judge_id"]
        if "mock_script" in raw:
            backend: Any = llm.load_mock_script(path.parent / raw["mock_script"])
        elif "backend" in raw:
            backend = llm.BackendConfig(**raw["backend"])
        else:
            raise ConfigError(f"judge {judge_id!r} needs a backend or mock_script")
        judges.append((judge_id, backend))
    return judges


def _cmd_score(args) -> dict[str, Any]:
    report_path = Path(args.report)
    report_dir = report_path.parent
    try:
        report_md = report_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read report {report_path}: {exc}") from exc
    bundle = render.read_report(report_dir / "report.json")
    meta = dict(bundle.meta)

    cards: list[evalscore.ScoreCard] = []
    if args.human:
        cards.extend(evalscore.read_human_scores(args.human))
    if args.judges:
        for judge_id, backend in _load_judges(args.judges):
            cards.append(evalscore.judge_with_llm(report_md, backend,
                                                  judge_id=judge_id))
    if not cards:
        raise ConfigError("score needs --human and/or --judges")

    mean_by_kind = {}
    for kind in evalscore.JudgeKind:
        kind_cards = [c for c in cards if c.judge_kind is kind]
        if kind_cards:
            mean_by_kind[kind.value] = evalscore.aggregate_judges(kind_cards)
    result = {
        "report": report_path.name,
        "report_type": bundle.report_type,
        "method": meta.get("method", "unknown"),
        "model": meta.get("model", "unknown"),
        "cards": [c.to_dict() for c in cards],
        "mean_by_kind": mean_by_kind,
    }
    out_path = Path(args.out) if args.out else report_dir / "scores.json"
    out_path.write_text(json.dumps(result, indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    for kind, mean in sorted(mean_by_kind.items()):
        log.info("%s (%s, %s) %s judges: %s", bundle.report_type,
                 result["method"], result["model"], kind,
                 evalscore.display_score(mean))
    return result


def _cmd_compare(args) -> dict[str, Any]:
    runs_dir = Path(args.runs)
    score_files = sorted(runs_dir.rglob("scores.json"))
    if not score_files:
        raise IngestError(f"no scores.json files under {runs_dir}")
    rows = []
    for score_file in score_files:
        try:
            obj = json.loads(score_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{score_file}: malformed JSON: {exc.msg}") from exc
        for kind, score in obj.get("mean_by_kind", {}).items():
            rows.append({"method": obj["method"], "model": obj["model"],
                         "report_type": obj["report_type"], "judge_kind": kind,
                         "score": score})
    table = evalscore.comparison_table(rows)
    paths = evalscore.write_comparison(table, args.out or runs_dir)
    for warning in table.warnings:
        log.warning("%s", warning)
    log.info("comparison over %d score rows written to %s", len(rows), paths["md"])
    return {"comparison_md": str(paths["md"]),
            "comparison_json": str(paths["json"]), "rows": len(rows)}


def _cmd_validate_config(args) -> dict[str, Any]:
    config = _load_config(args)
    notes = pipeline.validate_run_config(config)
    for note in notes:
        log.info("%s", note)
    log.info("config OK")
    return {"ok": True, "report_type": config.report_type.value, "notes": notes}


if __name__ == "__main__":
    sys.exit(main())
