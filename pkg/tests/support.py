"""Shared builders for mock scripts, run configs and fixture experiments."""

from __future__ import annotations

import json
from pathlib import Path

from simreport import llm, pipeline, render, simgen

MOCK_MODEL = "mock-model"


def chart_payload(title: str, series: dict[str, list], kind: str = "line",
                  x_label: str = "x", y_label: str = "y") -> dict:
    return {
        "kind": kind,
        "title": title,
        "x_label": x_label,
        "y_label": y_label,
        "series": [{"name": name, "points": [list(p) for p in points]}
                   for name, points in series.items()],
    }


def default_chart(report_type: str) -> dict:
    xs = ["case-1", "case-2"] if report_type in ("B", "E") else ["t0", "t1", "t2"]
    red = [[x, 0.4 + 0.1 * i] for i, x in enumerate(xs)]
    blue = [[x, 0.5 - 0.05 * i] for i, x in enumerate(xs)]
    kind = "grouped_bar" if report_type == "A" else "line"
    return chart_payload(f"Hit rate overview ({report_type})",
                         {"red": red, "blue": blue}, kind=kind,
                         x_label="group", y_label="hit rate")


def extract_reply(charts: list[dict]) -> str:
    return "Extracted series:\n```json\n" + json.dumps({"charts": charts}) + "\n```"


def table_rows_reply(trial_ids: list[str]) -> str:
    rows = [{"trial_id": tid,
             "red_summary": f"Red pressed the attack in {tid}.",
             "blue_summary": f"Blue defended with losses in {tid}."}
            for tid in trial_ids]
    return "```json\n" + json.dumps({"rows": rows}) + "\n```"


def headings_reply(headings: list[str], note: str = "Scripted analysis.") -> str:
    return "\n\n".join(f"## {h}\n{note} ({h.lower()})" for h in headings) + "\n"


def ours_script(report_type: str, trial_ids: list[str] | None = None,
                charts: list[dict] | None = None) -> list[dict]:
    """Deterministic mock script for one `generate` run of the given type."""
    rt = report_type
    if charts is None and rt != "D":
        charts = [default_chart(rt)]
    if rt == "A":
        return [
            {"match": "Extract the data", "reply": extract_reply(charts)},
            {"match": "operational effectiveness",
             "reply": headings_reply(["Effectiveness Evaluation",
                                      "Optimization Suggestions"])},
        ]
    if rt == "B":
        return [
            {"match": "Extract the data", "reply": extract_reply(charts)},
            {"match": "influence degree of each change factor",
             "reply": headings_reply(["Factor Influence Analysis",
                                      "Comprehensive Analysis",
                                      "Configuration Suggestions"])},
        ]
    if rt == "C":
        return [
            {"match": "Extract the data", "reply": extract_reply(charts)},
            {"match": "reconstruct the complete operational process",
             "reply": headings_reply(["Operational Process Reconstruction",
                                      "Process Summary"])},
            {"match": "operational capabilities",
             "reply": "Both sides traded fire; the scripted verdict favors red."},
        ]
    if rt == "D":
        assert trial_ids, "report D script needs trial ids"
        script = [
            {"match": f"data of {tid} is",
             "reply": f"Red and blue manoeuvred through {tid}; scripted recap."}
            for tid in trial_ids
        ]
        script.append({"match": "generate a table",
                       "reply": table_rows_reply(trial_ids)})
        script.append({"match": "summarize the performance",
                       "reply": "Scripted overall verdict across the trials."})
        return script
    if rt == "E":
        return [
            {"match": "Extract the data", "reply": extract_reply(charts)},
            {"match": "comprehensive comparative analysis",
             "reply": headings_reply(["Comprehensive Comparative Analysis",
                                      "Configuration Recommendations"])},
        ]
    raise ValueError(report_type)


def baseline_script(report_type: str) -> list[dict]:
    headings = list(render.mandated_sections(report_type))
    return [{"match": "Write a complete",
             "reply": headings_reply(headings, note="Single-shot baseline text.")}]


def judge_script(accuracy=8, completeness=7, practicality=8, aesthetics=7) -> list[dict]:
    payload = {"accuracy": accuracy, "completeness": completeness,
               "practicality": practicality, "aesthetics": aesthetics}
    return [{"match": "Score the following report",
             "reply": "```json\n" + json.dumps(payload) + "\n```"}]


def input_paths_for(report_type: str, exp_dir: Path, case_id: str = "case-1",
                    trial_id: str = "trial-01",
                    summaries_dir: Path | None = None) -> dict[str, Path]:
    scenario = exp_dir / "scenario.txt"
    if report_type == "A":
        return {"scenario": scenario,
                "metrics": exp_dir / "cases" / case_id / "trials" / trial_id / "metrics.json"}
    if report_type == "B":
        return {"scenario": scenario, "metrics": exp_dir / "metrics.json"}
    if report_type == "C":
        return {"scenario": scenario,
                "trial": exp_dir / "cases" / case_id / "trials" / trial_id}
    if report_type == "D":
        return {"scenario": scenario, "case": exp_dir / "cases" / case_id}
    if report_type == "E":
        assert summaries_dir is not None
        return {"scenario": scenario, "summaries": summaries_dir}
    raise ValueError(report_type)


def make_run_config(report_type: str, exp_dir: Path, out_dir: Path,
                    script: list[dict], *, case_id: str = "case-1",
                    summaries_dir: Path | None = None, seed: int = 42,
                    ) -> pipeline.RunConfig:
    mock = llm.make_mock(script)
    mock.model_name = MOCK_MODEL
    return pipeline.RunConfig(
        report_type=pipeline.ReportType(report_type),
        input_paths=input_paths_for(report_type, exp_dir, case_id=case_id,
                                    summaries_dir=summaries_dir),
        out_dir=out_dir,
        backend=mock,
        seed=seed,
    )


def write_cli_config(path: Path, report_type: str, exp_dir: Path, out_dir: Path,
                     script: list[dict], *, case_id: str = "case-1",
                     summaries_dir: Path | None = None, seed: int = 42) -> Path:
    """Write a config.json plus its mock script file for CLI runs."""
    script_path = path.with_suffix(".script.json")
    script_path.write_text(json.dumps(script, indent=2), encoding="utf-8")
    paths = input_paths_for(report_type, exp_dir, case_id=case_id,
                            summaries_dir=summaries_dir)
    config = {
        "report_type": report_type,
        "input_paths": {role: str(p) for role, p in paths.items()},
        "out_dir": str(out_dir),
        "backend": {"mock_script": script_path.name, "model_name": MOCK_MODEL},
        "seed": seed,
    }
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def small_experiment(out_dir: Path, *, trials: int = 3, seed: int = 11) -> Path:
    """3-case experiment used by most module tests; returns the manifest path."""
    base = simgen.SimConfig(seed=seed)
    factor = simgen.Factor("hit_prob", ("0.35", "0.55", "0.75"), "base_hit_prob")
    return simgen.generate_experiment(base, [factor], trials, out_dir)


def strip_wall_times(obj):
    """Recursively drop wall-time fields so traces can be compared."""
    if isinstance(obj, dict):
        return {k: strip_wall_times(v) for k, v in obj.items() if k != "wall_time_s"}
    if isinstance(obj, list):
        return [strip_wall_times(v) for v in obj]
    return obj


def canonical_trace(path: Path) -> dict:
    return strip_wall_times(json.loads(path.read_text(encoding="utf-8")))


def trial_ids_of_case(exp_dir: Path, case_id: str) -> list[str]:
    case = json.loads((exp_dir / "cases" / case_id / "case.json").read_text())
    return list(case["trials"])
