#!/usr/bin/env python3
"""End-to-end desk demo: synthesize an experiment, generate all five report
types plus their single-shot baselines against a scripted mock backend,
score everything with mock judges and a bundled human-score CSV, and emit
the ours-vs-baseline comparison grid.

Run from the repository root:

    python3 scripts/run_demo.py --out demo_out

Everything is seeded and mock-driven, so two runs produce identical
artifacts.  Point the backend block of the generated config files at a real
chat-completions endpoint to swap the mock for a live model.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from simreport import cli, render  # noqa: E402

REPORT_TYPES = "ABCDE"


def chart(report_type: str) -> dict:
    xs = ["case-1", "case-2", "case-3"]
    return {
        "kind": "grouped_bar" if report_type == "A" else "line",
        "title": f"Hit rate overview (report {report_type})",
        "x_label": "case",
        "y_label": "hit rate",
        "series": [
            {"name": "red", "points": [[x, 0.35 + 0.15 * i] for i, x in enumerate(xs)]},
            {"name": "blue", "points": [[x, 0.55 - 0.05 * i] for i, x in enumerate(xs)]},
        ],
    }


def headings_reply(headings: list[str], note: str) -> str:
    return "\n\n".join(f"## {h}\n{note} ({h.lower()})" for h in headings) + "\n"


def ours_script(report_type: str, trial_ids: list[str]) -> list[dict]:
    extract = {"match": "Extract the data",
               "reply": "```json\n" + json.dumps({"charts": [chart(report_type)]})
                        + "\n```"}
    if report_type == "A":
        return [extract, {"match": "operational effectiveness",
                          "reply": headings_reply(["Effectiveness Evaluation",
                                                   "Optimization Suggestions"],
                                                  "Demo analysis")}]
    if report_type == "B":
        return [extract, {"match": "influence degree of each change factor",
                          "reply": headings_reply(["Factor Influence Analysis",
                                                   "Comprehensive Analysis",
                                                   "Configuration Suggestions"],
                                                  "Demo analysis")}]
    if report_type == "C":
        return [
            extract,
            {"match": "reconstruct the complete operational process",
             "reply": headings_reply(["Operational Process Reconstruction",
                                      "Process Summary"], "Demo reconstruction")},
            {"match": "operational capabilities",
             "reply": "Demo capability assessment grounded in the computed rates."},
        ]
    if report_type == "D":
        script = [{"match": f"data of {tid} is",
                   "reply": f"Demo recap of {tid}: both sides exchanged fire."}
                  for tid in trial_ids]
        rows = [{"trial_id": tid,
                 "red_summary": f"Red pressed the attack in {tid}.",
                 "blue_summary": f"Blue absorbed losses in {tid}."}
                for tid in trial_ids]
        script.append({"match": "generate a table",
                       "reply": "```json\n" + json.dumps({"rows": rows}) + "\n```"})
        script.append({"match": "summarize the performance",
                       "reply": "Demo overall verdict across the trials."})
        return script
    return [extract, {"match": "comprehensive comparative analysis",
                      "reply": headings_reply(["Comprehensive Comparative Analysis",
                                               "Configuration Recommendations"],
                                              "Demo comparison")}]


def baseline_script(report_type: str) -> list[dict]:
    headings = list(render.mandated_sections(report_type))
    return [{"match": "Write a complete",
             "reply": headings_reply(headings, "Single-shot baseline text")}]


def write_config(path: Path, report_type: str, inputs: dict[str, Path],
                 out_dir: Path, script: list[dict]) -> Path:
    script_path = path.with_suffix(".script.json")
    script_path.write_text(json.dumps(script, indent=2), encoding="utf-8")
    path.write_text(json.dumps({
        "report_type": report_type,
        "input_paths": {role: str(p) for role, p in inputs.items()},
        "out_dir": str(out_dir),
        "backend": {"mock_script": script_path.name, "model_name": "mock-model"},
        "seed": 42,
    }, indent=2), encoding="utf-8")
    return path


def run(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out", help="workspace directory")
    args = parser.parse_args(argv)
    root = Path(args.out).resolve()
    if root.exists():
        shutil.rmtree(root)
    (root / "configs").mkdir(parents=True)

    def check(argv_: list[str]) -> None:
        code = cli.main(argv_)
        if code != 0:
            raise SystemExit(f"step failed with exit code {code}: {argv_}")

    print(f"demo workspace: {root}", file=sys.stderr)

    # 1. synthesize the experiment (3 cases x 4 trials keeps the demo quick)
    simgen_config = root / "configs" / "simgen.json"
    simgen_config.write_text(json.dumps({
        "n_red_units": 4,
        "n_blue_units": 4,
        "duration": 300.0,
        "fire_rate": 3.0,
        "base_hit_prob": 0.5,
        "seed": 20250811,
        "goal": {"side": "red", "condition": "destroy_target",
                 "target_entity": "B-1"},
        "factors": [{"name": "hit_prob", "levels": ["0.3", "0.5", "0.7"],
                     "applies_to": "base_hit_prob"}],
        "trials_per_case": 4,
    }, indent=2), encoding="utf-8")
    exp = root / "experiment"
    check(["simulate", "--config", str(simgen_config), "--out", str(exp)])

    scenario = exp / "scenario.txt"
    cases = sorted(p.name for p in (exp / "cases").iterdir())
    trial_ids = json.loads(
        (exp / "cases" / cases[0] / "case.json").read_text())["trials"]
    runs = root / "runs"

    # 2. report D per case, then case summaries for report E
    summaries = root / "summaries"
    for case in cases:
        out = runs / f"D-{case}"
        config = write_config(root / "configs" / f"d-{case}.json", "D",
                              {"scenario": scenario, "case": exp / "cases" / case},
                              out, ours_script("D", trial_ids))
        check(["generate", "--config", str(config)])
        check(["summarize", "--case", str(exp / "cases" / case),
               "--report", str(out), "--out", str(summaries / case)])

    # 3. the remaining report types, ours and baseline
    inputs = {
        "A": {"scenario": scenario,
              "metrics": exp / "cases" / cases[0] / "trials" / trial_ids[0]
              / "metrics.json"},
        "B": {"scenario": scenario, "metrics": exp / "metrics.json"},
        "C": {"scenario": scenario,
              "trial": exp / "cases" / cases[0] / "trials" / trial_ids[0]},
        "D": {"scenario": scenario, "case": exp / "cases" / cases[0]},
        "E": {"scenario": scenario, "summaries": summaries},
    }
    for rt in "ABCE":
        config = write_config(root / "configs" / f"{rt.lower()}-ours.json", rt,
                              inputs[rt], runs / f"{rt}-ours",
                              ours_script(rt, trial_ids))
        check(["generate", "--config", str(config)])
    for rt in REPORT_TYPES:
        config = write_config(root / "configs" / f"{rt.lower()}-baseline.json", rt,
                              inputs[rt], runs / f"{rt}-baseline",
                              baseline_script(rt))
        check(["baseline", "--config", str(config)])

    # 4. judge every report: three bundled human rows + one mock LLM judge
    human_csv = root / "configs" / "scores_human.csv"
    human_csv.write_text(
        "judge_id,accuracy,completeness,practicality,aesthetics\n"
        "u1,8,8,8,8\nu2,9,7,8,8\nu3,8,8,7,9\n", encoding="utf-8")
    judge_script = root / "configs" / "judge.script.json"
    judge_script.write_text(json.dumps([{
        "match": "Score the following report",
        "reply": '```json\n{"accuracy": 8, "completeness": 7, '
                 '"practicality": 8, "aesthetics": 7}\n```',
    }]), encoding="utf-8")
    judges_config = root / "configs" / "judges.json"
    judges_config.write_text(json.dumps({
        "judges": [{"judge_id": "mock-judge",
                    "mock_script": judge_script.name}]}), encoding="utf-8")
    scored_dirs = [runs / f"{rt}-ours" for rt in "ABCE"] + [runs / f"D-{cases[0]}"]
    scored_dirs += [runs / f"{rt}-baseline" for rt in REPORT_TYPES]
    for run_dir in scored_dirs:
        check(["score", "--report", str(run_dir / "report.md"),
               "--human", str(human_csv), "--judges", str(judges_config)])

    # 5. the ours-vs-baseline grid
    check(["compare", "--runs", str(runs), "--out", str(root)])

    print("demo complete:", file=sys.stderr)
    print(f"  reports     {runs}/<type>-<method>/report.md", file=sys.stderr)
    print(f"  comparison  {root / 'comparison.md'}", file=sys.stderr)
    print((root / "comparison.md").read_text(encoding="utf-8"), file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(run(sys.argv[1:]))
