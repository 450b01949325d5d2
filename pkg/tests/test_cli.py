from __future__ import annotations

import json

import pytest

import support
from simreport import cli, corpus, pipeline


def _write_simgen_config(path, *, levels=("0.3", "0.7"), trials=2):
    path.write_text(json.dumps({
        "n_red_units": 3,
        "n_blue_units": 3,
        "duration": 120.0,
        "fire_rate": 3.0,
        "base_hit_prob": 0.5,
        "seed": 9,
        "goal": {"side": "red", "condition": "destroy_target",
                 "target_entity": "B-1"},
        "factors": [{"name": "hit_prob", "levels": list(levels),
                     "applies_to": "base_hit_prob"}],
        "trials_per_case": trials,
    }), encoding="utf-8")
    return path


def test_simulate_command_writes_loadable_experiment(tmp_path, capsys):
    config = _write_simgen_config(tmp_path / "simgen.json")
    out = tmp_path / "exp"
    code = cli.main(["simulate", "--config", str(config), "--out", str(out),
                     "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    experiment = corpus.load_experiment(payload["manifest"])
    assert experiment.total_trials == 4


def test_generate_command_populates_out_dir(tmp_path, exp_small, capsys):
    out = tmp_path / "run"
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, support.ours_script("B"))
    code = cli.main(["generate", "--config", str(config), "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["out_dir"] == str(out)
    for name in ("report.md", "report.html", "report.json", "trace.json"):
        assert (out / name).is_file()
    assert list((out / "figures").glob("*.svg"))


def test_stdout_is_silent_without_json_flag(tmp_path, exp_small, capsys):
    out = tmp_path / "run"
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, support.ours_script("B"))
    assert cli.main(["generate", "--config", str(config)]) == 0
    assert capsys.readouterr().out == ""


def test_validate_config_reports_ok_without_writing(tmp_path, exp_small, capsys):
    out = tmp_path / "never-created"
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, support.ours_script("B"))
    code = cli.main(["validate-config", "--config", str(config), "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ok"] is True
    assert not out.exists()


def test_validate_config_missing_role_exits_2(tmp_path, exp_small):
    config_path = tmp_path / "config.json"
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps([{"reply": "x"}]), encoding="utf-8")
    config_path.write_text(json.dumps({
        "report_type": "C",
        "input_paths": {"trial": str(exp_small / "cases/case-1/trials/trial-01")},
        "out_dir": "out",
        "backend": {"mock_script": "script.json"},
    }), encoding="utf-8")
    assert cli.main(["validate-config", "--config", str(config_path)]) == 2


def test_unknown_subcommand_is_usage_error():
    assert cli.main(["fly"]) == 64


def test_no_subcommand_is_usage_error():
    assert cli.main([]) == 64


def test_missing_required_flag_is_usage_error():
    assert cli.main(["generate"]) == 64


def test_malformed_config_exits_2(tmp_path):
    config = tmp_path / "config.json"
    config.write_text("{not json", encoding="utf-8")
    assert cli.main(["generate", "--config", str(config)]) == 2


def test_exhausted_mock_exits_6(tmp_path, exp_small):
    out = tmp_path / "run"
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, [support.ours_script("B")[0]])
    assert cli.main(["generate", "--config", str(config)]) == 6


def test_tool_error_exits_5(tmp_path, exp_small):
    # a model-initiated hit_rate call against an unknown trial id fails in
    # the tool layer, which must map to the tool-error exit code
    script = support.ours_script("C")
    fence = ('```tool\n{"tool": "hit_rate", "arguments": '
             '{"side": "red", "trial_id": "trial-99"}}\n```')
    script[2] = {"match": "operational capabilities",
                 "reply": f"verdict\n{fence}\n"}
    config = support.write_cli_config(tmp_path / "config.json", "C", exp_small,
                                      tmp_path / "run", script)
    assert cli.main(["generate", "--config", str(config)]) == 5


def test_always_invalid_extraction_exits_4(tmp_path, exp_small):
    out = tmp_path / "run"
    script = [{"reply": "not json"}] * 8
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, script)
    assert cli.main(["generate", "--config", str(config)]) == 4


def test_baseline_then_summarize_then_score_then_compare(tmp_path, exp_5x10,
                                                         capsys):
    runs = tmp_path / "runs"
    # ours + baseline for report A
    ours_cfg = support.write_cli_config(tmp_path / "ours.json", "A", exp_5x10,
                                        runs / "a-ours", support.ours_script("A"))
    base_cfg = support.write_cli_config(tmp_path / "base.json", "A", exp_5x10,
                                        runs / "a-base",
                                        support.baseline_script("A"))
    assert cli.main(["generate", "--config", str(ours_cfg)]) == 0
    assert cli.main(["baseline", "--config", str(base_cfg)]) == 0
    assert not (runs / "a-base" / "figures").exists()

    human_csv = tmp_path / "scores_human.csv"
    human_csv.write_text(
        "judge_id,accuracy,completeness,practicality,aesthetics\n"
        "u1,8,8,8,8\nu2,9,7,8,8\n", encoding="utf-8")
    judge_script = tmp_path / "judge.script.json"
    judge_script.write_text(json.dumps(support.judge_script()), encoding="utf-8")
    judges_cfg = tmp_path / "judges.json"
    judges_cfg.write_text(json.dumps({
        "judges": [{"judge_id": "mock-judge",
                    "mock_script": judge_script.name}]}), encoding="utf-8")

    for run in ("a-ours", "a-base"):
        code = cli.main(["score", "--report", str(runs / run / "report.md"),
                         "--human", str(human_csv),
                         "--judges", str(judges_cfg)])
        assert code == 0
        scores = json.loads((runs / run / "scores.json").read_text())
        assert set(scores["mean_by_kind"]) == {"human", "llm"}

    code = cli.main(["compare", "--runs", str(runs), "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    comparison = json.loads((runs / "comparison.json").read_text())
    assert payload["rows"] == 4
    assert [r["method"] for r in comparison["rows"]] == ["ours", "baseline"]
    assert len(comparison["columns"]) == 2  # A x (human, llm)


def test_summarize_cli(tmp_path, exp_small):
    case_dir = exp_small / "cases" / "case-1"
    trial_ids = support.trial_ids_of_case(exp_small, "case-1")
    out = tmp_path / "report_d"
    config = support.write_cli_config(tmp_path / "d.json", "D", exp_small, out,
                                      support.ours_script("D", trial_ids))
    assert cli.main(["generate", "--config", str(config)]) == 0
    code = cli.main(["summarize", "--case", str(case_dir),
                     "--report", str(out)])
    assert code == 0
    assert (out / "summary.json").is_file()
    assert (out / "summary.md").is_file()


def test_score_without_judges_or_human_exits_2(tmp_path, exp_small):
    out = tmp_path / "run"
    config = support.write_cli_config(tmp_path / "config.json", "B", exp_small,
                                      out, support.ours_script("B"))
    assert cli.main(["generate", "--config", str(config)]) == 0
    assert cli.main(["score", "--report", str(out / "report.md")]) == 2


def test_compare_without_scores_exits_3(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["compare", "--runs", str(tmp_path / "empty")]) == 3
