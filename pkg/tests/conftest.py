from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import pytest

import support
from simreport import llm, pipeline, render


@pytest.fixture(scope="session")
def exp_small(tmp_path_factory) -> Path:
    """3 cases x 3 trials; enough for most module tests."""
    out = tmp_path_factory.mktemp("exp-small")
    support.small_experiment(out)
    return out


@pytest.fixture(scope="session")
def exp_5x10(tmp_path_factory) -> Path:
    """The 5 cases x 10 trials experiment scale used by the acceptance tests."""
    from simreport import simgen

    out = tmp_path_factory.mktemp("exp-5x10")
    base = simgen.SimConfig(seed=20250811)
    factor = simgen.Factor("hit_prob", ("0.2", "0.35", "0.5", "0.65", "0.8"),
                           "base_hit_prob")
    simgen.generate_experiment(base, [factor], 10, out)
    return out


@dataclass
class RunArtifacts:
    report_type: str
    method: str
    out_dir: Path
    bundle: render.ReportBundle
    charts: list[dict]


@dataclass
class GeneratedRuns:
    runs: dict[tuple[str, str], RunArtifacts]
    root: Path
    summaries_dir: Path

    def __getitem__(self, key: tuple[str, str]) -> RunArtifacts:
        return self.runs[key]


@pytest.fixture(scope="session")
def generated_runs(tmp_path_factory, exp_5x10) -> GeneratedRuns:
    """Ours + baseline bundles for every report type over the 5x10 experiment."""
    root = tmp_path_factory.mktemp("runs")
    runs: dict[tuple[str, str], RunArtifacts] = {}

    # Two report-D runs feed summarize_case, which feeds report E.
    summaries_dir = root / "summaries"
    for case_id in ("case-1", "case-2"):
        trial_ids = support.trial_ids_of_case(exp_5x10, case_id)
        out = root / f"d-{case_id}"
        config = support.make_run_config("D", exp_5x10, out,
                                         support.ours_script("D", trial_ids),
                                         case_id=case_id)
        bundle = pipeline.run_report(config)
        pipeline.summarize_case(exp_5x10 / "cases" / case_id, out,
                                out_dir=summaries_dir / case_id)
        if case_id == "case-1":
            runs[("D", "ours")] = RunArtifacts("D", "ours", out, bundle, [])

    for rt in "ABCE":
        charts = [support.default_chart(rt)]
        out = root / f"{rt.lower()}-ours"
        config = support.make_run_config(rt, exp_5x10, out,
                                         support.ours_script(rt, charts=charts),
                                         summaries_dir=summaries_dir)
        bundle = pipeline.run_report(config)
        runs[(rt, "ours")] = RunArtifacts(rt, "ours", out, bundle, charts)

    for rt in "ABCDE":
        out = root / f"{rt.lower()}-baseline"
        config = support.make_run_config(rt, exp_5x10, out,
                                         support.baseline_script(rt),
                                         summaries_dir=summaries_dir)
        bundle = pipeline.run_baseline(config)
        runs[(rt, "baseline")] = RunArtifacts(rt, "baseline", out, bundle, [])

    return GeneratedRuns(runs=runs, root=root, summaries_dir=summaries_dir)


@pytest.fixture()
def mock_backend():
    def make(script):
        backend = llm.make_mock(script)
        backend.model_name = support.MOCK_MODEL
        return backend

    return make


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion at session end

_ACCEPTANCE_RESULTS: dict[str, str] = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in item.nodeid:
        return
    match = _CRITERION_RE.search(item.name)
    if match:
        key = f"criterion {int(match.group(1)):2d} ({match.group(2)})"
        _ACCEPTANCE_RESULTS[key] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{key}: {_ACCEPTANCE_RESULTS[key]}")
