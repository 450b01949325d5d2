from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from simreport import prompts
from simreport.errors import MissingVariable, TemplateError, UnknownTemplate
from simreport.prompts import ANALYSIS_TEMPLATE_IDS, SELF_CHECK_PHRASE, PromptTemplate

SHIPPED_AT_LEAST = {
    "extract_series", "compare_b", "reconstruct_c", "capability_c",
    "per_trial_d", "table_d", "overall_d", "cross_case_e", "baseline_single_shot",
}


def test_compare_b_render_contains_vars_and_factor_phrase():
    rendered = prompts.render_prompt("compare_b", {"scenario": "S", "metrics": "M"})
    assert "S" in rendered.user and "M" in rendered.user
    assert "influence degree of each change factor" in rendered.user


def test_missing_variables_reported_all_at_once():
    with pytest.raises(MissingVariable) as excinfo:
        prompts.render_prompt("compare_b", {})
    assert excinfo.value.missing == ["metrics", "scenario"]


def test_unknown_template():
    with pytest.raises(UnknownTemplate):
        prompts.render_prompt("nope", {})


def test_zero_placeholder_template_renders_verbatim():
    registry = prompts.builtin_registry()
    template = PromptTemplate.from_texts("static", "system body.", "user body.")
    registry.register(template)
    rendered = registry.render("static", {})
    assert rendered.system == "system body."
    assert rendered.user == "user body."


def test_doubled_braces_render_as_literals():
    registry = prompts.PromptRegistry()
    registry.register(PromptTemplate.from_texts("braces", "keep {{this}}.",
                                                "use {value} and {{literal}}"))
    rendered = registry.render("braces", {"value": "V"})
    assert rendered.system == "keep {this}."
    assert rendered.user == "use V and {literal}"


def test_list_templates_is_sorted_and_covers_shipped_set():
    infos = prompts.list_templates()
    ids = [info.id for info in infos]
    assert ids == sorted(ids)
    assert SHIPPED_AT_LEAST <= set(ids)


def test_registering_a_custom_template_shows_in_list():
    registry = prompts.builtin_registry()
    registry.register(PromptTemplate.from_texts("x", "sys", "user {a}"))
    ids = [info.id for info in registry.list()]
    assert "x" in ids
    assert registry.list() == registry.list()


def test_required_vars_mismatch_rejected():
    with pytest.raises(TemplateError):
        PromptTemplate(id="bad", system_text="{a}", user_text="",
                       required_vars=frozenset({"b"}))
    with pytest.raises(TemplateError):
        PromptTemplate.from_texts("bad", "{a.b}", "")


def test_every_analysis_template_carries_the_self_check_clause():
    registry = prompts.builtin_registry()
    for template_id in sorted(ANALYSIS_TEMPLATE_IDS):
        assert SELF_CHECK_PHRASE in registry.get(template_id).system_text, template_id


def test_templates_cover_each_report_types_data_inputs():
    # report type -> data inputs it consumes, expressed as template variables
    registry = prompts.builtin_registry()
    coverage = {
        "A": [("effectiveness_a", {"scenario", "metrics"})],
        "B": [("compare_b", {"scenario", "metrics"})],
        "C": [("reconstruct_c", {"scenario", "events"}),
              ("capability_c", {"scenario", "hit_rates"})],
        "D": [("per_trial_d", {"scenario", "trial_id", "events"}),
              ("table_d", {"summaries"}),
              ("overall_d", {"table", "aggregates", "goal_stats"})],
        "E": [("cross_case_e", {"scenario", "factors", "summaries"})],
    }
    for report_type, expectations in coverage.items():
        for template_id, expected_vars in expectations:
            required = registry.get(template_id).required_vars
            assert expected_vars <= required, (report_type, template_id)


def test_user_dir_shadows_builtin_by_id(tmp_path):
    (tmp_path / "compare_b.system.txt").write_text("custom system", encoding="utf-8")
    (tmp_path / "compare_b.user.txt").write_text("custom user {scenario} {metrics}",
                                                 encoding="utf-8")
    registry = prompts.builtin_registry(tmp_path)
    rendered = registry.render("compare_b", {"scenario": "s", "metrics": "m"})
    assert rendered.system == "custom system"
    assert registry.get("extract_series")  # built-ins still present


def test_user_dir_template_needs_both_files(tmp_path):
    (tmp_path / "solo.system.txt").write_text("only half", encoding="utf-8")
    with pytest.raises(TemplateError):
        prompts.builtin_registry(tmp_path)


_values = st.text(alphabet="abc {}", max_size=10)


@given(scenario=_values, metrics=_values)
def test_render_is_pure_and_substitutes_fully(scenario, metrics):
    first = prompts.render_prompt("compare_b",
                                  {"scenario": scenario, "metrics": metrics})
    second = prompts.render_prompt("compare_b",
                                   {"scenario": scenario, "metrics": metrics})
    assert first == second


def test_no_placeholder_syntax_remains_after_render():
    registry = prompts.builtin_registry()
    for info in registry.list():
        variables = {name: f"<<{name}>>" for name in info.required_vars}
        rendered = registry.render(info.id, variables)
        for name in info.required_vars:
            assert "{" + name + "}" not in rendered.system
            assert "{" + name + "}" not in rendered.user
            assert f"<<{name}>>" in rendered.system + rendered.user
