from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, strategies as st

import support
from simreport import evalscore, llm
from simreport.errors import JudgeParseError, ScoreError
from simreport.evalscore import (
    ASPECTS,
    WEIGHTS,
    JudgeKind,
    ScoreCard,
    aggregate_judges,
    comparison_table,
    display_score,
    judge_with_llm,
    overall_score,
)


def test_weights_sum_to_one_exactly():
    assert math.fsum(WEIGHTS.values()) == 1.0


def test_perfect_scores_give_ten():
    assert overall_score(10, 10, 10, 10) == 10.0


def test_floor_scores_give_one():
    assert overall_score(1, 1, 1, 1) == 1.0


def test_hand_computed_example():
    assert abs(overall_score(8, 7, 8, 7) - 7.6) < 1e-12


def test_out_of_range_aspect_rejected():
    with pytest.raises(ScoreError):
        overall_score(0.5, 5, 5, 5)
    with pytest.raises(ScoreError):
        overall_score(5, 5, 11, 5)


def test_weighted_sum_matches_oracle_over_random_vectors():
    rng = random.Random(424242)
    for _ in range(1000):
        aspects = [rng.uniform(1, 10) for _ in range(4)]
        oracle = math.fsum(w * v for w, v in zip((0.3, 0.2, 0.3, 0.2), aspects))
        assert abs(overall_score(*aspects) - oracle) <= 1e-9


_aspect = st.floats(min_value=1, max_value=10, allow_nan=False)


@given(_aspect, _aspect, _aspect, _aspect,
       st.integers(min_value=0, max_value=3), _aspect)
def test_overall_is_monotone_in_each_aspect(a, c, p, ae, index, bump):
    aspects = [a, c, p, ae]
    raised = list(aspects)
    raised[index] = max(raised[index], min(10.0, raised[index] + bump))
    assert overall_score(*raised) >= overall_score(*aspects) - 1e-12


@given(st.lists(st.tuples(_aspect, _aspect, _aspect, _aspect), min_size=1,
                max_size=6), st.randoms())
def test_aggregate_is_permutation_invariant(vectors, rng):
    cards = [ScoreCard.make(f"j{i}", JudgeKind.HUMAN,
                            dict(zip(ASPECTS, vector)))
             for i, vector in enumerate(vectors)]
    shuffled = list(cards)
    rng.shuffle(shuffled)
    assert abs(aggregate_judges(cards) - aggregate_judges(shuffled)) < 1e-12


def test_aggregate_judges_mean_and_display():
    cards = [ScoreCard.make(f"j{i}", JudgeKind.HUMAN,
                            {"accuracy": v, "completeness": v,
                             "practicality": v, "aesthetics": v})
             for i, v in enumerate([8.0, 8.0, 8.5])]
    mean = aggregate_judges(cards)
    assert abs(mean - (8.0 + 8.0 + 8.5) / 3) < 1e-12
    assert display_score(mean) == "8.167"


def test_aggregate_single_card():
    card = ScoreCard.make("j", JudgeKind.LLM,
                          {"accuracy": 8, "completeness": 7,
                           "practicality": 8, "aesthetics": 7})
    assert aggregate_judges([card]) == card.overall == pytest.approx(7.6)


def test_aggregate_empty_rejected():
    with pytest.raises(ScoreError):
        aggregate_judges([])


def test_scorecard_rejects_inconsistent_overall():
    with pytest.raises(ScoreError):
        ScoreCard("j", JudgeKind.HUMAN, 8, 7, 8, 7, overall=9.9)


# ---------------------------------------------------------------------------
# LLM judge


def test_judge_with_llm_computes_overall_locally():
    backend = llm.make_mock(support.judge_script(8, 7, 8, 7))
    card = judge_with_llm("# Report\n\nbody", backend, judge_id="mock-judge")
    assert card.judge_kind is JudgeKind.LLM
    assert card.overall == pytest.approx(7.6)


def test_judge_ignores_model_supplied_overall():
    payload = {"accuracy": 8, "completeness": 7, "practicality": 8,
               "aesthetics": 7, "overall": 1.0}
    backend = llm.make_mock([
        {"reply": "```json\n" + json.dumps(payload) + "\n```"}])
    card = judge_with_llm("# Report", backend)
    assert card.overall == pytest.approx(7.6)


def test_judge_prose_twice_raises_parse_error():
    backend = llm.make_mock([{"reply": "I think it is great."},
                             {"reply": "Still prose, no JSON."}])
    with pytest.raises(JudgeParseError):
        judge_with_llm("# Report", backend)
    assert backend.consumed == 2


def test_judge_retries_once_with_reflection_then_succeeds():
    backend = llm.make_mock([
        {"reply": "no json"},
        {"match": "was not valid", "reply": support.judge_script()[0]["reply"]},
    ])
    card = judge_with_llm("# Report", backend)
    assert card.overall == pytest.approx(7.6)


def test_judge_out_of_range_score_surfaces_score_error():
    backend = llm.make_mock(support.judge_script(accuracy=11))
    with pytest.raises(ScoreError):
        judge_with_llm("# Report", backend)


def test_judge_rejects_empty_report():
    with pytest.raises(ScoreError):
        judge_with_llm("  ", llm.make_mock([{"reply": "x"}]))


# ---------------------------------------------------------------------------
# human scores


def test_read_human_scores(tmp_path):
    csv_path = tmp_path / "scores_human.csv"
    csv_path.write_text(
        "judge_id,accuracy,completeness,practicality,aesthetics\n"
        "u1,8,7,8,7\n"
        "u2,9,8.5,9,8\n",
        encoding="utf-8")
    cards = evalscore.read_human_scores(csv_path)
    assert [c.judge_id for c in cards] == ["u1", "u2"]
    assert all(c.judge_kind is JudgeKind.HUMAN for c in cards)
    assert cards[0].overall == pytest.approx(7.6)


def test_read_human_scores_rejects_bad_header(tmp_path):
    csv_path = tmp_path / "scores_human.csv"
    csv_path.write_text("judge,acc\nu1,2\n", encoding="utf-8")
    with pytest.raises(ScoreError, match="header"):
        evalscore.read_human_scores(csv_path)


def test_read_human_scores_rejects_out_of_range(tmp_path):
    csv_path = tmp_path / "scores_human.csv"
    csv_path.write_text(
        "judge_id,accuracy,completeness,practicality,aesthetics\nu1,11,7,8,7\n",
        encoding="utf-8")
    with pytest.raises(ScoreError):
        evalscore.read_human_scores(csv_path)


# ---------------------------------------------------------------------------
# comparison grid


def _rows(methods=("ours", "baseline"), models=("m1",), types="ABCDE",
          kinds=("human", "llm")):
    rows = []
    score = 5.0
    for method in methods:
        for model in models:
            for rt in types:
                for kind in kinds:
                    rows.append({"method": method, "model": model,
                                 "report_type": rt, "judge_kind": kind,
                                 "score": score})
                    score += 0.1
    return rows


def test_comparison_grid_shape_2x1x5x2():
    table = comparison_table(_rows())
    assert len(table.row_keys) == 2
    assert len(table.columns) == 10
    assert table.row_keys[0] == ("ours", "m1")  # ours sorts before baseline
    markdown = table.to_markdown()
    assert markdown.count("\n") == 4  # header + separator + 2 rows
    assert "A (human)" in markdown


def test_comparison_single_row():
    table = comparison_table([{"method": "ours", "model": "m", "report_type": "A",
                               "judge_kind": "human", "score": 8.0}])
    assert len(table.row_keys) == 1
    assert len(table.columns) == 1
    assert table.cells == ((8.0,),)


def test_comparison_duplicate_is_last_write_wins_with_warning():
    rows = [{"method": "ours", "model": "m", "report_type": "A",
             "judge_kind": "human", "score": 8.0},
            {"method": "ours", "model": "m", "report_type": "A",
             "judge_kind": "human", "score": 9.0}]
    table = comparison_table(rows)
    assert table.cells == ((9.0,),)
    assert len(table.warnings) == 1


def test_comparison_missing_cells_render_as_dash(tmp_path):
    rows = [{"method": "ours", "model": "m", "report_type": "A",
             "judge_kind": "human", "score": 8.0},
            {"method": "baseline", "model": "m", "report_type": "B",
             "judge_kind": "llm", "score": 6.0}]
    table = comparison_table(rows)
    paths = evalscore.write_comparison(table, tmp_path)
    markdown = paths["md"].read_text(encoding="utf-8")
    assert "| - |" in markdown
    data = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert data["rows"][0]["scores"][0] == 8.0
    assert data["rows"][0]["scores"][-1] is None
