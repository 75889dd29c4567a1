from __future__ import annotations

import json

import pytest

from sqlmend.evaluation import (
    DatasetFormatError,
    GoldExecutionError,
    exact_match,
    execution_accuracy,
    file_predictor,
    has_top_level_order_by,
    load_dataset,
    run_benchmark,
    sql_components,
)


def test_ex_identical_queries(episode_db):
    gold = "SELECT title FROM episode"
    assert execution_accuracy(gold, gold, episode_db) is True


def test_ex_wrong_literal_zero_rows(episode_db):
    gold = "SELECT air_date FROM episode WHERE title = 'A Love of a Lifetime'"
    pred = "SELECT air_date FROM episode WHERE title = 'a love of a lifetime'"
    assert execution_accuracy(pred, gold, episode_db) is False


def test_ex_row_order_ignored_without_order_by(episode_db):
    gold = "SELECT title FROM episode ORDER BY id"
    pred = "SELECT title FROM episode ORDER BY id DESC"
    # gold has ORDER BY -> ordered comparison -> different
    assert execution_accuracy(pred, gold, episode_db) is False
    gold_unordered = "SELECT title FROM episode"
    assert execution_accuracy(pred, gold_unordered, episode_db) is True


def test_ex_predicted_execution_error_is_false(episode_db):
    gold = "SELECT title FROM episode"
    assert execution_accuracy("SELECT nope FROM nothing", gold, episode_db) is False


def test_ex_gold_failure_raises(episode_db):
    with pytest.raises(GoldExecutionError):
        execution_accuracy("SELECT 1", "SELECT broken FROM missing", episode_db)


def test_ex_duplicate_rows_are_significant(episode_db):
    gold = "SELECT written_by FROM episode WHERE written_by = 'Todd Casey'"  # two rows
    pred = ("SELECT DISTINCT written_by FROM episode "
            "WHERE written_by = 'Todd Casey'")  # one row
    assert execution_accuracy(pred, gold, episode_db) is False


def test_ex_symmetry_when_both_execute(episode_db):
    a = "SELECT title FROM episode WHERE id < 3"
    b = "SELECT title FROM episode WHERE id > 2"
    assert execution_accuracy(a, b, episode_db) == execution_accuracy(b, a, episode_db)


def test_ex_float_tolerance(episode_db):
    gold = "SELECT AVG(rating) FROM pairing"
    pred = "SELECT SUM(rating) / COUNT(rating) FROM pairing"
    assert execution_accuracy(pred, gold, episode_db) is True


def test_ex_predicted_timeout_is_false(episode_db):
    runaway = ("WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
               "SELECT COUNT(*) FROM c")
    gold = "SELECT title FROM episode"
    assert execution_accuracy(runaway, gold, episode_db, timeout_s=0.2) is False


def test_gold_timeout_marks_unscorable(episode_db):
    runaway = ("WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
               "SELECT COUNT(*) FROM c")
    with pytest.raises(GoldExecutionError):
        execution_accuracy("SELECT 1", runaway, episode_db, timeout_s=0.2)


def test_order_by_detection_skips_subqueries():
    assert has_top_level_order_by("SELECT a FROM t ORDER BY a")
    assert not has_top_level_order_by(
        "SELECT a FROM (SELECT a FROM t ORDER BY a) x")
    assert not has_top_level_order_by("SELECT 'order by' FROM t")


def test_em_ignores_literal_values():
    a = "SELECT air_date FROM episode WHERE title = 'A Love of a Lifetime'"
    b = "SELECT air_date FROM episode WHERE title = 'Double Down'"
    assert exact_match(a, b) is True


def test_em_where_order_insensitive():
    a = "SELECT t FROM e WHERE a = 'x' AND b = 'y'"
    b = "SELECT t FROM e WHERE b = 'q' AND a = 'z'"
    assert exact_match(a, b) is True


def test_em_extra_join_is_false():
    a = "SELECT e.t FROM e JOIN p ON e.id = p.eid"
    b = "SELECT e.t FROM e"
    assert exact_match(a, b) is False


def test_em_different_connectives_differ():
    a = "SELECT t FROM e WHERE a = 'x' AND b = 'y'"
    b = "SELECT t FROM e WHERE a = 'x' OR b = 'y'"
    assert exact_match(a, b) is False


def test_em_out_of_coverage_is_none():
    nested = "SELECT t FROM e WHERE id IN (SELECT id FROM p)"
    plain = "SELECT t FROM e"
    assert exact_match(nested, plain) is None
    compound = "SELECT t FROM e UNION SELECT t FROM f"
    assert exact_match(compound, plain) is None
    assert exact_match("DELETE FROM e", plain) is None


def test_em_case_and_whitespace_insensitive():
    a = "select  T , COUNT(*) from E group by t"
    b = "SELECT t, count(*) FROM e GROUP BY T"
    assert exact_match(a, b) is True


def test_em_limit_value_masked():
    assert exact_match("SELECT t FROM e LIMIT 1", "SELECT t FROM e LIMIT 5") is True
    assert exact_match("SELECT t FROM e LIMIT 1", "SELECT t FROM e") is False


def test_components_structure():
    parts = sql_components(
        "SELECT a, COUNT(*) FROM t JOIN u ON t.id = u.tid "
        "WHERE a = 'x' GROUP BY a HAVING COUNT(*) > 2 ORDER BY a DESC LIMIT 3")
    assert parts["from_tables"] == frozenset({"t", "u"})
    assert parts["limit"] is True
    where_conditions, where_connectives = parts["where"]
    assert where_conditions == frozenset({"a=?"})


# ---------------------------------------------------------------------------
# run_benchmark
# ---------------------------------------------------------------------------


def test_benchmark_gold_as_predictions(toy_dataset):
    examples, _root = load_dataset(toy_dataset)
    report = run_benchmark(toy_dataset, lambda ex: ex.gold_sql)
    agg = report.aggregates()
    assert agg["n"] == 3
    assert agg["ex_correct"] == 3
    assert agg["ex_rate"] == 1.0
    assert agg["em_correct"] == agg["em_covered"] == 3


def test_benchmark_post_process_recovers_corrupted_literal(toy_dataset):
    def corrupting(ex):
        return ex.gold_sql.replace("'A Love of a Lifetime'", "'a love of a lifetime'")

    plain = run_benchmark(toy_dataset, corrupting, post_process=False)
    fixed = run_benchmark(toy_dataset, corrupting, post_process=True)
    assert plain.aggregates()["ex_correct"] == 2
    assert fixed.aggregates()["ex_correct"] == 3


def test_benchmark_missing_db_raises(tmp_path):
    dataset = tmp_path / "examples.json"
    dataset.write_text(json.dumps([{
        "id": "x", "db_id": "ghost", "question": "?", "gold_sql": "SELECT 1"}]))
    with pytest.raises(DatasetFormatError) as exc:
        run_benchmark(dataset, lambda ex: ex.gold_sql)
    assert "x" in str(exc.value)


def test_benchmark_bad_record_raises(tmp_path):
    dataset = tmp_path / "examples.json"
    dataset.write_text(json.dumps([{"id": "y", "db_id": "shows"}]))
    with pytest.raises(DatasetFormatError) as exc:
        run_benchmark(dataset, lambda ex: "SELECT 1")
    assert "y" in str(exc.value)


def test_benchmark_unscorable_gold_counted_separately(tmp_path, toy_dataset):
    data = json.loads(toy_dataset.read_text())
    data.append({"id": "broken", "db_id": "shows", "question": "?",
                 "gold_sql": "SELECT missing FROM nowhere"})
    toy_dataset.write_text(json.dumps(data))
    report = run_benchmark(toy_dataset, lambda ex: ex.gold_sql)
    agg = report.aggregates()
    assert agg["unscorable"] == 1
    assert agg["scorable"] == 3
    assert agg["ex_rate"] == 1.0


def test_benchmark_predictor_error_scores_false(toy_dataset):
    def fragile(ex):
        if ex.id == "e1":
            raise RuntimeError("boom")
        return ex.gold_sql

    report = run_benchmark(toy_dataset, fragile)
    agg = report.aggregates()
    assert agg["ex_correct"] == 2
    by_id = {r.id: r for r in report.results}
    assert by_id["e1"].ex is False
    assert "boom" in by_id["e1"].error


def test_benchmark_parallel_matches_serial(toy_dataset):
    serial = run_benchmark(toy_dataset, lambda ex: ex.gold_sql, workers=1)
    parallel = run_benchmark(toy_dataset, lambda ex: ex.gold_sql, workers=3)
    assert json.dumps(serial.to_json_dict(), sort_keys=True) == \
        json.dumps(parallel.to_json_dict(), sort_keys=True)


def test_benchmark_aggregates_match_recomputation(toy_dataset):
    report = run_benchmark(toy_dataset, lambda ex: ex.gold_sql)
    agg = report.aggregates()
    assert agg["ex_correct"] == sum(1 for r in report.results if r.ex)
    assert agg["n"] == len(report.results)


def test_file_predictor_alignment(toy_dataset, tmp_path):
    examples, _ = load_dataset(toy_dataset)
    pred_file = tmp_path / "preds.sql"
    pred_file.write_text("\n".join(ex.gold_sql for ex in examples) + "\n")
    predict = file_predictor(pred_file, examples)
    assert predict(examples[1]) == examples[1].gold_sql

    pred_file.write_text("SELECT 1\n")
    with pytest.raises(DatasetFormatError):
        file_predictor(pred_file, examples)


def test_report_text_table(toy_dataset):
    report = run_benchmark(toy_dataset, lambda ex: ex.gold_sql)
    table = report.format_table()
    assert "EX 3/3" in table
