"""Tests for run reports, curves and evaluation CSVs."""

import csv

import pytest

from safedagger.evaluation import EvalReport, TrackResult
from safedagger.report import (CURVE_COLUMNS, EVAL_COLUMNS, REPORT_COLUMNS, IterationRecord,
                               RunReport, fmt, summarize_run, write_eval_csv)


def _eval(strategy, laps, traffic=0):
    return EvalReport(strategy, traffic, 3, per_track=[
        TrackResult("hexagon", laps=laps, damage=1, steps=100, primary_steps=80,
                    reference_steps=20, steer_sq_error=0.8, status="finished"),
    ])


def _report():
    report = RunReport("safedagger", 4, metadata={"safety_mode": "learned"})
    for i, laps in enumerate([1.0, 2.5]):
        rec = IterationRecord(iteration=i, dataset_size=100 * (i + 1), label_queries=50 * (i + 1),
                              takeover_queries=10 * i, tau=0.0025, safety_accuracy=0.9,
                              collection_takeover_fraction=0.5 - 0.1 * i)
        rec.evals[("naive", 0)] = _eval("naive", laps)
        rec.evals[("safe", 0)] = _eval("safe", 3.0)
        report.records.append(rec)
    return report


def test_fmt():
    assert fmt(None) == ""
    assert fmt(True) == "1"
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(7) == "7"
    assert fmt([1, 2]) == "2"


def test_columns_include_eval_keys():
    cols = _report().columns()
    assert cols[:len(REPORT_COLUMNS)] == list(REPORT_COLUMNS)
    assert "naive_traffic0_avg_laps" in cols
    assert "safe_traffic0_takeover_fraction" in cols


def test_csv_rows(tmp_path):
    report = _report()
    report.write_csv(tmp_path / "report.csv")
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert len(rows) == 2
    assert rows[1]["naive_traffic0_avg_laps"] == "2.5"
    assert rows[0]["tau"] == "0.0025"
    assert rows[0]["selection_fraction"] == ""
    assert report.to_csv() == _report().to_csv()


def test_totals_follow_final_record():
    report = _report()
    assert report.label_queries == 100
    assert report.takeover_queries == 10
    assert RunReport("dagger", 0).label_queries == 0


def test_summary_text():
    text = _report().summary_text()
    assert "regime: safedagger" in text
    assert "safety_mode: learned" in text
    assert "label queries: 100" in text
    assert "iter 1:" in text


def test_summarize_run_writes_curves(tmp_path):
    paths = summarize_run(_report(), tmp_path)
    assert [p.name for p in paths] == ["curves.csv", "learning_curves.svg", "takeover.svg"]
    rows = list(csv.reader(paths[0].open()))
    assert tuple(rows[0]) == CURVE_COLUMNS
    assert len(rows) == 1 + 4
    assert paths[1].read_text().lstrip().startswith("<?xml")


def test_summarize_run_needs_records(tmp_path):
    with pytest.raises(ValueError):
        summarize_run(RunReport("dagger", 0), tmp_path)


def test_eval_csv(tmp_path):
    path = tmp_path / "eval.csv"
    write_eval_csv([_eval("naive", 2.0), _eval("safe", 3.0)], path)
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0].keys()) == list(EVAL_COLUMNS)
    assert [r["track"] for r in rows] == ["hexagon", "all", "hexagon", "all"]
    assert rows[0]["steering_mse"] == "0.01"
    assert rows[1]["takeover_fraction"] == "0.2"
