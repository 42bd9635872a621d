"""
Run reports and the summary table
"""
import csv

import pytest

from mmadfer.config import ExperimentConfig
from mmadfer.errors import ConfigurationError, DigestMismatchError
from mmadfer.reports import (SUMMARY_HEADER, EpochRecord, EvalRecord, RunReport, load_run_report, metric_rows,
                             render_svg, summarize, write_run_report)


def _report(cfg: ExperimentConfig, variant: str = "", uar: float = 0.5) -> RunReport:
    return RunReport(
        name=cfg.name,
        variant=variant,
        config_digest=cfg.digest(),
        config=cfg.model_dump(mode="json"),
        seed=cfg.seed,
        fold=cfg.data.fold,
        epochs=[EpochRecord(epoch=0, lr=1e-3, loss=1.25), EpochRecord(epoch=1, lr=5e-4, loss=0.75)],
        evaluations=[EvalRecord(clips=1, uar=uar, war=0.6, confusion=[[1, 1], [0, 2]]),
                     EvalRecord(clips=2, uar=uar, war=0.6, confusion=[[1, 1], [0, 2]])],
        trainable_params=1234,
        param_groups={"fusion": 1000, "classifier": 234},
        frozen_digest="0" * 64,
        wall_time_s=1.5,
    )


@pytest.fixture
def cfg() -> ExperimentConfig:
    return ExperimentConfig(name="demo")


def test_report_round_trip(tmp_path, cfg):
    report = _report(cfg)
    report_path, metrics_path = write_run_report(report, tmp_path / "run")
    assert load_run_report(tmp_path / "run") == report
    assert load_run_report(report_path).evaluation(2).war == pytest.approx(0.6)
    with open(metrics_path, newline="") as f:
        rows = dict(csv.reader(f))
    assert rows["epoch_2_loss"] == "0.75000000"
    assert rows["uar_clips1"] == "0.50000000"
    assert rows["params_fusion"] == "1000"
    assert "wall_time_s" not in rows


def test_metric_rows_ignore_wall_time(cfg):
    a, b = _report(cfg), _report(cfg)
    b.wall_time_s = 99.0
    assert metric_rows(a) == metric_rows(b)


def test_missing_report(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_report(tmp_path)


def test_missing_evaluation(cfg):
    report = _report(cfg)
    report.evaluations = report.evaluations[:1]
    with pytest.raises(ConfigurationError):
        report.evaluation(2)


def test_summary_has_one_row_per_run(tmp_path, cfg):
    reports = [_report(cfg, "Bottleneck", 0.7), _report(cfg, "ADD", 0.4)]
    csv_path, svg_path = summarize(reports, tmp_path, expected_digest=cfg.digest())
    with open(csv_path, newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == SUMMARY_HEADER
    assert [row[1] for row in rows[1:]] == ["Bottleneck", "ADD"]
    svg = svg_path.read_text()
    assert svg.startswith("<svg") and svg.count("<rect") == 2 * 2 + 2


def test_summary_refuses_other_configs(tmp_path, cfg):
    other = ExperimentConfig(name="demo", seed=7)
    with pytest.raises(DigestMismatchError):
        summarize([_report(cfg), _report(other)], tmp_path, expected_digest=cfg.digest())


def test_summary_refuses_tampered_config(tmp_path, cfg):
    report = _report(cfg)
    report.config["schedule"]["epochs"] = 3
    with pytest.raises(DigestMismatchError):
        summarize([report], tmp_path)


def test_svg_escapes_labels():
    assert "&lt;b&gt;" in render_svg(["<b>"], [0.5], [0.5])
