"""
Run reports (JSON + metric CSV) and the cross-run summary table and chart.
"""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from pydantic import BaseModel, Field

from .config import ExperimentConfig
from .errors import ConfigurationError, DigestMismatchError

logger = logging.getLogger(__name__)

REPORT_NAME = "report.json"
METRICS_NAME = "metrics.csv"


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    loss: float


class EvalRecord(BaseModel):
    clips: int = Field(..., ge=1, le=2)
    uar: float = Field(..., ge=0, le=1)
    war: float = Field(..., ge=0, le=1)
    confusion: list[list[int]]


class RunReport(BaseModel):
    """Everything one training run produced"""

    name: str
    variant: str = ""
    config_digest: str = Field(..., min_length=64, max_length=64)
    config: dict
    seed: int
    fold: int
    epochs: list[EpochRecord]
    evaluations: list[EvalRecord]
    trainable_params: int
    param_groups: dict[str, int]
    frozen_digest: str
    wall_time_s: Optional[float] = None

    def evaluation(self, clips: int) -> EvalRecord:
        for record in self.evaluations:
            if record.clips == clips:
                return record
        raise ConfigurationError(f"Report {self.name} holds no {clips}-clip evaluation")

    def check_digest(self) -> None:
        """Verify the embedded config still hashes to the recorded digest"""
        embedded = ExperimentConfig.model_validate(self.config).digest()
        if embedded != self.config_digest:
            raise DigestMismatchError(f"Report {self.name}: embedded config digest {embedded[:12]} "
                                      f"differs from recorded {self.config_digest[:12]}")


def _fmt(value: float) -> str:
    return f"{value:.8f}"


def metric_rows(report: RunReport) -> list[tuple[str, str]]:
    """``name,value`` rows; excludes wall time so reruns are byte-identical"""
    rows = [("config_digest", report.config_digest), ("seed", str(report.seed)), ("fold", str(report.fold))]
    rows += [(f"epoch_{e.epoch + 1}_loss", _fmt(e.loss)) for e in report.epochs]
    for record in report.evaluations:
        rows += [(f"uar_clips{record.clips}", _fmt(record.uar)), (f"war_clips{record.clips}", _fmt(record.war))]
    rows.append(("trainable_params", str(report.trainable_params)))
    rows += [(f"params_{group}", str(count)) for group, count in report.param_groups.items()]
    return rows


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_run_report(report: RunReport, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / REPORT_NAME
    metrics_path = out_dir / METRICS_NAME
    report_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    metrics_path.write_text(_csv_text(("name", "value"), metric_rows(report)), encoding="utf-8")
    logger.info(f"📝 Wrote {report_path} and {metrics_path}")
    return report_path, metrics_path


def load_run_report(path: Path) -> RunReport:
    """Accepts a report.json path or the run directory holding one"""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    if not path.is_file():
        raise ConfigurationError(f"Run report not found: {path}")
    return RunReport.model_validate_json(path.read_text(encoding="utf-8"))


# ============= SUMMARY =============

def summary_rows(reports: Sequence[RunReport]) -> list[tuple[str, ...]]:
    rows = []
    for report in reports:
        one, two = report.evaluation(1), report.evaluation(2)
        rows.append((report.name, report.variant or report.name, _fmt(one.uar), _fmt(one.war),
                     _fmt(two.uar), _fmt(two.war), str(report.trainable_params)))
    return rows


SUMMARY_HEADER = ("run", "variant", "uar_clips1", "war_clips1", "uar_clips2", "war_clips2", "trainable_params")


def write_summary_csv(reports: Sequence[RunReport], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_csv_text(SUMMARY_HEADER, summary_rows(reports)), encoding="utf-8")
    return path


def render_svg(labels: Sequence[str], uar: Sequence[float], war: Sequence[float], title: str = "UAR / WAR") -> str:
    """Grouped bar chart, one UAR and one WAR bar per label, values in [0, 1]"""
    bar, gap, height, top, left = 18, 16, 200, 30, 40
    width = left + len(labels) * (2 * bar + gap) + gap
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{top + height + 70}" '
        f'font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="18" font-size="12">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + height}" x2="{width}" y2="{top + height}" stroke="black"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        y = top + height - tick * height
        parts.append(f'<text x="4" y="{y + 3:.1f}">{tick:.1f}</text>')
    for i, label in enumerate(labels):
        x = left + gap + i * (2 * bar + gap)
        for offset, value, colour in ((0, uar[i], "#4c72b0"), (bar, war[i], "#dd8452")):
            h = max(0.0, min(1.0, value)) * height
            parts.append(f'<rect x="{x + offset}" y="{top + height - h:.1f}" width="{bar}" '
                         f'height="{h:.1f}" fill="{colour}"/>')
        parts.append(f'<text x="{x}" y="{top + height + 14}" transform="rotate(30 {x} {top + height + 14})">'
                     f'{escape(label)}</text>')
    legend_y = top + height + 60
    parts.append(f'<rect x="{left}" y="{legend_y - 8}" width="8" height="8" fill="#4c72b0"/>'
                 f'<text x="{left + 12}" y="{legend_y}">UAR</text>')
    parts.append(f'<rect x="{left + 50}" y="{legend_y - 8}" width="8" height="8" fill="#dd8452"/>'
                 f'<text x="{left + 62}" y="{legend_y}">WAR</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def summarize(reports: Sequence[RunReport], out_dir: Path, expected_digest: str | None = None) -> tuple[Path, Path]:
    """
    Write summary.csv and summary.svg for a set of runs.

    Raises:
        DigestMismatchError: If a report was produced by another configuration
    """
    if not reports:
        raise ConfigurationError("No run reports to summarize")
    for report in reports:
        report.check_digest()
        if expected_digest is not None and report.config_digest != expected_digest:
            raise DigestMismatchError(
                f"Report {report.name} was produced by config {report.config_digest[:12]}, "
                f"expected {expected_digest[:12]}"
            )
    out_dir = Path(out_dir)
    csv_path = write_summary_csv(reports, out_dir / "summary.csv")
    labels = [r.variant or r.name for r in reports]
    svg = render_svg(labels, [r.evaluation(1).uar for r in reports], [r.evaluation(1).war for r in reports])
    svg_path = out_dir / "summary.svg"
    svg_path.write_text(svg, encoding="utf-8")
    logger.info(f"📊 Summarized {len(reports)} runs into {csv_path} and {svg_path}")
    return csv_path, svg_path


def write_ablation_table(suite: str, reports: Sequence[RunReport], out_dir: Path) -> Path:
    """``ablation_<suite>.csv`` with one row per variant, including its parameter count"""
    path = Path(out_dir) / f"ablation_{suite}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_csv_text(SUMMARY_HEADER, summary_rows(reports)), encoding="utf-8")
    return path