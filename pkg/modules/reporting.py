"""
Reporting Module - Per-epoch series, run reports, stability reports and
batch summary tables.

All outputs are data only (CSV and JSON) for plotting in external tools.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.config import Config
from modules.detector import CalibrationResult, DetectionVerdict, RunMetrics
from modules.ensemble_runner import EstimateSeries
from modules.stability import ClockCharacterization, StabilityPoint
from modules.trace_store import format_value, write_json
from utils.logger import setup_logger

logger = setup_logger(__name__)

SERIES_COLUMNS = [
    "epoch_s", "theta_hat_s", "gamma_hat", "theta_var_s2", "gamma_var", "nis",
    "theta_threshold_s", "gamma_threshold", "phase_alarm", "freq_alarm",
    "classification", "attack_truth_s",
]

METRIC_FIELDS = [
    "first_alarm_epoch", "detection_latency", "offset_at_detection", "false_positive_count",
    "first_phase_alarm_epoch", "first_freq_alarm_epoch", "phase_alarm_count",
    "freq_alarm_count", "blind_spot", "outcome",
]

# Metrics summarized per config in batch runs
SUMMARY_METRICS = ["detection_latency", "offset_at_detection", "false_positive_count"]


@dataclass
class RunReport:
    """Provenance, calibration and metrics of one detection run."""

    scenario: Dict[str, Any]
    calibration: CalibrationResult
    metrics: RunMetrics
    seed: Optional[int]
    config_hash: Optional[str]
    series_paths: List[str] = field(default_factory=list)
    tool_version: str = Config.TOOL_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": Config.TOOL_NAME,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "scenario": self.scenario,
            "calibration": {
                **self.calibration.to_dict(),
                "theta_threshold": self.calibration.theta_threshold,
                "gamma_threshold": self.calibration.gamma_threshold,
            },
            "metrics": self.metrics.to_dict(),
            "series": self.series_paths,
        }


def zero_mean_column(index: int) -> str:
    return f"clock{index + 1}_zero_mean_phase_s"


def zero_mean_phases(z: np.ndarray) -> np.ndarray:
    """
    Phase differences of each local clock with the epoch's mean over clocks removed.

    These are the per-oscillator corrections seen without the ensemble: a GNSS
    offset common to all clocks cancels, leaving the clocks' own wander. Missing
    measurements stay NaN and are left out of the mean; an all-NaN row stays NaN.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    valid = ~np.isnan(z)
    counts = valid.sum(axis=1, keepdims=True)
    sums = np.where(valid, z, 0.0).sum(axis=1, keepdims=True)
    means = np.divide(sums, counts, out=np.full_like(sums, np.nan), where=counts > 0)
    return z - means


def write_series_csv(path: Path, estimates: EstimateSeries,
                     verdicts: Sequence[DetectionVerdict], calibration: CalibrationResult,
                     attack_truth: Sequence[float],
                     measurements: Optional[np.ndarray] = None) -> Path:
    """
    Per-epoch estimates, thresholds, alarms and classification.

    Args:
        path: Destination file
        estimates: Filter estimates
        verdicts: Detector verdicts (aligned with estimates)
        calibration: Calibration used (thresholds are written on every row)
        attack_truth: Injected offset per epoch
        measurements: Raw phase differences z (epochs x clocks); when given, each
            clock gets a column with the cross-clock mean of its row removed

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    zero_mean = None if measurements is None else zero_mean_phases(measurements)
    columns = list(SERIES_COLUMNS)
    if zero_mean is not None:
        columns += [zero_mean_column(i) for i in range(zero_mean.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for k, verdict in enumerate(verdicts):
            row = [
                format_value(estimates.epochs[k]),
                format_value(estimates.theta_hat[k]),
                format_value(estimates.gamma_hat[k]),
                format_value(estimates.theta_var[k]),
                format_value(estimates.gamma_var[k]),
                "" if np.isnan(estimates.nis[k]) else format_value(estimates.nis[k]),
                format_value(calibration.theta_threshold),
                format_value(calibration.gamma_threshold),
                int(verdict.phase_alarm),
                int(verdict.freq_alarm),
                verdict.classification.value,
                format_value(attack_truth[k]),
            ]
            if zero_mean is not None:
                row += ["" if np.isnan(v) else format_value(v) for v in zero_mean[k]]
            writer.writerow(row)
    logger.info(f"Wrote {len(verdicts)}-epoch detection series to {path}")
    return path


def write_run_report(report: RunReport, path: Path) -> Path:
    path = write_json(report.to_dict(), path)
    logger.info(f"Wrote run report to {path}")
    return path


def _points_to_rows(points: Sequence[StabilityPoint]) -> List[Dict[str, Any]]:
    return [{"tau": p.tau, "variance": p.variance, "deviation": p.deviation,
             "num_terms": p.num_terms} for p in points]


def stability_report(sections: Dict[str, ClockCharacterization], tau0: float,
                     num_epochs: int) -> Dict[str, Any]:
    """
    Build the stability report document.

    One section per clock with its Hadamard and Allan curves and fitted noise
    densities.
    """
    clocks = {}
    for name, result in sections.items():
        clocks[name] = {
            "hadamard": _points_to_rows(result.hadamard),
            "allan": _points_to_rows(result.allan),
            "noise_fit": None if result.fit is None else {
                **result.fit.spec.to_dict(),
                "residual": result.fit.residual,
            },
        }
    return {
        "tool": Config.TOOL_NAME,
        "tool_version": Config.TOOL_VERSION,
        "tau0": tau0,
        "num_epochs": num_epochs,
        "clocks": clocks,
    }


def write_metrics_table(rows: Sequence[Dict[str, Any]], path: Path) -> Path:
    """CSV table with one row per (config, seed) run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["config", "seed", "status"] + METRIC_FIELDS + ["error"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _cell(row.get(column)) for column in columns})
    logger.info(f"Wrote {len(rows)} batch rows to {path}")
    return path


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_value(value)
    return value


def summarize_batch(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    Median and interquartile range of the headline metrics per config.

    Missing values (no detection) are excluded from the statistics and
    counted separately.
    """
    summary = []
    for config_name in sorted({row["config"] for row in rows}):
        runs = [row for row in rows if row["config"] == config_name and row["status"] == "ok"]
        entry: Dict[str, Any] = {
            "config": config_name,
            "runs": len(runs),
            "failed": sum(1 for row in rows
                          if row["config"] == config_name and row["status"] != "ok"),
            "total_false_positives": int(sum(row["false_positive_count"] for row in runs)),
        }
        for metric in SUMMARY_METRICS:
            values = np.array([row[metric] for row in runs if row.get(metric) is not None],
                              dtype=float)
            entry[f"{metric}_count"] = int(values.size)
            if values.size:
                q1, median, q3 = np.percentile(values, [25, 50, 75])
                entry[f"{metric}_median"] = float(median)
                entry[f"{metric}_iqr"] = float(q3 - q1)
            else:
                entry[f"{metric}_median"] = None
                entry[f"{metric}_iqr"] = None
        summary.append(entry)
    return summary


def write_summary_table(summary: Sequence[Dict[str, Any]], path: Path) -> Path:
    path = Path(path)
    columns = list(summary[0].keys()) if summary else ["config"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for entry in summary:
            writer.writerow({column: _cell(entry.get(column)) for column in columns})
    return path
