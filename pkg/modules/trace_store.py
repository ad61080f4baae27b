"""
Trace Store Module - CSV and JSON persistence for traces, measurement logs,
calibrations and scenario configs.
"""
import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from config.config import Config
from modules.detector import CalibrationResult
from modules.scenario import MeasurementLog, ScenarioConfig, TraceSet
from utils.errors import ConfigError, InvalidArgumentError, InvalidDataError, TraceParseError
from utils.logger import setup_logger

logger = setup_logger(__name__)

PathLike = Union[str, Path]

EPOCH_COLUMN = "epoch_s"
GNSS_COLUMN = "gnss_phase_s"
TRUTH_COLUMN = "attack_truth_s"
MEASUREMENT_COLUMNS = ("epoch_s", "clock_id", "phase_diff_s")


def clock_column(index: int) -> str:
    """Column name of local clock `index` (1-based)."""
    return f"clock{index}_phase_s"


def format_value(value: float) -> str:
    # 17 significant digits round-trips every float64 exactly
    return format(float(value), ".17g")


def _data_lines(handle) -> Iterator[Tuple[int, str]]:
    """Yield (line number, text) for non-blank, non-comment lines."""
    for line_number, line in enumerate(handle, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        yield line_number, text


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise TraceParseError(f"Not a number: {text!r}", line=line, column=column)
    if not np.isfinite(value):
        raise TraceParseError(f"Non-finite value: {text!r}", line=line, column=column)
    return value


def save_trace_csv(traces: TraceSet, path: PathLike,
                   metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a trace CSV.

    Args:
        traces: Traces to write
        path: Destination file
        metadata: Written as `# key: value` comment lines before the header

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [EPOCH_COLUMN, GNSS_COLUMN]
    header += [clock_column(i + 1) for i in range(traces.num_local_clocks)]
    header.append(TRUTH_COLUMN)

    with open(path, "w", newline="", encoding="utf-8") as f:
        for key, value in (metadata or {}).items():
            f.write(f"# {key}: {value}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(traces)):
            row = [traces.epochs[k], traces.gnss_phase[k]]
            row += list(traces.local_phases[:, k])
            row.append(traces.attack_truth[k])
            writer.writerow([format_value(v) for v in row])

    logger.info(f"Saved trace with {len(traces)} epochs to {path}")
    return path


def load_trace_csv(path: PathLike) -> TraceSet:
    """
    Read a trace CSV.

    Args:
        path: Source file

    Returns:
        TraceSet: Parsed traces

    Raises:
        TraceParseError: Malformed header or rows (with line and column)
        InvalidDataError: Epochs not strictly increasing (with line)
    """
    path = Path(path)
    with open(path, "r", newline="", encoding="utf-8") as f:
        lines = _data_lines(f)
        try:
            header_line, header_text = next(lines)
        except StopIteration:
            raise TraceParseError(f"Trace file {path} has no header")
        header = [name.strip() for name in next(csv.reader([header_text]))]

        for required in (EPOCH_COLUMN, GNSS_COLUMN, clock_column(1), TRUTH_COLUMN):
            if required not in header:
                raise TraceParseError(f"Missing column '{required}'", line=header_line,
                                      column=required)
        num_local = 0
        while clock_column(num_local + 1) in header:
            num_local += 1
        columns = [EPOCH_COLUMN, GNSS_COLUMN]
        columns += [clock_column(i + 1) for i in range(num_local)]
        columns.append(TRUTH_COLUMN)
        positions = [header.index(name) for name in columns]

        rows: List[List[float]] = []
        previous_epoch = None
        for line_number, text in lines:
            fields = next(csv.reader([text]))
            if len(fields) != len(header):
                raise TraceParseError(
                    f"Expected {len(header)} fields, got {len(fields)}", line=line_number
                )
            values = [_parse_float(fields[pos].strip(), line_number, name)
                      for pos, name in zip(positions, columns)]
            if previous_epoch is not None and values[0] <= previous_epoch:
                raise InvalidDataError(
                    f"Epoch {values[0]:g} does not increase after {previous_epoch:g}",
                    line=line_number,
                )
            previous_epoch = values[0]
            rows.append(values)

    if not rows:
        raise TraceParseError(f"Trace file {path} has no data rows")
    data = np.array(rows)
    logger.info(f"Loaded trace from {path}: {data.shape[0]} epochs, {num_local} local clocks")
    return TraceSet(
        epochs=data[:, 0],
        gnss_phase=data[:, 1],
        local_phases=data[:, 2:2 + num_local].T,
        attack_truth=data[:, -1],
    )


def load_measurement_csv(path: PathLike) -> MeasurementLog:
    """
    Read a recorded measurement log in long format.

    Each row holds one phase difference (GNSS minus local clock `clock_id`).
    Rows sharing an epoch form one measurement vector; clocks absent at an
    epoch become NaN (missing measurement).

    Args:
        path: Source file

    Returns:
        MeasurementLog: Epoch x clock matrix
    """
    path = Path(path)
    entries: Dict[float, Dict[int, float]] = {}
    order: List[float] = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        lines = _data_lines(f)
        try:
            header_line, header_text = next(lines)
        except StopIteration:
            raise TraceParseError(f"Measurement file {path} has no header")
        header = [name.strip() for name in next(csv.reader([header_text]))]
        for required in MEASUREMENT_COLUMNS:
            if required not in header:
                raise TraceParseError(f"Missing column '{required}'", line=header_line,
                                      column=required)
        epoch_pos, clock_pos, diff_pos = (header.index(c) for c in MEASUREMENT_COLUMNS)

        for line_number, text in lines:
            fields = next(csv.reader([text]))
            if len(fields) != len(header):
                raise TraceParseError(
                    f"Expected {len(header)} fields, got {len(fields)}", line=line_number
                )
            epoch = _parse_float(fields[epoch_pos].strip(), line_number, "epoch_s")
            try:
                clock_id = int(fields[clock_pos].strip())
            except ValueError:
                raise TraceParseError(f"Not an integer: {fields[clock_pos]!r}",
                                      line=line_number, column="clock_id")
            if clock_id < 1:
                raise InvalidDataError(f"clock_id must be >= 1, got {clock_id}", line=line_number)
            value = _parse_float(fields[diff_pos].strip(), line_number, "phase_diff_s")

            if order and epoch < order[-1]:
                raise InvalidDataError(
                    f"Epoch {epoch:g} goes backwards after {order[-1]:g}", line=line_number
                )
            if not order or epoch != order[-1]:
                order.append(epoch)
                entries[epoch] = {}
            if clock_id in entries[epoch]:
                raise InvalidDataError(
                    f"Duplicate measurement for clock {clock_id} at epoch {epoch:g}",
                    line=line_number,
                )
            entries[epoch][clock_id] = value

    if not order:
        raise TraceParseError(f"Measurement file {path} has no data rows")
    num_local = max(max(row) for row in entries.values() if row)
    z = np.full((len(order), num_local), np.nan)
    for k, epoch in enumerate(order):
        for clock_id, value in entries[epoch].items():
            z[k, clock_id - 1] = value
    missing = int(np.count_nonzero(np.isnan(z)))
    if missing:
        logger.warning(f"{path}: {missing} missing measurements across {len(order)} epochs")
    logger.info(f"Loaded measurement log from {path}: {len(order)} epochs, {num_local} local clocks")
    return MeasurementLog(np.array(order), z)


def is_measurement_csv(path: PathLike) -> bool:
    """True if the first non-comment line is a measurement-log header."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        for _, text in _data_lines(f):
            header = [name.strip() for name in next(csv.reader([text]))]
            return all(column in header for column in MEASUREMENT_COLUMNS)
    return False


def write_json(data: Any, path: PathLike) -> Path:
    """Write canonical JSON (sorted keys) so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_json(path: PathLike) -> Any:
    """
    Read a JSON document.

    Raises:
        ConfigError: If the document is not valid JSON
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def resolve_config_path(name_or_path: PathLike) -> Path:
    """
    Find a scenario config by path or by preset name.

    Raises:
        ConfigError: If neither a file nor a preset matches
    """
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    presets = Path(Config.PRESETS_DIR)
    for preset in (presets / candidate.name, presets / f"{candidate.name}.json"):
        if preset.is_file():
            return preset
    raise ConfigError(f"Scenario config not found: {name_or_path}")


def load_scenario_config(name_or_path: PathLike) -> ScenarioConfig:
    """Load and validate a scenario config file or named preset."""
    path = resolve_config_path(name_or_path)
    try:
        config = ScenarioConfig.from_dict(load_json(path))
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info(f"Loaded scenario config '{config.name}' from {path}")
    return config


def save_calibration(calibration: CalibrationResult, path: PathLike) -> Path:
    return write_json(calibration.to_dict(), path)


def load_calibration(name_or_path: PathLike) -> CalibrationResult:
    """Load a calibration JSON by path or by name in the calibrations directory."""
    candidate = Path(name_or_path)
    if not candidate.is_file():
        shipped = Path(Config.CALIBRATIONS_DIR) / f"{candidate.stem}.json"
        if not shipped.is_file():
            raise ConfigError(f"Calibration not found: {name_or_path}")
        candidate = shipped
    try:
        return CalibrationResult.from_dict(load_json(candidate))
    except ConfigError:
        raise
    except (InvalidArgumentError, TypeError) as e:
        raise ConfigError(f"{candidate}: invalid calibration: {e}") from e


class TraceStore:
    """Output directory holding the files of one or more runs."""

    def __init__(self, out_dir: Optional[PathLike] = None):
        """
        Initialize the store.

        Args:
            out_dir: Output directory (default from config)
        """
        self.out_dir = Path(out_dir or Config.OUTPUT_DIR)
        self._ensure_output_directory()
        logger.debug(f"TraceStore initialized at {self.out_dir}")

    def _ensure_output_directory(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, stem: str, suffix: str) -> Path:
        return self.out_dir / f"{stem}_{suffix}"

    def save_trace(self, traces: TraceSet, stem: str,
                   metadata: Optional[Dict[str, Any]] = None) -> Path:
        return save_trace_csv(traces, self.path_for(stem, "trace.csv"), metadata)

    def save_config(self, config: ScenarioConfig, stem: str) -> Path:
        return write_json(config.to_dict(), self.path_for(stem, "config.json"))

    def save_json(self, data: Any, stem: str, suffix: str) -> Path:
        return write_json(data, self.path_for(stem, suffix))


def companion_config_path(trace_path: PathLike) -> Path:
    """Config echo written next to a trace by the simulate command."""
    trace_path = Path(trace_path)
    stem = trace_path.stem
    if stem.endswith("_trace"):
        stem = stem[: -len("_trace")]
    return trace_path.with_name(f"{stem}_config.json")
