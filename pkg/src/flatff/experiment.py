"""Experiment orchestration: strategy x disturbance x feedback matrix.

Each cell runs a fixed number of consecutive trajectory executions. The
first uses a zero-weight model (equivalent to no compensation); after every
run the model is refit from the pooled residuals of all past runs of that
cell. The reported error metric comes from the final run. Cells are fully
independent: no data or models are shared between them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errmodel, sim2d
from .errmodel import LinearErrorModel, make_feature_map_2d
from .errors import ConfigError, FlatffError, SimulationAbort
from .flatness import PhysicalParams, Strategy
from .sim2d import DISTURBANCE_SETS, Gains, RunLog, SimConfig
from .trajgen import PolySegment, fit_rest_to_rest_poly

ALL_STRATEGIES = tuple(Strategy)
ALL_SETS = ("A", "B", "C", "D")

SUMMARY_COLUMNS = (
    "set", "feedback", "strategy",
    "max_abs_err_peraxis", "max_abs_err_norm", "run_index",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment matrix description with paper-free defaults baked in."""

    strategies: tuple[Strategy, ...] = ALL_STRATEGIES
    dist_sets: tuple[str, ...] = ALL_SETS
    feedback_modes: tuple[bool, ...] = (False, True)
    runs_per_config: int = 3
    dt: float = 1e-3
    params: PhysicalParams = sim2d.DEFAULT_PARAMS
    gains: Gains = Gains()
    ridge: float = 1e-8
    traj_start: tuple[float, float] = (0.0, 0.0)
    traj_end: tuple[float, float] = (1.0, 1.0)
    traj_duration: float = 1.0
    output_dir: str = "results"

    def __post_init__(self):
        if self.runs_per_config < 1:
            raise ValueError("runs_per_config must be >= 1")
        unknown = [s for s in self.dist_sets if s not in DISTURBANCE_SETS]
        if unknown:
            raise ValueError(f"unknown disturbance sets: {unknown}")

    def trajectory(self) -> PolySegment:
        start = (self.traj_start[0], 0.0, self.traj_start[1])
        end = (self.traj_end[0], 0.0, self.traj_end[1])
        return fit_rest_to_rest_poly(start, end, self.traj_duration)


@dataclass(frozen=True)
class CellResult:
    """Outcome of one (set, feedback, strategy) cell."""

    dist_set: str
    feedback: bool
    strategy: Strategy
    max_err_peraxis: float | None
    max_err_norm: float | None
    run_index: int
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass
class SummaryTable:
    """Error table for one feedback mode: rows = disturbance sets, columns = strategies."""

    feedback: bool
    dist_sets: tuple[str, ...]
    strategies: tuple[Strategy, ...]
    cells: dict[tuple[str, Strategy], CellResult] = field(default_factory=dict)

    def value(self, dist_set: str, strategy: Strategy, metric: str = "norm") -> float:
        """Cell error; ``metric`` selects "norm" (reported) or "peraxis"."""
        cell = self.cells[(dist_set, strategy)]
        if cell.failed:
            raise KeyError(f"cell {dist_set}/{strategy.value} failed: {cell.failure}")
        return cell.max_err_norm if metric == "norm" else cell.max_err_peraxis

    @property
    def any_failed(self) -> bool:
        return any(c.failed for c in self.cells.values())

    def format(self) -> str:
        mode = "with feedback" if self.feedback else "without feedback"
        out = io.StringIO()
        out.write(f"Maximum position error norm [m], {mode}\n")
        out.write("set " + "".join(f"{s.value:>10}" for s in self.strategies) + "\n")
        for ds in self.dist_sets:
            row = [f"{ds:>3} "]
            for s in self.strategies:
                cell = self.cells.get((ds, s))
                if cell is None:
                    row.append(f"{'-':>10}")
                elif cell.failed:
                    row.append(f"{'failed':>10}")
                else:
                    row.append(f"{cell.max_err_norm:>10.3f}")
            out.write("".join(row) + "\n")
        return out.getvalue()


def max_abs_position_error(log: RunLog) -> float:
    """Largest per-axis position error magnitude over a run."""
    if len(log) == 0:
        raise ValueError("empty run log")
    return float(np.max(np.abs(log.err)))


def max_norm_position_error(log: RunLog) -> float:
    """Largest Euclidean position error over a run (alternate metric)."""
    if len(log) == 0:
        raise ValueError("empty run log")
    return float(np.max(np.sqrt(np.sum(log.err**2, axis=1))))


@dataclass
class CellRuns:
    """Cell result plus the raw artifacts behind it."""

    cell: CellResult
    logs: list[RunLog]
    model: LinearErrorModel


def run_config(
    cfg: ExperimentConfig, strategy: Strategy, dist_set: str, feedback: bool
) -> CellRuns:
    """Run the train/evaluate protocol for one cell.

    Run 1 uses a zero-weight model; each subsequent run uses a model refit
    from the pooled residuals of all previous runs of this cell. The metric
    is taken from the final run. Failures mark the cell instead of raising.
    """
    traj = cfg.trajectory()
    sim_cfg = SimConfig(
        strategy=strategy,
        disturbances=DISTURBANCE_SETS[dist_set],
        feedback=feedback,
        dt=cfg.dt,
        params=cfg.params,
        gains=cfg.gains,
    )
    fmap = make_feature_map_2d(m_nom=cfg.params.mass)
    model = LinearErrorModel.zeros(fmap)
    samples: list[errmodel.TrainingSample] = []
    logs: list[RunLog] = []
    failure = None
    try:
        for _ in range(cfg.runs_per_config):
            log = sim2d.run_trajectory(sim_cfg, traj, model)
            logs.append(log)
            samples.extend(errmodel.residuals_from_log(log, cfg.params))
            model = errmodel.fit(samples, fmap, ridge=cfg.ridge)
    except (SimulationAbort, FlatffError, np.linalg.LinAlgError) as exc:
        failure = f"run {len(logs) + 1}: {exc}"

    if failure is None:
        final = logs[cfg.runs_per_config - 1]
        cell = CellResult(
            dist_set=dist_set,
            feedback=feedback,
            strategy=strategy,
            max_err_peraxis=max_abs_position_error(final),
            max_err_norm=max_norm_position_error(final),
            run_index=cfg.runs_per_config,
        )
    else:
        cell = CellResult(
            dist_set=dist_set,
            feedback=feedback,
            strategy=strategy,
            max_err_peraxis=None,
            max_err_norm=None,
            run_index=cfg.runs_per_config,
            failure=failure,
        )
    return CellRuns(cell=cell, logs=logs, model=model)


@dataclass
class MatrixResult:
    """Everything produced by a matrix run."""

    tables: dict[bool, SummaryTable]
    cell_runs: dict[tuple[str, bool, Strategy], CellRuns]
    output_dir: Path | None

    @property
    def any_failed(self) -> bool:
        return any(t.any_failed for t in self.tables.values())

    def format_tables(self) -> str:
        parts = [
            self.tables[fb].format()
            for fb in (False, True)
            if fb in self.tables
        ]
        return "\n".join(parts)


def run_matrix(
    cfg: ExperimentConfig,
    output_dir: str | Path | None = None,
    render_figures: bool = True,
    cell_filter: set[tuple[str, Strategy]] | None = None,
) -> MatrixResult:
    """Run every requested cell and write the report artifacts.

    Writes, under the output directory: ``summary.csv``, per-run logs, a
    fitted model per cell, per-timestep error CSVs of the reported runs,
    the formatted tables, and (optionally) rendered error figures. Cell
    failures are recorded, never raised. ``cell_filter`` restricts the run
    to the listed (set, strategy) pairs.
    """
    out = Path(output_dir) if output_dir is not None else Path(cfg.output_dir)
    tables = {
        fb: SummaryTable(feedback=fb, dist_sets=cfg.dist_sets, strategies=cfg.strategies)
        for fb in cfg.feedback_modes
    }
    cell_runs: dict[tuple[str, bool, Strategy], CellRuns] = {}
    for dist_set in cfg.dist_sets:
        for fb in cfg.feedback_modes:
            for strategy in cfg.strategies:
                if cell_filter is not None and (dist_set, strategy) not in cell_filter:
                    continue
                result = run_config(cfg, strategy, dist_set, fb)
                tables[fb].cells[(dist_set, strategy)] = result.cell
                cell_runs[(dist_set, fb, strategy)] = result

    mr = MatrixResult(tables=tables, cell_runs=cell_runs, output_dir=out)
    write_artifacts(mr, cfg, render_figures=render_figures)
    return mr


def load_summary(output_dir: str | Path) -> dict[bool, SummaryTable]:
    """Rebuild summary tables from a previously written ``summary.csv``."""
    out = Path(output_dir)
    path = out / "summary.csv"
    if not path.exists():
        raise FileNotFoundError(f"no summary.csv under {out}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    tables: dict[bool, SummaryTable] = {}
    for row in rows:
        fb = row["feedback"] == "on"
        strategy = Strategy(row["strategy"])
        if fb not in tables:
            tables[fb] = SummaryTable(feedback=fb, dist_sets=(), strategies=())
        table = tables[fb]
        if row["set"] not in table.dist_sets:
            table.dist_sets = table.dist_sets + (row["set"],)
        if strategy not in table.strategies:
            table.strategies = tuple(
                s for s in ALL_STRATEGIES if s in table.strategies + (strategy,)
            )
        failed = row["max_abs_err_peraxis"] == ""
        table.cells[(row["set"], strategy)] = CellResult(
            dist_set=row["set"],
            feedback=fb,
            strategy=strategy,
            max_err_peraxis=None if failed else float(row["max_abs_err_peraxis"]),
            max_err_norm=None if failed else float(row["max_abs_err_norm"]),
            run_index=0 if failed else int(row["run_index"]),
            failure="recorded failure" if failed else None,
        )
    return tables


def _cell_tag(dist_set: str, feedback: bool, strategy: Strategy) -> str:
    return f"{dist_set}_{'on' if feedback else 'off'}_{strategy.value}"


def write_artifacts(
    mr: MatrixResult, cfg: ExperimentConfig, render_figures: bool = True
) -> None:
    """Write all report files for a completed matrix run."""
    out = mr.output_dir
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    (out / "errors").mkdir(exist_ok=True)

    rows = []
    failures = []
    for (dist_set, fb, strategy), cr in mr.cell_runs.items():
        tag = _cell_tag(dist_set, fb, strategy)
        for i, log in enumerate(cr.logs, start=1):
            log.to_csv(out / "runs" / f"{tag}_run{i}.csv")
        errmodel.save_model(cr.model, out / "models" / f"{tag}.model")
        if not cr.cell.failed:
            reported = cr.logs[cr.cell.run_index - 1]
            _write_error_csv(reported, out / "errors" / f"{tag}.csv")
            rows.append(
                (
                    dist_set,
                    "on" if fb else "off",
                    strategy.value,
                    f"{cr.cell.max_err_peraxis:.17g}",
                    f"{cr.cell.max_err_norm:.17g}",
                    str(cr.cell.run_index),
                )
            )
        else:
            rows.append((dist_set, "on" if fb else "off", strategy.value, "", "", ""))
            failures.append(f"{tag}: {cr.cell.failure}")

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(rows)

    with open(out / "tables.txt", "w") as fh:
        fh.write(mr.format_tables())
    if failures:
        with open(out / "failures.txt", "w") as fh:
            fh.write("\n".join(failures) + "\n")

    if render_figures:
        from . import plotting

        plotting.render_matrix_figures(mr, out / "figures")


def _write_error_csv(log: RunLog, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "ex", "ez"))
        for i in range(len(log)):
            writer.writerow(
                (f"{log.t[i]:.17g}", f"{log.err[i, 0]:.17g}", f"{log.err[i, 1]:.17g}")
            )


# --- configuration file parsing -------------------------------------------

_FLOAT_KEYS = {
    "dt", "mass", "gravity", "inertia",
    "kp_pos", "kd_pos", "kp_att", "kd_att",
    "ridge", "traj_start_x", "traj_start_z", "traj_end_x", "traj_end_z",
    "traj_duration",
}
_INT_KEYS = {"runs_per_config"}
_OTHER_KEYS = {"strategies", "dist_sets", "feedback", "out_dir"}
CONFIG_KEYS = _FLOAT_KEYS | _INT_KEYS | _OTHER_KEYS


def parse_config(path) -> ExperimentConfig:
    """Parse a ``key = value`` experiment configuration file.

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    An empty file yields the default configuration. See the README for the
    full key list.

    Raises:
        ConfigError: with the offending line number on any schema violation.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'key = value'", line=lineno)
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key {key!r}", line=lineno)
            if key in values:
                raise ConfigError(f"duplicate key {key!r}", line=lineno)
            values[key] = _parse_value(key, value, lineno)
    return _build_config(values)


def _parse_value(key: str, value: str, lineno: int):
    if key in _FLOAT_KEYS:
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {value!r}", line=lineno) from None
        if key == "dt" and not v > 0:
            raise ConfigError("dt must be positive", line=lineno)
        if key in ("mass", "gravity", "inertia", "traj_duration") and not v > 0:
            raise ConfigError(f"{key} must be positive", line=lineno)
        if key.startswith(("kp_", "kd_")) and v < 0:
            raise ConfigError(f"{key} must be non-negative", line=lineno)
        if key == "ridge" and v < 0:
            raise ConfigError("ridge must be non-negative", line=lineno)
        return v
    if key in _INT_KEYS:
        try:
            v = int(value)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {value!r}", line=lineno) from None
        if key == "runs_per_config" and v < 1:
            raise ConfigError("runs_per_config must be >= 1", line=lineno)
        return v
    if key == "strategies":
        names = [s.strip() for s in value.split(",") if s.strip()]
        try:
            return tuple(Strategy(n) for n in names)
        except ValueError:
            raise ConfigError(f"unknown strategy in {value!r}", line=lineno) from None
    if key == "dist_sets":
        sets = tuple(s.strip() for s in value.split(",") if s.strip())
        for s in sets:
            if s not in DISTURBANCE_SETS:
                raise ConfigError(f"unknown disturbance set {s!r}", line=lineno)
        return sets
    if key == "feedback":
        if value not in ("on", "off", "both"):
            raise ConfigError("feedback must be on, off or both", line=lineno)
        return {"on": (True,), "off": (False,), "both": (False, True)}[value]
    return value  # out_dir


def _build_config(values: dict[str, object]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    params = PhysicalParams(
        mass=values.get("mass", cfg.params.mass),
        gravity=values.get("gravity", cfg.params.gravity),
        inertia=values.get("inertia", cfg.params.inertia),
    )
    gains = Gains(
        kp_pos=values.get("kp_pos", cfg.gains.kp_pos),
        kd_pos=values.get("kd_pos", cfg.gains.kd_pos),
        kp_att=values.get("kp_att", cfg.gains.kp_att),
        kd_att=values.get("kd_att", cfg.gains.kd_att),
    )
    return ExperimentConfig(
        strategies=values.get("strategies", cfg.strategies),
        dist_sets=values.get("dist_sets", cfg.dist_sets),
        feedback_modes=values.get("feedback", cfg.feedback_modes),
        runs_per_config=values.get("runs_per_config", cfg.runs_per_config),
        dt=values.get("dt", cfg.dt),
        params=params,
        gains=gains,
        ridge=values.get("ridge", cfg.ridge),
        traj_start=(
            values.get("traj_start_x", cfg.traj_start[0]),
            values.get("traj_start_z", cfg.traj_start[1]),
        ),
        traj_end=(
            values.get("traj_end_x", cfg.traj_end[0]),
            values.get("traj_end_z", cfg.traj_end[1]),
        ),
        traj_duration=values.get("traj_duration", cfg.traj_duration),
        output_dir=values.get("out_dir", cfg.output_dir),
    )
