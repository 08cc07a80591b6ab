"""Figure rendering for the experiment report path.

Renders per-timestep tracking-error curves, one figure per disturbance set
and feedback mode with one line per strategy, next to the delimited outputs.
All rendering targets files (Agg backend); nothing is shown interactively.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

STRATEGY_COLORS = {
    "FF1": "tab:gray",
    "FF2": "tab:blue",
    "FF3": "tab:green",
    "FF4": "tab:orange",
    "FF5": "tab:red",
}


def render_error_curves(
    curves: dict[str, tuple], dist_set: str, feedback: bool, path: Path
) -> None:
    """Render x/z tracking-error curves to a file.

    Args:
        curves: strategy name -> (t, ex, ez) arrays for the reported run.
        dist_set: disturbance set label for the title.
        feedback: whether the runs were closed loop.
        path: output image path (suffix selects the format).
    """
    fig, (ax_x, ax_z) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.0))
    for name, (t, ex, ez) in curves.items():
        color = STRATEGY_COLORS.get(name)
        ax_x.plot(t, ex, label=name, color=color, linewidth=1.2)
        ax_z.plot(t, ez, color=color, linewidth=1.2)
    mode = "with feedback" if feedback else "without feedback"
    ax_x.set_title(f"Tracking error, disturbance set {dist_set}, {mode}")
    ax_x.set_ylabel("x error [m]")
    ax_z.set_ylabel("z error [m]")
    ax_z.set_xlabel("time [s]")
    for ax in (ax_x, ax_z):
        ax.grid(True, alpha=0.3)
    ax_x.legend(loc="best", fontsize=8, ncol=5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_matrix_figures(matrix_result, figures_dir: Path) -> None:
    """Render one error figure per (set, feedback) combination of a matrix run."""
    figures_dir = Path(figures_dir)
    figures_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, bool], dict[str, tuple]] = {}
    for (dist_set, fb, strategy), cr in matrix_result.cell_runs.items():
        if cr.cell.failed:
            continue
        log = cr.logs[cr.cell.run_index - 1]
        groups.setdefault((dist_set, fb), {})[strategy.value] = (
            log.t,
            log.err[:, 0],
            log.err[:, 1],
        )
    for (dist_set, fb), curves in groups.items():
        name = f"{dist_set}_{'on' if fb else 'off'}.png"
        render_error_curves(curves, dist_set, fb, figures_dir / name)


def render_figures_from_artifacts(output_dir: str | Path) -> int:
    """Re-render figures from the per-timestep error CSVs in an output tree.

    Returns:
        The number of figures written.
    """
    out = Path(output_dir)
    errors_dir = out / "errors"
    if not errors_dir.is_dir():
        return 0
    groups: dict[tuple[str, bool], dict[str, tuple]] = {}
    for path in sorted(errors_dir.glob("*.csv")):
        dist_set, fb_tag, strategy = path.stem.split("_")
        t, ex, ez = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                t.append(float(row["t"]))
                ex.append(float(row["ex"]))
                ez.append(float(row["ez"]))
        groups.setdefault((dist_set, fb_tag == "on"), {})[strategy] = (t, ex, ez)
    figures_dir = out / "figures"
    figures_dir.mkdir(exist_ok=True)
    for (dist_set, fb), curves in groups.items():
        name = f"{dist_set}_{'on' if fb else 'off'}.png"
        render_error_curves(curves, dist_set, fb, figures_dir / name)
    return len(groups)
