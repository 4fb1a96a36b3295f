"""File formats shared by the command line: JSON/CSV writers with fixed
precision, trial CSVs, run manifests and plot-ready figure tables."""

from __future__ import annotations

import csv
import json
import math
import os
import platform
from pathlib import Path

import numpy as np

from riskplan import __version__, kernels
from riskplan.dp import UsageError
from riskplan.twostep.inference import DataError, Figure4Trace, RecoveryReport
from riskplan.twostep.model import TrialRecord

SCHEMA_VERSION = 1
SIG_DIGITS = 12
OUTPUT_ENV = "RISKPLAN_OUTPUT_DIR"
TRIAL_HEADER = ("trial", "choice1", "state2", "choice2", "reward")

FIGURE_HEADERS = {
    "fig4": ("trial", "cvar_A", "cvar_B", "mean_A", "mean_B", "choice", "switch_trial"),
    "fig6": ("row", "col", "state", "action", "freq_right", "mean_alpha", "visits"),
    "supp2": ("state", "method", "alpha_index", "alpha", "p_right", "action", "source"),
    "recovery": ("parameter", "agent", "generative", "recovered"),
}


class OutputExistsError(FileExistsError):
    pass


def fmt(x) -> str:
    """Format one CSV cell; floats get 12 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{SIG_DIGITS}g}"
    if isinstance(x, np.integer):
        return str(int(x))
    return "" if x is None else str(x)


def round_floats(obj):
    """Recursively round floats to 12 significant digits; non-finite become None."""
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.{SIG_DIGITS}g}") if math.isfinite(x) else None
    return obj


def output_dir(path: str | None) -> Path:
    return Path(path or os.environ.get(OUTPUT_ENV) or "riskplan_out")


def _claim(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise OutputExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path, obj, force: bool = False) -> Path:
    path = _claim(Path(path), force)
    payload = {"schema_version": SCHEMA_VERSION, **round_floats(obj)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
    return path


def read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return data


def write_csv(path, header, rows, force: bool = False) -> Path:
    """Write ``rows`` (dicts keyed by ``header``) as CSV."""
    path = _claim(Path(path), force)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row.get(h)) for h in header])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_trials_csv(path, trials: list[TrialRecord], force: bool = False) -> Path:
    rows = [{"trial": i + 1, "choice1": t.choice1, "state2": t.state2,
             "choice2": t.choice2, "reward": t.reward} for i, t in enumerate(trials)]
    return write_csv(path, TRIAL_HEADER, rows, force)


def read_trials_csv(path) -> list[TrialRecord]:
    """Parse a trial CSV; errors name the row and field at fault."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [h for h in TRIAL_HEADER[1:] if h not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        trials = []
        for line, row in enumerate(reader, start=2):
            values = {}
            for name in TRIAL_HEADER[1:]:
                raw = (row[name] or "").strip()
                if raw not in ("0", "1"):
                    raise DataError(f"{path}:{line}: field '{name}' must be 0 or 1, got {raw!r}")
                values[name] = int(raw)
            trials.append(TrialRecord(**values))
    if not trials:
        raise DataError(f"{path}: no trials")
    return trials


def manifest(command: str, config: dict, seed=None) -> dict:
    """Everything needed to rerun a command; deliberately free of timestamps."""
    import scipy

    return {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "riskplan": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
    }


def figure_rows(result, figure: str, mdp=None) -> list[dict]:
    """Long-format rows for one figure table.

    Args:
        result: ``Figure4Trace`` (fig4), ``RolloutSummary`` (fig6, needs ``mdp``),
            list of alpha-sweep rows (supp2) or ``RecoveryReport`` (recovery).
        figure: one of ``fig4``, ``fig6``, ``supp2``, ``recovery``.

    Returns:
        List of dicts keyed by ``FIGURE_HEADERS[figure]``.
    """
    from riskplan.rollout import RolloutSummary, policy_map

    if figure not in FIGURE_HEADERS:
        raise UsageError(f"unknown figure {figure!r}; expected one of {sorted(FIGURE_HEADERS)}")
    if figure == "fig4":
        if not isinstance(result, Figure4Trace):
            raise UsageError("fig4 expects a Figure4Trace")
        return [{"trial": t + 1, "cvar_A": result.cvar_a[t], "cvar_B": result.cvar_b[t],
                 "mean_A": result.mean_a[t], "mean_B": result.mean_b[t],
                 "choice": result.choices[t], "switch_trial": result.switch_trial}
                for t in range(result.n_trials)]
    if figure == "fig6":
        if not isinstance(result, RolloutSummary) or mdp is None:
            raise UsageError("fig6 expects a RolloutSummary and its gridworld")
        return policy_map(mdp, result)
    if figure == "supp2":
        if not (isinstance(result, list) and all(isinstance(r, dict) and "p_right" in r
                                                 for r in result)):
            raise UsageError("supp2 expects alpha-sweep rows")
        return result
    if not isinstance(result, RecoveryReport):
        raise UsageError("recovery expects a RecoveryReport")
    return [{"parameter": name, "agent": i, "generative": result.generative[i, j],
             "recovered": result.recovered[i, j]}
            for j, name in enumerate(result.names) for i in range(result.generative.shape[0])]


def emit_figure_data(result, figure: str, out_dir, mdp=None, force: bool = False) -> Path:
    """Write ``<out_dir>/<figure>.csv`` and return its path."""
    rows = figure_rows(result, figure, mdp)
    return write_csv(Path(out_dir) / f"{figure}.csv", FIGURE_HEADERS[figure], rows, force)
