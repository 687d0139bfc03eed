"""CSV and JSON writers for experiment outputs."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

EXIT_COLUMNS = ["eps", "n_paths", "n_censored", "mean_tau", "stderr", "eps_log_mean_tau"]


def jsonable(obj):
    """Convert numpy scalars/arrays and dataclasses; non-finite floats become ``None``."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_exit_records(path: Path, records) -> None:
    rows = [{"eps": r.eps, "n_paths": r.n_paths, "n_censored": r.n_censored,
             "mean_tau": r.mean_tau, "stderr": r.std_error, "eps_log_mean_tau": r.log_estimate}
            for r in records]
    write_rows(path, EXIT_COLUMNS, rows)


def write_trajectory(path: Path, times, u, v=None) -> None:
    """Header ``t,mode_1..mode_N`` plus ``vmode_1..vmode_N`` when velocities are given."""
    u = np.asarray(u)
    n = u.shape[1]
    cols = ["t"] + [f"mode_{k}" for k in range(1, n + 1)]
    data = [np.asarray(times)[:, None], u]
    if v is not None:
        cols += [f"vmode_{k}" for k in range(1, n + 1)]
        data.append(np.asarray(v))
    table = np.hstack(data)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in table:
            w.writerow([repr(float(c)) for c in row])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)
