"""File formats: snapshot CSVs, model/ensemble JSON, trajectories and closed-loop traces.

All tables are CSV with a header row; floats are written in shortest
round-trip form so that identical inputs give byte-identical files.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .edmd import KoopmanModel, SnapshotSet
from .krom import SwitchedBank, build_bilinear, build_localized
from .plant import Trajectory

__all__ = [
    "write_snapshots",
    "read_snapshots",
    "write_model",
    "read_model",
    "write_ensemble",
    "read_ensemble",
    "write_trajectory",
    "read_trajectory",
    "write_trace",
    "read_trace_table",
    "write_json",
    "read_json",
]


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def read_table(path):
    """Header and rows (as strings) of a CSV file."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _manifest_path(path):
    return Path(path).with_suffix(".json")


def write_snapshots(path, data):
    """Write a :class:`SnapshotSet` as ``<path>.csv`` (one pair per row) plus ``<path>.json``.

    Columns are the observation ``z`` followed by its lagged successor.
    """
    path = Path(path).with_suffix(".csv")
    names = list(data.obs_names) if data.obs_names else [f"z{i}" for i in range(data.obs_dim)]
    header = names + [f"{n}_next" for n in names]
    rows = np.hstack([data.Z.T, data.Ztilde.T])
    write_table(path, header, rows.tolist())
    write_json(_manifest_path(path), {
        "lag_time_h": data.lag_time,
        "control_value": data.control_value,
        "obs_names": names,
        "n_pairs": data.n_pairs,
    })
    return path


def read_snapshots(path):
    path = Path(path).with_suffix(".csv")
    manifest = read_json(_manifest_path(path))
    header, rows = read_table(path)
    q = len(manifest["obs_names"])
    if len(header) != 2 * q:
        raise ValueError(f"{path}: expected {2 * q} columns, found {len(header)}")
    arr = np.array(rows, dtype=float).reshape(-1, 2 * q)
    return SnapshotSet(arr[:, :q].T, arr[:, q:].T, manifest["lag_time_h"], manifest["control_value"],
                       manifest["obs_names"])


def write_model(path, model):
    return write_json(path, model.to_dict())


def read_model(path):
    return KoopmanModel.from_dict(read_json(path))


def write_ensemble(path, kind, model_paths):
    """Ensemble manifest listing member model files (relative to the manifest)."""
    if kind not in ("switched", "bilinear", "localized"):
        raise ValueError(f"unknown ensemble kind {kind!r}")
    path = Path(path)
    rel = [str(Path(p).resolve().relative_to(path.parent.resolve())) if Path(p).is_absolute()
           else str(p) for p in model_paths]
    return write_json(path, {"kind": kind, "models": rel})


def read_ensemble(path):
    """Load an ensemble as a SwitchedBank, BilinearModel or LocalizedBilinear."""
    path = Path(path)
    data = read_json(path)
    models = [read_model(path.parent / p) for p in data["models"]]
    kind = data["kind"]
    if kind == "switched":
        return SwitchedBank(tuple(models))
    if kind == "bilinear":
        if len(models) != 2:
            raise ValueError("a bilinear ensemble needs exactly two models")
        return build_bilinear(*models)
    if kind == "localized":
        return build_localized(SwitchedBank(tuple(models)))
    raise ValueError(f"unknown ensemble kind {kind!r}")


def write_trajectory(path, traj, kind="observations", names=None, extra=None):
    """Trajectory CSV (``t``, value columns, ``u``) plus JSON manifest.

    ``u`` on row ``i`` is the control applied on ``[t_i, t_{i+1})``; the last
    row leaves it empty.
    """
    if kind not in ("observations", "states"):
        raise ValueError("kind must be 'observations' or 'states'")
    values = traj.observations if kind == "observations" else traj.states
    if values is None:
        raise ValueError("trajectory has no observations")
    names = list(names) if names else [f"{kind[0]}{i}" for i in range(values.shape[1])]
    path = Path(path).with_suffix(".csv")
    controls = list(traj.controls) + [None]
    rows = [[t, *v, u] for t, v, u in zip(traj.times, values, controls)]
    write_table(path, ["t", *names, "u"], rows)
    manifest = {"kind": kind, "columns": names, "n_samples": len(traj)}
    manifest.update(extra or {})
    write_json(_manifest_path(path), manifest)
    return path


def read_trajectory(path):
    """Read a trajectory CSV; external (e.g. CFD) observation data enters here."""
    path = Path(path).with_suffix(".csv")
    manifest_path = _manifest_path(path)
    manifest = read_json(manifest_path) if manifest_path.exists() else {"kind": "observations"}
    header, rows = read_table(path)
    if header[0] != "t" or header[-1] != "u":
        raise ValueError(f"{path}: header must start with 't' and end with 'u'")
    times = np.array([float(r[0]) for r in rows])
    values = np.array([[float(v) for v in r[1:-1]] for r in rows])
    controls = np.array([float(r[-1]) for r in rows[:-1]])
    if manifest.get("kind", "observations") == "states":
        return Trajectory(times, values, controls)
    return Trajectory(times, values, controls, values)


def write_trace(directory, trace, window=10.0, obs_names=None):
    """Closed-loop trace as ``trace.csv`` and solve wall-times as ``timing.csv``.

    Wall-times live in their own file so that ``trace.csv`` is reproducible.
    """
    directory = Path(directory)
    q = trace.observations.shape[1]
    names = list(obs_names) if obs_names else [f"z{i}" for i in range(q)]
    r = trace.references.shape[1]
    header = ["t", "u", *names, *[f"ref{i}" for i in range(r)], "stage_cost", "window_cost"]
    controls = list(trace.controls) + [None]
    windows = trace.window_costs(window)
    rows = [[t, u, *z, *ref, c, w] for t, u, z, ref, c, w in
            zip(trace.times, controls, trace.observations, trace.references, trace.stage_costs, windows)]
    p1 = write_table(directory / "trace.csv", header, rows)
    p2 = write_table(directory / "timing.csv", ["step", "t", "solve_time_s"],
                     [[k, trace.times[k], s] for k, s in enumerate(trace.solve_times)])
    return p1, p2


def read_trace_table(path):
    """``trace.csv`` as a dict of float arrays (empty cells become NaN)."""
    header, rows = read_table(path)
    cols = {h: np.array([float(r[i]) if r[i] != "" else np.nan for r in rows]) for i, h in enumerate(header)}
    return header, cols
