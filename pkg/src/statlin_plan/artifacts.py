"""Versioned CSV/JSON artifacts, written atomically."""
from __future__ import annotations

import io
import json
import math
import os
import tempfile
from importlib import resources

import jsonschema
import numpy as np

from .core import ControlTrajectory
from .propagate import BeliefTrajectory
from .sde import EnsembleStats

SCHEMA_VERSION = 1
HEADER = f"# statlin-plan v{SCHEMA_VERSION}"
STATE_NAMES = ("y", "z", "vy", "vz", "mu")


class ArtifactError(ValueError):
    """Missing, malformed or mutually inconsistent artifact files."""


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, columns, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != len(columns):
        raise ValueError("row width does not match the column list")
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    buf.write(",".join(columns) + "\n")
    np.savetxt(buf, rows, delimiter=",", fmt="%.17g")
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().rstrip("\n")
            cols = fh.readline().rstrip("\n").split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ArtifactError(f"malformed CSV {path}: {exc}") from None
    if first != HEADER:
        raise ArtifactError(f"{path}: expected header '{HEADER}', found '{first}'")
    if data.shape[1] != len(cols):
        raise ArtifactError(f"{path}: column count mismatch")
    return cols, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    atomic_write_text(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def report_schema():
    text = resources.files("statlin_plan").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(payload):
    jsonschema.validate(_jsonable(payload), report_schema())


# -------------------------------------------------------------- typed artifacts
def _upper(n):
    return np.triu_indices(n)


def cov_columns(prefix, n=5, names=STATE_NAMES):
    iu = _upper(n)
    return [f"{prefix}_{names[i]}_{names[j]}" for i, j in zip(*iu)]


def write_belief(path, traj):
    n = traj.n
    iu = _upper(n)
    cols = ["t"] + [f"m_{s}" for s in STATE_NAMES[:n]] + cov_columns("P", n)
    rows = np.column_stack([traj.times, traj.means, traj.covs[:, iu[0], iu[1]]])
    write_csv(path, cols, rows)


def _unpack_cov(flat, n):
    iu = _upper(n)
    P = np.zeros((flat.shape[0], n, n))
    P[:, iu[0], iu[1]] = flat
    P[:, iu[1], iu[0]] = flat
    return P


def read_belief(path, n=5):
    cols, data = read_csv(path)
    nv = n * (n + 1) // 2
    if data.shape[1] != 1 + n + nv:
        raise ArtifactError(f"{path}: unexpected belief layout")
    return BeliefTrajectory(data[:, 0], data[:, 1:1 + n], _unpack_cov(data[:, 1 + n:], n))


def write_control(path, ctrl, labels, norms):
    """One row per node; the last row repeats the final interval's values."""
    vals = np.vstack([ctrl.values, ctrl.values[-1:]])
    norms = np.append(norms, norms[-1])
    write_csv(path, ["t", *labels, "norm"], np.column_stack([ctrl.nodes, vals, norms]))


def read_control(path):
    cols, data = read_csv(path)
    if cols[0] != "t" or cols[-1] != "norm" or data.shape[0] < 2:
        raise ArtifactError(f"{path}: unexpected control layout")
    return ControlTrajectory(data[:, 0], data[:-1, 1:-1]), tuple(cols[1:-1])


def write_ensemble(path, stats):
    n = stats.mean.shape[1]
    iu = _upper(n)
    cols = (["t"] + [f"mean_{s}" for s in STATE_NAMES[:n]] + cov_columns("cov", n)
            + [f"sem_{s}" for s in STATE_NAMES[:n]] + cov_columns("semcov", n))
    rows = np.column_stack([stats.times, stats.mean, stats.cov[:, iu[0], iu[1]],
                            stats.sem_mean, stats.sem_cov[:, iu[0], iu[1]]])
    write_csv(path, cols, rows)
    return cols


def read_ensemble(path, sample_count, seed, n=5):
    cols, data = read_csv(path)
    nv = n * (n + 1) // 2
    if data.shape[1] != 1 + 2 * (n + nv):
        raise ArtifactError(f"{path}: unexpected ensemble layout")
    o = 1
    mean = data[:, o:o + n]; o += n
    cov = _unpack_cov(data[:, o:o + nv], n); o += nv
    sem = data[:, o:o + n]; o += n
    sem_cov = _unpack_cov(data[:, o:o + nv], n)
    return EnsembleStats(data[:, 0], mean, cov, int(sample_count), int(seed), sem, sem_cov)
