"""CSV formats for matrices, observation sequences and trajectories.

Numbers are written with 17 significant digits so that a write/read cycle
reproduces every float exactly. States and observations are 1-based on disk.
"""
import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

FLOAT_FMT = "%.17g"


def fmt(v):
    return FLOAT_FMT % float(v)


def write_matrix_csv(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([fmt(v) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty matrix file")
    try:
        M = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return M


def write_vector_csv(path, v):
    write_matrix_csv(path, np.asarray(v, dtype=float).reshape(1, -1))


def read_vector_csv(path):
    return read_matrix_csv(path).reshape(-1)


def to_one_based(idx):
    return np.asarray(idx, dtype=int) + 1


def from_one_based(idx, n=None, name="index"):
    idx = np.asarray(idx, dtype=int)
    if idx.size and idx.min() < 1:
        raise ValidationError(f"{name} labels are 1-based; got {idx.min()}")
    if n is not None and idx.size and idx.max() > n:
        raise ValidationError(f"{name} label {idx.max()} exceeds {n}")
    return idx - 1


def write_observations_csv(path, obs):
    """One 1-based observation per line."""
    with open(path, "w", newline="") as fh:
        for y in to_one_based(obs):
            fh.write(f"{y}\n")


def read_observations_csv(path, Y=None):
    with open(path, newline="") as fh:
        vals = [c.strip() for r in csv.reader(fh) for c in r if c.strip()]
    return from_one_based([int(v) for v in vals], Y, "observation")


_SQRT3_2 = np.sqrt(3.0) / 2.0
_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, _SQRT3_2]])


def barycentric_xy(posteriors):
    """Planar coordinates of 3-state posteriors in an equilateral triangle."""
    return np.asarray(posteriors, dtype=float) @ _TRIANGLE


def write_trajectory_csv(path, posteriors, states=None, observations=None):
    """Columns k, x_k, y_k, pi_1..pi_X (plus bary_x, bary_y when X = 3).

    Row k = 0 carries the prior; its observation cell is empty. Unknown states
    or observations are left blank.
    """
    post = np.asarray(posteriors, dtype=float)
    n1, X = post.shape
    header = ["k", "x_k", "y_k"] + [f"pi_{i + 1}" for i in range(X)]
    bary = X == 3
    if bary:
        header += ["bary_x", "bary_y"]
        xy = barycentric_xy(post)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(n1):
            x = "" if states is None else str(int(states[k]) + 1)
            y = "" if observations is None or k == 0 else str(int(observations[k - 1]) + 1)
            row = [str(k), x, y] + [fmt(v) for v in post[k]]
            if bary:
                row += [fmt(v) for v in xy[k]]
            w.writerow(row)


def read_trajectory_csv(path):
    """Return (posteriors, states or None, observations or None), 0-based."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][:3] != ["k", "x_k", "y_k"]:
        raise ValidationError(f"{path}: missing trajectory header k,x_k,y_k")
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h.startswith("pi_")]
    body = rows[1:]
    post = np.array([[float(r[i]) for i in cols] for r in body])
    xs = [r[1] for r in body]
    ys = [r[2] for r in body[1:]]
    states = np.array([int(v) - 1 for v in xs]) if all(xs) else None
    obs = np.array([int(v) - 1 for v in ys], dtype=int) if all(ys) else None
    return post, states, obs


def read_posteriors(path):
    """Accept either the trajectory format or a bare matrix, one posterior per row."""
    with open(path, newline="") as fh:
        first = fh.readline()
    if first.startswith("k,"):
        return read_trajectory_csv(path)[0]
    return read_matrix_csv(path)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
