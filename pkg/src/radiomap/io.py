"""File formats: tensor text files, CSV matrices, JSON plans/configs, and
observation triplet lists.

Tensor text format: a header line ``I J K`` followed by ``K`` blocks of ``I``
rows with ``J`` whitespace-separated values (frontal slabs in order).

Observation files: an optional header ``I J K`` and then lines
``i j k value [weight]`` with zero-based indices.  Mask exports use
``i j k weight``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .sampling import FiberGroupPlan, FiberMask, SlabPlan


class ParseError(ValueError):
    pass


def write_tensor(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=float)
    I, J, K = x.shape
    with open(path, "w") as fh:
        fh.write(f"{I} {J} {K}\n")
        for k in range(K):
            np.savetxt(fh, x[:, :, k], fmt="%.17g")


def read_tensor(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ParseError(f"{path}: first line must be 'I J K'")
        I, J, K = (int(v) for v in header)
        vals = np.array(fh.read().split(), dtype=float)
    if vals.size != I * J * K:
        raise ParseError(f"{path}: expected {I * J * K} values, found {vals.size}")
    return vals.reshape(K, I, J).transpose(1, 2, 0).copy()


def write_matrix(path, m: np.ndarray, header: list[str] | None = None) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    np.savetxt(path, m, delimiter=",", fmt="%.17g",
               header=",".join(header) if header else "", comments="")


def read_matrix(path, header: bool = False) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2))


def load_plan(path):
    """Slab plan ``{s1, s2, s3, s4}`` or group plan ``{groups: [{I, J, K}, ...]}``."""
    data = json.loads(Path(path).read_text())
    if "groups" in data:
        return FiberGroupPlan(data["groups"])
    missing = {"s1", "s2", "s3", "s4"} - set(data)
    if missing:
        raise ParseError(f"{path}: slab plan lacks {sorted(missing)}")
    return SlabPlan(data["s1"], data["s2"], data["s3"], data["s4"])


def save_plan(path, plan) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2))


def write_mask(path, mask: FiberMask) -> None:
    w = mask.weights
    idx = np.argwhere(w > 0)
    with open(path, "w") as fh:
        fh.write("{} {} {}\n".format(*w.shape))
        for i, j, k in idx:
            fh.write(f"{i} {j} {k} {w[i, j, k]:.17g}\n")


def write_observations(path, y: np.ndarray, w) -> None:
    w = w.weights if isinstance(w, FiberMask) else np.asarray(w, dtype=float)
    with open(path, "w") as fh:
        fh.write("{} {} {}\n".format(*y.shape))
        for i, j, k in np.argwhere(w > 0):
            fh.write(f"{i} {j} {k} {y[i, j, k]:.17g} {w[i, j, k]:.17g}\n")


def ingest_observations(path, dims=None):
    """Read ``i j k value [weight]`` lines into a dense value tensor and mask.

    Duplicate cells are averaged; the last weight seen for a cell wins.

    Returns
    -------
    y : ndarray
    mask : FiberMask
    dims : tuple
    """
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = 0
    for n, line in enumerate(lines):
        if line.strip() and not line.lstrip().startswith("#"):
            parts = line.split()
            if len(parts) == 3 and dims is None:
                try:
                    dims = tuple(int(p) for p in parts)
                except ValueError:
                    raise ParseError(f"{path}:{n + 1}: malformed header {line!r}") from None
                start = n + 1
            break
    if dims is None:
        raise ParseError(f"{path}: missing 'I J K' header")
    for n in range(start, len(lines)):
        line = lines[n].strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise ParseError(f"{path}:{n + 1}: expected 'i j k value [weight]', got {line!r}")
        try:
            i, j, k = (int(p) for p in parts[:3])
            val = float(parts[3])
            wt = float(parts[4]) if len(parts) == 5 else 1.0
        except ValueError:
            raise ParseError(f"{path}:{n + 1}: cannot parse {line!r}") from None
        if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
            raise ParseError(f"{path}:{n + 1}: index ({i}, {j}, {k}) outside {dims}")
        if wt < 0 or not np.isfinite(wt) or not np.isfinite(val):
            raise ParseError(f"{path}:{n + 1}: value and weight must be finite, weight >= 0")
        rows.append((i, j, k, val, wt))
    total = np.zeros(dims)
    count = np.zeros(dims)
    w = np.zeros(dims)
    for i, j, k, val, wt in rows:
        total[i, j, k] += val
        count[i, j, k] += 1
        w[i, j, k] = wt
    y = np.divide(total, count, out=np.zeros(dims), where=count > 0)
    return y, FiberMask(w), tuple(dims)
