"""Post-processing of solver output and the normalized-absolute-error metrics.

The pipeline after a solve is: match columns to a reference (when one
exists), re-estimate SLF entries at locations whose full spectrum was
observed by regressing the spectra on the estimated PSDs, fill in the rest of
each SLF with a thin-plate spline, and rebuild the radio map.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from .tensor_core import Ll1Factors, fold

log = logging.getLogger(__name__)


class NormalizationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# permutation matching and metrics


def _l1_normalize(C: np.ndarray) -> np.ndarray:
    # column-contiguous layout fixes the summation order, so a column and its
    # power-of-two multiple normalize to identical bits
    C = np.asfortranarray(C, dtype=float)
    norms = np.abs(C).sum(axis=0)
    if np.any(norms == 0):
        raise NormalizationError("cannot L1-normalize a zero column")
    return C / norms


def permutation_costs(c_true, c_hat) -> np.ndarray:
    """``cost[r, s] = || c_r / |c_r|_1 - chat_s / |chat_s|_1 ||_1``."""
    a, b = _l1_normalize(c_true), _l1_normalize(c_hat)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    return np.abs(a[:, :, None] - b[:, None, :]).sum(axis=0)


def match_permutation(c_true, c_hat, method: str = "auto") -> np.ndarray:
    """Permutation ``pi`` minimizing ``sum_r cost[r, pi[r]]``.

    ``c_hat[:, pi]`` is aligned with ``c_true``.  Brute force is used for
    ``R <= 8`` and the Hungarian algorithm otherwise (or when asked).
    """
    cost = permutation_costs(c_true, c_hat)
    R = cost.shape[0]
    if method == "assignment" or (method == "auto" and R > 8):
        rows, cols = linear_sum_assignment(cost)
        return cols[np.argsort(rows)]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(R)):
        total = cost[np.arange(R), perm].sum()
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm)


def nae_psd(c_true, c_hat) -> float:
    """Mean L1 distance between L1-normalized matched columns (in [0, 2])."""
    a, b = _l1_normalize(c_true), _l1_normalize(c_hat)
    return float(np.abs(a - b).sum(axis=0).mean())


def nae_slf(s_true, s_hat) -> float:
    a = np.column_stack([np.asarray(s, float).ravel(order="F") for s in s_true])
    b = np.column_stack([np.asarray(s, float).ravel(order="F") for s in s_hat])
    return nae_psd(a, b)


def nae_map(x_true, x_hat) -> float:
    x_true = np.asarray(x_true, dtype=float)
    den = np.abs(x_true).sum()
    if den == 0:
        raise NormalizationError("reference map is all zero")
    return float(np.abs(x_true - np.asarray(x_hat)).sum() / den)


def canonical_scaling(S: np.ndarray, C: np.ndarray):
    """Give every column of ``C`` unit L1 norm and nonnegative sum.

    The removed scale (and sign) is pushed into the matching column of ``S``
    so ``S @ C.T`` is unchanged.
    """
    norms = np.abs(C).sum(axis=0)
    signs = np.where(C.sum(axis=0) < 0, -1.0, 1.0)
    scales = np.where(norms > 0, norms, 1.0) * signs
    return S * scales, C / scales, scales


# ---------------------------------------------------------------------------
# SLF refinement and thin-plate splines


def refine_slf(x3_rows, c_hat) -> np.ndarray:
    """Least-squares SLF rows: ``S_rows = X3_rows (C_hat^T)^+``.

    ``x3_rows`` holds fully observed spectra, one location per row.
    """
    x3_rows = np.atleast_2d(np.asarray(x3_rows, dtype=float))
    c_hat = np.asarray(c_hat, dtype=float)
    if x3_rows.shape[1] != c_hat.shape[0]:
        raise ValueError("spectra length must equal the number of bands")
    sv = linalg.svdvals(c_hat)
    if sv.min() <= 1e-10 * max(sv.max(), 1.0) or c_hat.shape[0] < c_hat.shape[1]:
        raise np.linalg.LinAlgError("estimated PSD matrix is rank deficient")
    sol, *_ = linalg.lstsq(c_hat, x3_rows.T)
    return sol.T


def tps_kernel(d: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d * d * np.log(d)
    return np.where(d > 0, out, 0.0)


@dataclass
class TpsModel:
    nodes: np.ndarray
    kernel_weights: np.ndarray
    affine: np.ndarray
    smoothing: float = 0.0

    def __call__(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        d = np.sqrt(((xy[:, None, :] - self.nodes[None, :, :]) ** 2).sum(-1))
        return tps_kernel(d) @ self.kernel_weights + self.affine[0] + xy @ self.affine[1:]


def _dedupe(points: np.ndarray, values: np.ndarray):
    uniq, inv = np.unique(points, axis=0, return_inverse=True)
    inv = inv.ravel()
    sums = np.zeros(len(uniq))
    np.add.at(sums, inv, values)
    counts = np.bincount(inv, minlength=len(uniq))
    return uniq, sums / counts


def tps_fit(points, values, smoothing: float = 0.0) -> TpsModel:
    """Thin-plate spline through ``values`` at 2-D ``points``.

    Kernel ``d^2 log d`` plus an affine term; ``smoothing`` is added to the
    kernel diagonal.  Duplicate points are averaged.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    values = np.asarray(values, dtype=float).ravel()
    if len(points) != len(values):
        raise ValueError("one value per point is required")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    points, values = _dedupe(points, values)
    n = len(points)
    P = np.column_stack([np.ones(n), points])
    if n < 3 or np.linalg.matrix_rank(P - P.mean(axis=0) * [0, 1, 1]) < 3:
        raise ValueError("thin-plate splines need at least three non-collinear points")
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    Kmat = tps_kernel(d) + smoothing * np.eye(n)
    system = np.block([[Kmat, P], [P.T, np.zeros((3, 3))]])
    sol = linalg.solve(system, np.concatenate([values, np.zeros(3)]), assume_a="sym")
    return TpsModel(points, sol[:n], sol[n:], smoothing)


def grid_points(grid) -> np.ndarray:
    I, J = grid
    ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()]).astype(float)


def tps_eval(model: TpsModel, grid, chunk: int = 4096) -> np.ndarray:
    """Evaluate the spline at every grid point ``(i, j)``."""
    pts = grid_points(grid)
    out = np.concatenate([model(pts[s:s + chunk]) for s in range(0, len(pts), chunk)])
    return out.reshape(grid)


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct_map(s_hat, c_hat) -> np.ndarray:
    """Radio map whose mode-3 unfolding is ``S_hat C_hat^T``."""
    s_hat = [np.asarray(s, dtype=float) for s in s_hat]
    c_hat = np.asarray(c_hat, dtype=float)
    if len(s_hat) != c_hat.shape[1]:
        raise ValueError("need one SLF per PSD column")
    I, J = s_hat[0].shape
    S = np.column_stack([s.ravel(order="F") for s in s_hat])
    return fold(S @ c_hat.T, 3, (I, J, c_hat.shape[0]))


@dataclass
class DisaggregationResult:
    slfs_hat: list[np.ndarray]
    psd_hat: np.ndarray
    map_hat: np.ndarray
    permutation: np.ndarray
    scales: np.ndarray
    refined_locations: int = 0
    raw_slfs: list[np.ndarray] = field(default_factory=list)


def full_spectrum_locations(mask: np.ndarray) -> np.ndarray:
    """Boolean ``I x J`` map of locations whose whole spectrum is observed."""
    return np.all(np.asarray(mask) > 0, axis=2)


def disaggregate_full(
    factors: Ll1Factors,
    y: np.ndarray,
    mask: np.ndarray,
    c_true: np.ndarray | None = None,
    smoothing: float = 1e-3,
    refine: bool = True,
) -> DisaggregationResult:
    """Turn solver factors into per-emitter SLFs, PSDs and a full map.

    Parameters
    ----------
    factors : Ll1Factors
        Solver output.
    y, mask : ndarray
        Observed values and weights on the full ``I x J x K`` grid.
    c_true : ndarray, optional
        Reference PSDs; when given, columns are permuted to match them.
    smoothing : float
        Thin-plate spline smoothing.
    refine : bool
        Re-estimate SLFs from fully observed spectra and interpolate.  Falls
        back to ``A_r B_r^T`` when no location has a complete spectrum.
    """
    I, J, K = factors.dims
    raw = factors.slfs()
    S_raw = np.column_stack([s.ravel(order="F") for s in raw])
    C = factors.C
    S_raw, C, scales = canonical_scaling(S_raw, C)
    perm = np.arange(factors.R)
    if c_true is not None:
        perm = match_permutation(c_true, C)
        C, S_raw, scales = C[:, perm], S_raw[:, perm], scales[perm]
    raw_slfs = [S_raw[:, r].reshape(I, J, order="F") for r in range(factors.R)]

    full = full_spectrum_locations(mask)
    slfs = raw_slfs
    n_loc = int(full.sum())
    if refine and n_loc >= 3:
        ii, jj = np.nonzero(full)
        rows = refine_slf(np.asarray(y)[ii, jj, :], C)
        pts = np.column_stack([ii, jj]).astype(float)
        try:
            slfs = [tps_eval(tps_fit(pts, rows[:, r], smoothing), (I, J)) for r in range(factors.R)]
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("SLF refinement skipped: %s", exc)
            slfs, n_loc = raw_slfs, 0
    else:
        n_loc = 0
    return DisaggregationResult(
        slfs, C, reconstruct_map(slfs, C), perm, scales, n_loc, raw_slfs
    )
