"""Block coordinate descent for the weighted (masked) criterion.

Observations ``y`` hold raw values; the mask ``w`` is kept separately and the
loss is ``sum w^2 (y - model)^2`` plus ridge terms.  With ``sqrt(P)`` weights
from :func:`radiomap.sampling.plan_to_mask` this equals the sum of per-group
fits, so fiber-group plans run through the same code.

Every row of ``A``, ``B`` and ``C`` is an independent weighted ridge
regression; rows of one block are solved together as a batch.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np

from .sampling import FiberMask
from .solver_slab import (
    SolveResult,
    SolverConfig,
    _initial,
    _uniform_rank,
    block_products,
    pick_best,
    run_bcd,
)
from .tensor_core import Ll1Factors

log = logging.getLogger(__name__)

MaskedSolverConfig = SolverConfig

FALLBACK_RIDGE = 1e-10


def _as_weights(w) -> np.ndarray:
    return w.weights if isinstance(w, FiberMask) else np.asarray(w, dtype=float)


def masked_loss(factors: Ll1Factors, y, w, lam=(0.0, 0.0, 0.0)) -> float:
    L = _uniform_rank(factors)
    return _loss(factors.A_mat, factors.B_mat, factors.C, np.asarray(y, float), _as_weights(w) ** 2, L, lam)


def _model(A, B, C, L):
    S = block_products(A, B, L)
    return (S.reshape(-1, S.shape[2]) @ C.T).reshape(S.shape[0], S.shape[1], C.shape[0])


def _loss(A, B, C, y, w2, L, lam) -> float:
    fit = float(np.sum(w2 * (y - _model(A, B, C, L)) ** 2))
    return fit + lam[0] * np.sum(A**2) + lam[1] * np.sum(B**2) + lam[2] * np.sum(C**2)


def _batched_ridge(grams: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``x_n (G_n + lam I) = b_n`` for every row ``n``."""
    n, p, _ = grams.shape
    coef = grams + lam * np.eye(p)
    try:
        return np.linalg.solve(coef, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(rhs)
    for i in range(n):
        try:
            out[i] = np.linalg.solve(coef[i], rhs[i])
        except np.linalg.LinAlgError:
            warnings.warn(f"singular row system {i}; applying ridge {FALLBACK_RIDGE}")
            out[i] = np.linalg.solve(coef[i] + FALLBACK_RIDGE * np.eye(p), rhs[i])
    return out


def _row_systems(w2: np.ndarray, wy: np.ndarray, design: np.ndarray):
    """Per-row weighted Gram matrices and right-hand sides.

    ``w2`` and ``wy`` are ``(n, m)``; ``design`` is ``(m, p)``.
    """
    m, p = design.shape
    outer = (design[:, :, None] * design[:, None, :]).reshape(m, p * p)
    grams = (w2 @ outer).reshape(-1, p, p)
    return grams, wy @ design


def update_factor_masked(mode: int, A, B, C, y, w2, L: int, lam: float) -> np.ndarray:
    """Exact weighted ridge update of ``A`` (mode 1), ``B`` (2) or ``C`` (3).

    ``w2`` holds squared weights.  For a 0/1 mask this is the usual masked
    least-squares row update.
    """
    I, J, K = y.shape
    R = C.shape[1]
    wy = w2 * y
    if mode == 1:
        design = np.einsum("jrl,kr->jkrl", B.reshape(J, R, L), C).reshape(J * K, R * L)
        grams, rhs = _row_systems(w2.reshape(I, J * K), wy.reshape(I, J * K), design)
    elif mode == 2:
        design = np.einsum("irl,kr->ikrl", A.reshape(I, R, L), C).reshape(I * K, R * L)
        w2t = w2.transpose(1, 0, 2).reshape(J, I * K)
        wyt = wy.transpose(1, 0, 2).reshape(J, I * K)
        grams, rhs = _row_systems(w2t, wyt, design)
    elif mode == 3:
        design = block_products(A, B, L).reshape(I * J, R)
        grams, rhs = _row_systems(w2.reshape(I * J, K).T, wy.reshape(I * J, K).T, design)
    else:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    if lam == 0:
        # flag rows whose Gram is singular before the batched solve
        p = grams.shape[1]
        bad = np.linalg.matrix_rank(grams) < p
        if bad.any():
            warnings.warn(f"{int(bad.sum())} singular rows in mode-{mode} update; ridge fallback")
            grams = grams.copy()
            grams[bad] += FALLBACK_RIDGE * np.eye(p)
    return _batched_ridge(grams, rhs, lam)


def bcd_solve_masked(
    y,
    w,
    config: SolverConfig,
    init_factors: Ll1Factors | None = None,
    record_blocks: bool = False,
) -> SolveResult:
    """Fit block-term factors to weighted observations by exact BCD.

    Same termination, restart and normalization rules as
    :func:`radiomap.solver_slab.bcd_solve`.
    """
    y = np.asarray(y, dtype=float)
    w2 = _as_weights(w) ** 2
    if y.shape != w2.shape:
        raise ValueError(f"observation shape {y.shape} differs from mask shape {w2.shape}")
    obs = w2 > 0
    y = np.where(obs, y, 0.0)
    if not np.all(np.isfinite(y)):
        raise ValueError("observed values must be finite")
    scale = 1.0
    if config.normalize and obs.any():
        scale = float(np.sqrt(np.sum(y[obs] ** 2) / obs.sum())) or 1.0
        y = y / scale
    L, lam = config.L, config.lam
    rng = np.random.default_rng(config.seed)
    energy = float(np.sum(w2 * y**2))

    def loss_fn(A, B, C):
        return _loss(A, B, C, y, w2, L, lam)

    updates = (
        lambda A, B, C: update_factor_masked(1, A, B, C, y, w2, L, lam[0]),
        lambda A, B, C: update_factor_masked(2, A, B, C, y, w2, L, lam[1]),
        lambda A, B, C: update_factor_masked(3, A, B, C, y, w2, L, lam[2]),
    )
    runs = []
    for restart in range(config.restarts):
        init = _initial(y.shape, config, init_factors, restart, rng, scale)
        with np.errstate(all="ignore"):
            A, B, C, trace, its, term, blocks, events = run_bcd(
                loss_fn, updates, init, config, rng, record_blocks, energy
            )
        if term == "diverged":
            log.warning("restart %d diverged", restart)
        runs.append(SolveResult(Ll1Factors.from_blocks(A, B, C * scale, L), trace, its, term,
                                restart, blocks, scale, events))
    return pick_best(runs)
