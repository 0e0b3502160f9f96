"""Block coordinate descent for the coupled two-slab criterion.

The two observations are ``X1 = X(s1, :, s3)`` (horizontal slabs, sensor 1) and
``X2 = X(:, s2, s4)`` (vertical slabs, sensor 2).  Each block update is the
exact minimizer of the ridge-regularized loss in that block.

Factor matrices are stored concatenated: ``A`` is ``I x LR`` with block ``r``
in columns ``r*L:(r+1)*L``; likewise ``B``.  ``C`` is ``K x R``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .sampling import SlabPlan
from .tensor_core import Ll1Factors

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    L: int
    R: int
    lam: tuple[float, float, float] = (1e-2, 1e-2, 1e-2)
    max_iters: int = 100
    rel_tol: float = 1e-3
    restarts: int = 1
    init: str = "random"
    perturb_scale: float = 0.0
    normalize: bool = True
    extrapolate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or self.R < 1:
            raise ValueError("L and R must be positive")
        if np.isscalar(self.lam):
            self.lam = (float(self.lam),) * 3
        self.lam = tuple(float(v) for v in self.lam)
        if len(self.lam) != 3 or min(self.lam) < 0:
            raise ValueError("lam must be three nonnegative numbers")
        if self.rel_tol <= 0 or self.max_iters < 1 or self.restarts < 1:
            raise ValueError("rel_tol, max_iters and restarts must be positive")
        if self.init not in ("random", "given", "truth-perturbed"):
            raise ValueError(f"unknown init {self.init!r}")


SlabSolverConfig = SolverConfig


@dataclass
class SolveResult:
    factors: Ll1Factors
    loss_trace: np.ndarray
    iterations: int
    termination: str
    restart_index: int = 0
    block_trace: np.ndarray | None = None
    data_scale: float = 1.0
    events: list[str] = field(default_factory=list)
    restart_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])


# ---------------------------------------------------------------------------
# building blocks


def pkr_gram(C: np.ndarray, F: np.ndarray, L: int) -> np.ndarray:
    """Gram matrix of ``partition_khatri_rao(C, F)`` without forming it."""
    return np.kron(C.T @ C, np.ones((L, L))) * (F.T @ F)


def mttkrp_rows(x: np.ndarray, F: np.ndarray, C: np.ndarray, L: int) -> np.ndarray:
    """``unfold(x, 1).T @ partition_khatri_rao(C, F)`` for ``x`` of shape ``(m, j, k)``."""
    m, J, _ = x.shape
    R = C.shape[1]
    T = (x.reshape(m * J, -1) @ C).reshape(m, J, R)
    return np.einsum("mjr,jrl->mrl", T, F.reshape(J, R, L)).reshape(m, R * L)


def mttkrp_cols(x: np.ndarray, F: np.ndarray, C: np.ndarray, L: int) -> np.ndarray:
    """``unfold(x, 2).T @ partition_khatri_rao(C, F)`` for ``x`` of shape ``(i, n, k)``."""
    I, n, _ = x.shape
    R = C.shape[1]
    T = (x.reshape(I * n, -1) @ C).reshape(I, n, R)
    return np.einsum("inr,irl->nrl", T, F.reshape(I, R, L)).reshape(n, R * L)


def block_products(A: np.ndarray, B: np.ndarray, L: int) -> np.ndarray:
    """Stack of ``A_r B_r^T`` with shape ``(I, J, R)``."""
    I, J = A.shape[0], B.shape[0]
    R = A.shape[1] // L
    Ar = A.reshape(I, R, L).transpose(1, 0, 2)
    Br = B.reshape(J, R, L).transpose(1, 2, 0)
    return np.matmul(Ar, Br).transpose(1, 2, 0)


def _factor(M: np.ndarray):
    lu, piv = linalg.lu_factor(M.T, check_finite=True)
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * max(1.0, np.abs(lu).max()) * len(M)):
        raise np.linalg.LinAlgError("singular coefficient matrix in block update")
    return lu, piv


def solve_row_decoupled_sylvester(h1_diag, H2, H4, H5) -> np.ndarray:
    """Solve ``diag(h1) A H2 + A H4 = H5`` for 0/1 ``h1``.

    Row ``i`` satisfies ``A[i] (h1[i] H2 + H4) = H5[i]``, so only ``H2 + H4``
    and ``H4`` are factorized.
    """
    h1 = np.asarray(h1_diag).ravel()
    H2, H4, H5 = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (H2, H4, H5))
    if not np.all(np.isin(h1, (0, 1))):
        raise ValueError("h1_diag must be a 0/1 vector")
    if H5.shape[0] != len(h1):
        raise ValueError("H5 must have one row per h1 entry")
    out = np.empty_like(H5)
    for flag, coef in ((1, H2 + H4), (0, H4)):
        rows = h1 == flag
        if rows.any():
            out[rows] = linalg.lu_solve(_factor(coef), H5[rows].T).T
    return out


# ---------------------------------------------------------------------------
# coupled slab problem


@dataclass
class SlabData:
    """Observed slabs with the plan that produced them."""

    x1: np.ndarray
    x2: np.ndarray
    plan: SlabPlan
    dims: tuple[int, int, int]

    def __post_init__(self):
        I, J, K = self.dims
        p = self.plan
        self.x1 = np.ascontiguousarray(self.x1, dtype=float)
        self.x2 = np.ascontiguousarray(self.x2, dtype=float)
        if self.x1.shape != (p.M, J, len(p.s3)):
            raise ValueError(f"x1 must be {(p.M, J, len(p.s3))}, got {self.x1.shape}")
        if self.x2.shape != (I, p.N, len(p.s4)):
            raise ValueError(f"x2 must be {(I, p.N, len(p.s4))}, got {self.x2.shape}")

    @classmethod
    def infer(cls, x1, x2, plan: SlabPlan, K: int | None = None) -> "SlabData":
        K = K if K is not None else max(max(plan.s3), max(plan.s4)) + 1
        return cls(np.asarray(x1, float), np.asarray(x2, float), plan, (x2.shape[0], x1.shape[1], K))


def slab_loss_parts(A, B, C, data: SlabData, L: int) -> tuple[float, float]:
    p = data.plan
    S = block_products(A, B, L)
    R = C.shape[1]
    m1 = S[list(p.s1)].reshape(-1, R) @ C[list(p.s3)].T
    m2 = S[:, list(p.s2)].reshape(-1, R) @ C[list(p.s4)].T
    r1 = data.x1.reshape(m1.shape) - m1
    r2 = data.x2.reshape(m2.shape) - m2
    return float(np.vdot(r1, r1)), float(np.vdot(r2, r2))


def slab_loss(factors: Ll1Factors, x1, x2, plan: SlabPlan, lam=(0.0, 0.0, 0.0)) -> float:
    """Coupled fit of both slabs plus ``lam[0]||A||^2 + lam[1]||B||^2 + lam[2]||C||^2``."""
    I, J, K = factors.dims
    data = SlabData(np.asarray(x1, float), np.asarray(x2, float), plan, (I, J, K))
    L = _uniform_rank(factors)
    return _loss(factors.A_mat, factors.B_mat, factors.C, data, L, lam)


def _uniform_rank(factors: Ll1Factors) -> int:
    ranks = set(factors.ranks)
    if len(ranks) != 1:
        raise ValueError("solvers require equal block ranks")
    return ranks.pop()


def _loss(A, B, C, data, L, lam) -> float:
    f1, f2 = slab_loss_parts(A, B, C, data, L)
    return f1 + f2 + lam[0] * np.sum(A**2) + lam[1] * np.sum(B**2) + lam[2] * np.sum(C**2)


def update_A(A, B, C, data: SlabData, L: int, lam1: float) -> np.ndarray:
    """Exact minimizer over ``A`` with ``B`` and ``C`` fixed."""
    p = data.plan
    I = data.dims[0]
    C1, C2 = C[list(p.s3)], C[list(p.s4)]
    Bq = B[list(p.s2)]
    H2 = pkr_gram(C1, B, L)
    H4 = pkr_gram(C2, Bq, L) + lam1 * np.eye(B.shape[1])
    H5 = mttkrp_rows(data.x2, Bq, C2, L)  # I x LR
    H5[list(p.s1)] += mttkrp_rows(data.x1, B, C1, L)
    h1 = np.zeros(I)
    h1[list(p.s1)] = 1
    return solve_row_decoupled_sylvester(h1, H2, H4, H5)


def update_B(A, B, C, data: SlabData, L: int, lam2: float) -> np.ndarray:
    """Exact minimizer over ``B``; mirror image of :func:`update_A`."""
    p = data.plan
    J = data.dims[1]
    C1, C2 = C[list(p.s3)], C[list(p.s4)]
    Ap = A[list(p.s1)]
    G2 = pkr_gram(C2, A, L)
    G4 = pkr_gram(C1, Ap, L) + lam2 * np.eye(A.shape[1])
    G5 = mttkrp_cols(data.x1, Ap, C1, L)  # J x LR
    G5[list(p.s2)] += mttkrp_cols(data.x2, A, C2, L)
    h1 = np.zeros(J)
    h1[list(p.s2)] = 1
    return solve_row_decoupled_sylvester(h1, G2, G4, G5)


def update_C(A, B, C, data: SlabData, L: int, lam3: float) -> np.ndarray:
    """Exact minimizer over ``C``; each band solves its own ``R x R`` system.

    Band ``k`` uses ``d1 M1^T M1 + d2 M2^T M2 + lam3 I`` where ``d1``/``d2``
    flag membership in ``s3``/``s4``.
    """
    p = data.plan
    K = data.dims[2]
    R = C.shape[1]
    S = block_products(A, B, L)
    S1, S2 = S[list(p.s1)].reshape(-1, R), S[:, list(p.s2)].reshape(-1, R)
    G1 = S1.T @ S1
    G2 = S2.T @ S2
    rhs = np.zeros((K, R))
    d1 = np.zeros(K, dtype=int)
    d2 = np.zeros(K, dtype=int)
    rhs[list(p.s3)] += data.x1.reshape(S1.shape[0], -1).T @ S1
    rhs[list(p.s4)] += data.x2.reshape(S2.shape[0], -1).T @ S2
    d1[list(p.s3)] = 1
    d2[list(p.s4)] = 1
    out = np.zeros((K, R))
    for a in (0, 1):
        for b in (0, 1):
            rows = (d1 == a) & (d2 == b)
            if not rows.any():
                continue
            coef = a * G1 + b * G2 + lam3 * np.eye(R)
            if a == b == 0 and lam3 == 0:
                warnings.warn("bands observed by neither sensor with lam3=0; rows set to zero")
                continue
            out[rows] = linalg.lu_solve(_factor(coef), rhs[rows].T).T
    return out


# ---------------------------------------------------------------------------
# driver


def _random_blocks(dims, L, R, rng):
    I, J, K = dims
    return (
        rng.standard_normal((I, L * R)),
        rng.standard_normal((J, L * R)),
        rng.standard_normal((K, R)),
    )


def _initial(dims, config: SolverConfig, init_factors, restart: int, rng, scale: float):
    L, R = config.L, config.R
    if init_factors is None or (restart > 0 and config.init != "truth-perturbed"):
        return _random_blocks(dims, L, R, rng)
    _uniform_rank(init_factors)
    A, B, C = init_factors.A_mat.copy(), init_factors.B_mat.copy(), init_factors.C / scale
    if config.init == "truth-perturbed" and config.perturb_scale > 0:
        A += config.perturb_scale * rng.standard_normal(A.shape)
        B += config.perturb_scale * rng.standard_normal(B.shape)
        C += config.perturb_scale * rng.standard_normal(C.shape)
    return A, B, C


def revive_dead_columns(C: np.ndarray, rng, events: list[str], it: int) -> np.ndarray:
    norms = np.linalg.norm(C, axis=0)
    ref = np.linalg.norm(C)
    dead = norms <= 1e-14 * max(ref, 1e-300)
    if dead.any() and ref > 0:
        C = C.copy()
        for r in np.flatnonzero(dead):
            C[:, r] = 1e-3 * ref * rng.standard_normal(C.shape[0]) / np.sqrt(C.shape[0])
            events.append(f"iteration {it}: reinitialized dead column {r}")
            log.info("reinitialized dead C column %d at iteration %d", r, it)
    return C


# a loss below this fraction of the data energy counts as an exact fit
EXACT_FIT = 1e-24


def run_bcd(loss_fn, updates, init, config: SolverConfig, rng, record_blocks: bool,
            energy: float = 0.0):
    """Shared BCD loop.  ``updates`` maps (A, B, C) to a new block in turn.

    Stops on a small relative change, or once the loss drops below
    ``EXACT_FIT * energy`` where roundoff makes relative changes meaningless.
    """
    A, B, C = init
    events: list[str] = []
    loss = loss_fn(A, B, C)
    trace, blocks = [loss], [loss]
    termination = "max_iters"
    it = 0
    old = (A, B, C)
    for it in range(1, config.max_iters + 1):
        A = updates[0](A, B, C)
        if record_blocks:
            blocks.append(loss_fn(A, B, C))
        B = updates[1](A, B, C)
        if record_blocks:
            blocks.append(loss_fn(A, B, C))
        C = updates[2](A, B, C)
        if record_blocks:
            blocks.append(loss_fn(A, B, C))
        C = revive_dead_columns(C, rng, events, it)
        new = loss_fn(A, B, C)
        if config.extrapolate and it > 1:
            # line search along the last cycle's step; kept only if it helps
            step = it ** (1.0 / 3.0)
            cand = tuple(n + step * (n - o) for n, o in zip((A, B, C), old))
            cand_loss = loss_fn(*cand)
            if cand_loss < new:
                A, B, C = cand
                new = cand_loss
        old = (A, B, C)
        if not np.isfinite(new):
            trace.append(new)
            termination = "diverged"
            break
        trace.append(new)
        prev = trace[-2]
        if new <= EXACT_FIT * energy or prev <= 1e-300 or abs(prev - new) <= config.rel_tol * prev:
            termination = "tol"
            break
    return A, B, C, np.array(trace), it, termination, (np.array(blocks) if record_blocks else None), events


def pick_best(runs: list[SolveResult]) -> SolveResult:
    finite = [r for r in runs if r.termination != "diverged"]
    if not finite:
        raise FloatingPointError("every restart diverged")
    best = min(finite, key=lambda r: r.final_loss)
    best.restart_losses = [r.final_loss for r in runs]
    return best


def bcd_solve(
    x1,
    x2,
    plan: SlabPlan,
    config: SolverConfig,
    K: int | None = None,
    init_factors: Ll1Factors | None = None,
    record_blocks: bool = False,
) -> SolveResult:
    """Fit shared factors to both slabs by cycling exact A, B, C updates.

    Stops when the relative loss change drops below ``config.rel_tol`` or after
    ``config.max_iters`` cycles.  With several restarts the run with the
    smallest final loss is returned.

    When ``config.normalize`` is set the data are divided by their RMS value
    before solving, and ``C`` is scaled back afterwards; ``loss_trace`` then
    refers to the normalized problem (see ``SolveResult.data_scale``).
    """
    data = SlabData.infer(x1, x2, plan, K)
    if not (np.all(np.isfinite(data.x1)) and np.all(np.isfinite(data.x2))):
        raise ValueError("observations must be finite")
    scale = 1.0
    if config.normalize:
        n_obs = data.x1.size + data.x2.size
        scale = float(np.sqrt((np.sum(data.x1**2) + np.sum(data.x2**2)) / n_obs)) or 1.0
        data = SlabData(data.x1 / scale, data.x2 / scale, plan, data.dims)
    L, lam = config.L, config.lam
    rng = np.random.default_rng(config.seed)
    energy = float(np.sum(data.x1**2) + np.sum(data.x2**2))

    def loss_fn(A, B, C):
        return _loss(A, B, C, data, L, lam)

    updates = (
        lambda A, B, C: update_A(A, B, C, data, L, lam[0]),
        lambda A, B, C: update_B(A, B, C, data, L, lam[1]),
        lambda A, B, C: update_C(A, B, C, data, L, lam[2]),
    )
    runs = []
    for restart in range(config.restarts):
        init = _initial(data.dims, config, init_factors, restart, rng, scale)
        with np.errstate(all="ignore"):
            try:
                A, B, C, trace, its, term, blocks, events = run_bcd(
                    loss_fn, updates, init, config, rng, record_blocks, energy
                )
            except np.linalg.LinAlgError as exc:
                log.warning("restart %d aborted: %s", restart, exc)
                runs.append(SolveResult(Ll1Factors.from_blocks(*init, L), np.array([np.inf]), 0,
                                        "diverged", restart, events=[str(exc)]))
                continue
        if term == "diverged":
            log.warning("restart %d diverged", restart)
        runs.append(SolveResult(Ll1Factors.from_blocks(A, B, C * scale, L), trace, its, term,
                                restart, blocks, scale, events))
    return pick_best(runs)
