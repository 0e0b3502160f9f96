"""Observation plans (coupled slabs, fiber groups, random fiber masks) and
checkers for the sufficient identifiability conditions attached to each plan.

Checkers only evaluate sufficient conditions.  A failed report means the
guarantee does not apply, not that recovery is impossible.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_core import mode_product


class PlanError(ValueError):
    pass


def _index_set(values, n: int, name: str) -> tuple[int, ...]:
    idx = sorted(set(int(v) for v in values))
    if len(idx) != len(list(values)):
        raise PlanError(f"{name} contains duplicate indices")
    if idx and (idx[0] < 0 or idx[-1] >= n):
        raise PlanError(f"{name} has indices outside 0..{n - 1}")
    return tuple(idx)


def selection_matrix(indices: Sequence[int], n: int) -> np.ndarray:
    """Rows of the ``n x n`` identity picked by ``indices``."""
    return np.eye(n)[list(indices)]


@dataclass(frozen=True)
class SlabPlan:
    """Two moving-sensor routes: rows ``s1`` on bands ``s3``, columns ``s2`` on bands ``s4``."""

    s1: tuple[int, ...]
    s2: tuple[int, ...]
    s3: tuple[int, ...]
    s4: tuple[int, ...]

    def __post_init__(self):
        for name in ("s1", "s2", "s3", "s4"):
            v = tuple(sorted(int(i) for i in getattr(self, name)))
            if len(set(v)) != len(v):
                raise PlanError(f"{name} contains duplicate indices")
            if not v:
                raise PlanError(f"{name} is empty")
            object.__setattr__(self, name, v)

    def validate(self, dims) -> None:
        I, J, K = dims
        _index_set(self.s1, I, "s1")
        _index_set(self.s2, J, "s2")
        _index_set(self.s3, K, "s3")
        _index_set(self.s4, K, "s4")

    @property
    def M(self) -> int:
        return len(self.s1)

    @property
    def N(self) -> int:
        return len(self.s2)

    def covers_all_bands(self, K: int) -> bool:
        return set(self.s3) | set(self.s4) == set(range(K))

    @classmethod
    def equispaced(cls, dims, M: int, N: int, s3=None, s4=None) -> "SlabPlan":
        """Evenly spread ``M`` rows and ``N`` columns; all bands by default."""
        I, J, K = dims
        s1 = np.unique(np.round(np.linspace(0, I - 1, M + 2)[1:-1]).astype(int))
        s2 = np.unique(np.round(np.linspace(0, J - 1, N + 2)[1:-1]).astype(int))
        all_k = tuple(range(K))
        return cls(tuple(s1), tuple(s2), tuple(s3 or all_k), tuple(s4 or all_k))

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("s1", "s2", "s3", "s4")}


@dataclass(frozen=True)
class FiberGroup:
    I: tuple[int, ...]
    J: tuple[int, ...]
    K: tuple[int, ...]


@dataclass(frozen=True)
class FiberGroupPlan:
    groups: tuple[FiberGroup, ...]

    def __init__(self, groups):
        gs = []
        for g in groups:
            if not isinstance(g, FiberGroup):
                g = FiberGroup(*g) if isinstance(g, (tuple, list)) else FiberGroup(g["I"], g["J"], g["K"])
            parts = []
            for name in ("I", "J", "K"):
                v = tuple(sorted(int(i) for i in getattr(g, name)))
                if not v:
                    raise PlanError(f"group index set {name} is empty")
                if len(set(v)) != len(v):
                    raise PlanError(f"group index set {name} has duplicates")
                parts.append(v)
            gs.append(FiberGroup(*parts))
        if not gs:
            raise PlanError("a fiber-group plan needs at least one group")
        object.__setattr__(self, "groups", tuple(gs))

    def validate(self, dims) -> None:
        I, J, K = dims
        for d, g in enumerate(self.groups):
            _index_set(g.I, I, f"group {d} I")
            _index_set(g.J, J, f"group {d} J")
            _index_set(g.K, K, f"group {d} K")

    @property
    def D(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {"groups": [{"I": list(g.I), "J": list(g.J), "K": list(g.K)} for g in self.groups]}


@dataclass
class FiberMask:
    """Nonnegative observation weights; zero marks an unobserved entry."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 3:
            raise PlanError("mask weights must be a third-order array")
        if not np.all(np.isfinite(w)) or w.min() < 0:
            raise PlanError("mask weights must be finite and nonnegative")
        self.weights = w

    @property
    def observed_count(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    @property
    def observed(self) -> np.ndarray:
        return self.weights > 0


# ---------------------------------------------------------------------------
# extraction


def slab_subtensors(x: np.ndarray, plan: SlabPlan) -> tuple[np.ndarray, np.ndarray]:
    """Return ``X(s1, :, s3)`` and ``X(:, s2, s4)``."""
    plan.validate(x.shape)
    x1 = x[np.ix_(plan.s1, range(x.shape[1]), plan.s3)]
    x2 = x[np.ix_(range(x.shape[0]), plan.s2, plan.s4)]
    return x1, x2


def slab_subtensors_by_products(x: np.ndarray, plan: SlabPlan):
    """Same as :func:`slab_subtensors` via mode products with selection matrices."""
    I, J, K = x.shape
    P, Q = selection_matrix(plan.s1, I), selection_matrix(plan.s2, J)
    R1, R2 = selection_matrix(plan.s3, K), selection_matrix(plan.s4, K)
    return (
        mode_product(mode_product(x, P, 1), R1, 3),
        mode_product(mode_product(x, Q, 2), R2, 3),
    )


def group_subtensors(x: np.ndarray, plan: FiberGroupPlan) -> list[np.ndarray]:
    plan.validate(x.shape)
    return [x[np.ix_(g.I, g.J, g.K)] for g in plan.groups]


def plan_to_mask(plan: FiberGroupPlan, dims) -> FiberMask:
    """Weight ``sqrt(P)`` where ``P`` groups observe the entry.

    Squared weights then turn the masked loss into the sum of per-group losses.
    """
    plan.validate(dims)
    count = np.zeros(dims)
    for g in plan.groups:
        count[np.ix_(g.I, g.J, g.K)] += 1
    return FiberMask(np.sqrt(count))


def slab_plan_to_mask(plan: SlabPlan, dims) -> FiberMask:
    """Slab plan expressed as a ``sqrt(P)`` weight tensor (two groups)."""
    I, J, K = dims
    groups = [
        FiberGroup(plan.s1, tuple(range(J)), plan.s3),
        FiberGroup(tuple(range(I)), plan.s2, plan.s4),
    ]
    return plan_to_mask(FiberGroupPlan(groups), dims)


def random_fiber_mask(dims, q: int, rng=None) -> FiberMask:
    """Observe exactly ``q`` uniformly chosen entries of every column ``X(:, j, k)``."""
    I, J, K = dims
    if not 1 <= q <= I:
        raise PlanError(f"q must lie in 1..{I}, got {q}")
    rng = np.random.default_rng(rng)
    keys = rng.random((I, J, K))
    # the q smallest keys per column form a uniform q-subset
    ranks = keys.argsort(axis=0).argsort(axis=0)
    return FiberMask((ranks < q).astype(float))


def random_location_mask(dims, rho: float, rng=None) -> FiberMask:
    """Observe full spectra ``X(i, j, :)`` at ``round(rho * I * J)`` random locations."""
    I, J, K = dims
    if not 0 < rho <= 1:
        raise PlanError("rho must lie in (0, 1]")
    rng = np.random.default_rng(rng)
    n = max(1, int(round(rho * I * J)))
    flat = np.zeros(I * J)
    flat[rng.choice(I * J, size=n, replace=False)] = 1.0
    w = np.repeat(flat.reshape(I, J)[:, :, None], K, axis=2)
    return FiberMask(w)


# ---------------------------------------------------------------------------
# identifiability checks


@dataclass
class Clause:
    text: str
    value: float
    threshold: float
    passed: bool


@dataclass
class CheckReport:
    name: str
    clauses: list[Clause] = field(default_factory=list)
    details: list[Clause] = field(default_factory=list)
    witness: tuple | None = None
    note: str = "sufficient conditions only; a failure does not prove non-identifiability"

    @property
    def satisfied(self) -> bool:
        return all(c.passed for c in self.clauses)

    def add(self, text: str, value, threshold, passed: bool | None = None) -> bool:
        if passed is None:
            passed = value >= threshold
        self.clauses.append(Clause(text, float(value), float(threshold), bool(passed)))
        return bool(passed)

    def detail(self, text: str, value, threshold, passed: bool | None = None) -> bool:
        """Record a sub-condition of a disjunctive clause (does not gate ``satisfied``)."""
        if passed is None:
            passed = value >= threshold
        self.details.append(Clause(text, float(value), float(threshold), bool(passed)))
        return bool(passed)

    def table(self) -> str:
        width = max([len(c.text) for c in self.clauses] + [6])
        lines = [f"{self.name}", f"{'clause':<{width}}  {'value':>10}  {'threshold':>10}  result"]
        width = max([width] + [len(c.text) + 2 for c in self.details])
        for c in self.clauses:
            lines.append(
                f"{c.text:<{width}}  {c.value:>10.4g}  {c.threshold:>10.4g}  "
                f"{'pass' if c.passed else 'FAIL'}"
            )
        for c in self.details:
            lines.append(
                f"  {c.text:<{width - 2}}  {c.value:>10.4g}  {c.threshold:>10.4g}  "
                f"({'ok' if c.passed else 'no'})"
            )
        if self.witness is not None:
            lines.append(f"witness ordering: {self.witness}")
        lines.append(f"satisfied: {self.satisfied} ({self.note})")
        return "\n".join(lines)


def _kruskal_like(a: int, b: int, L: int, R: int) -> int:
    return min(a // L, R) + min(b // L, R)


def check_ll1_uniqueness(dims, L: int, R: int) -> CheckReport:
    """Generic essential uniqueness of a full rank-(L, L, 1) decomposition.

    Passes if either the ``K >= R`` condition or the relaxed
    ``IJ >= L^2 R`` condition holds.
    """
    I, J, K = dims
    rep = CheckReport("LL1 essential uniqueness")
    kr = _kruskal_like(I, J, L, R)
    first = rep.detail("K >= R", K, R) & rep.detail("min(I/L,R)+min(J/L,R) >= R+2", kr, R + 2)
    second = rep.detail("IJ >= L^2 R", I * J, L * L * R) & rep.detail(
        "min(I/L,R)+min(J/L,R)+min(K,R) >= 2R+2", kr + min(K, R), 2 * R + 2
    )
    rep.add("either uniqueness condition holds", int(first) + int(second), 1)
    return rep


def check_slab_identifiability(plan: SlabPlan, dims, L: int, R: int) -> CheckReport:
    if L < 1 or R < 1:
        raise ValueError("L and R must be positive")
    I, J, K = dims
    plan.validate(dims)
    M, N = plan.M, plan.N
    rep = CheckReport("coupled-slab identifiability")
    common = len(set(plan.s3) & set(plan.s4))
    rep.add("|s3 & s4| >= R", common, R)
    c1 = all([
        rep.detail("(1) M >= 2L", M, 2 * L),
        rep.detail("(1) J >= LR", J, L * R),
        rep.detail("(1) min(M/L,R)+min(J/L,R) >= R+2", _kruskal_like(M, J, L, R), R + 2),
    ])
    c2 = all([
        rep.detail("(2) N >= 2L", N, 2 * L),
        rep.detail("(2) I >= LR", I, L * R),
        rep.detail("(2) min(N/L,R)+min(I/L,R) >= R+2", _kruskal_like(N, I, L, R), R + 2),
    ])
    rep.add("condition (1) or condition (2)", int(c1) + int(c2), 1)
    if not plan.covers_all_bands(K):
        rep.note += "; s3 | s4 does not cover every band"
    return rep


def _find_ordering(D: int, compatible) -> tuple[int, ...] | None:
    """Return an ordering of ``range(D)`` whose consecutive pairs are compatible."""
    if D == 1:
        return (0,)
    if D <= 8:
        for perm in itertools.permutations(range(D)):
            if all(compatible[perm[t]][perm[t + 1]] for t in range(D - 1)):
                return perm
        return None
    # Held-Karp style reachability over subsets
    full = (1 << D) - 1
    parent: dict[tuple[int, int], int | None] = {}
    frontier = {(1 << v, v) for v in range(D)}
    for state in frontier:
        parent[state] = None
    for _ in range(D - 1):
        nxt = set()
        for mask, v in frontier:
            for u in range(D):
                if not mask & (1 << u) and compatible[v][u]:
                    s = (mask | (1 << u), u)
                    if s not in parent:
                        parent[s] = v
                        nxt.add(s)
        frontier = nxt
    for mask, v in sorted(frontier, key=lambda s: s[1]):
        if mask == full:
            path, state = [], (mask, v)
            while state is not None:
                path.append(state[1])
                prev = parent[state]
                state = None if prev is None else (state[0] & ~(1 << state[1]), prev)
            return tuple(reversed(path))
    return None


def _coverage(rep: CheckReport, plan: FiberGroupPlan, dims, axes: str) -> None:
    for ax, n in zip("IJK", dims):
        if ax in axes:
            covered = set().union(*(getattr(g, ax) for g in plan.groups))
            rep.add(f"union of {ax}-sets covers [{ax}]", len(covered), n)


def check_group_identifiability(plan: FiberGroupPlan, dims, L: int, R: int) -> CheckReport:
    """Every group identifiable plus a chain of overlapping groups."""
    plan.validate(dims)
    rep = CheckReport("fiber-group identifiability (all groups)")
    _coverage(rep, plan, dims, "IJK")
    for d, g in enumerate(plan.groups, 1):
        rep.add(f"group {d}: |I| >= L", len(g.I), L)
        rep.add(f"group {d}: |J| >= L", len(g.J), L)
        rep.add(f"group {d}: |K| >= R", len(g.K), R)
        rep.add(f"group {d}: min(|I|/L,R)+min(|J|/L,R)", _kruskal_like(len(g.I), len(g.J), L, R), R + 2)
    gs = plan.groups

    def ok(a, b):
        sp = max(len(set(gs[a].I) & set(gs[b].I)), len(set(gs[a].J) & set(gs[b].J)))
        return sp >= L and len(set(gs[a].K) & set(gs[b].K)) >= 2

    compat = [[a != b and ok(a, b) for b in range(plan.D)] for a in range(plan.D)]
    order = _find_ordering(plan.D, compat)
    rep.add("chain ordering with spatial overlap >= L and band overlap >= 2",
            float(order is not None), 1.0, order is not None)
    if order is not None:
        rep.witness = tuple(i + 1 for i in order)
    return rep


def check_anchor_identifiability(plan: FiberGroupPlan, dims, L: int, R: int) -> CheckReport:
    """One full-spectrum identifiable anchor group plus spatially chained groups."""
    plan.validate(dims)
    I, J, K = dims
    rep = CheckReport("fiber-group identifiability (anchor group)")
    _coverage(rep, plan, dims, "IJ")
    for d, g in enumerate(plan.groups, 1):
        rep.add(f"group {d}: |I| >= L", len(g.I), L)
        rep.add(f"group {d}: |J| >= L", len(g.J), L)
    rep.add("K >= R", K, R)
    anchors = [
        d for d, g in enumerate(plan.groups)
        if len(g.K) == K and _kruskal_like(len(g.I), len(g.J), L, R) >= R + 2
    ]
    rep.add("anchor group with all bands and min(|I|/L,R)+min(|J|/L,R)>=R+2",
            len(anchors), 1)
    gs = plan.groups
    compat = [
        [a != b and max(len(set(gs[a].I) & set(gs[b].I)), len(set(gs[a].J) & set(gs[b].J))) >= L
         for b in range(plan.D)]
        for a in range(plan.D)
    ]
    order = _find_ordering(plan.D, compat)
    rep.add("chain ordering with spatial overlap >= L", float(order is not None), 1.0, order is not None)
    if order is not None:
        rep.witness = tuple(i + 1 for i in order)
    return rep


def check_random_fiber(dims, L: int, R: int, q: int, epsilon: float = 1.0) -> CheckReport:
    """Conditions for recovery from ``q`` random entries per frontal-slab column."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    I, J, _ = dims
    LR = L * R
    rep = CheckReport("random fiber sampling")
    rep.add("I <= J", I, J, I <= J)
    rep.add("LR <= I/6", LR, I / 6, LR <= I / 6)
    rep.add("J > (LR+1)(I-LR)", J, (LR + 1) * (I - LR), J > (LR + 1) * (I - LR))
    need = max(12 * math.log(I / epsilon + 1), 2 * LR)
    rep.add("q >= max(12 ln(I/eps+1), 2LR)", q, need)
    return rep
