"""Seeded Monte-Carlo experiments: simulate, sample, solve, evaluate, aggregate.

An experiment is described by a JSON document::

    {
      "schema": 1,
      "scenario": {"I": 101, "J": 101, "K": 128, "R": 2},
      "sampling": {"mode": "slab", "M": 15, "N": 6},
      "solver": {"L": 3, "max_iters": 100},
      "trials": 20,
      "master_seed": 0,
      "output_dir": "runs/slab"
    }

Trial ``t`` uses seed ``master_seed + t`` for the scenario and the solver, and
an independent stream derived from the same seed for noise and random masks.
Unknown keys are rejected at every level.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .posteval import disaggregate_full, nae_map, nae_psd, nae_slf
from .sampling import (
    FiberGroupPlan,
    SlabPlan,
    plan_to_mask,
    random_fiber_mask,
    random_location_mask,
    slab_plan_to_mask,
    slab_subtensors,
)
from .scenario import ScenarioConfig, add_noise, assemble_ground_truth
from .solver_masked import bcd_solve_masked
from .solver_slab import SolverConfig, bcd_solve

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SAMPLING_MODES = ("slab", "groups", "random-fiber", "external-obs")
METRICS = ("nae_c", "nae_s", "nae_x")


class ConfigError(ValueError):
    pass


def _reject_unknown(section: str, data: dict, allowed) -> None:
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


@dataclass
class SamplingConfig:
    mode: str = "slab"
    # slab
    M: int | None = None
    N: int | None = None
    s3: list[int] | None = None
    s4: list[int] | None = None
    # slab or groups, from file
    plan: str | None = None
    # random fibers: q bands per location, or a fraction rho of locations
    q: int | None = None
    rho: float | None = None
    # external observations
    observations: str | None = None
    truth: str | None = None

    def validate(self) -> None:
        if self.mode not in SAMPLING_MODES:
            raise ConfigError(f"sampling mode must be one of {SAMPLING_MODES}, got {self.mode!r}")
        for name in ("plan", "observations", "truth"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"sampling.{name} refers to a missing path: {p}")
        if self.mode == "slab" and self.plan is None and (self.M is None or self.N is None):
            raise ConfigError("slab sampling needs either a plan file or M and N")
        if self.mode == "groups" and self.plan is None:
            raise ConfigError("group sampling needs a plan file")
        if self.mode == "random-fiber" and (self.q is None) == (self.rho is None):
            raise ConfigError("random-fiber sampling needs exactly one of q and rho")
        if self.mode == "external-obs" and self.observations is None:
            raise ConfigError("external-obs sampling needs an observations file")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    solver: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=lambda: {m: True for m in METRICS})
    snr_db: float | None = None
    refine: bool = True
    smoothing: float = 1e-3
    trials: int = 1
    master_seed: int = 0
    output_dir: str = "radiomap-run"
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        _reject_unknown("metrics", self.metrics, METRICS)
        _reject_unknown("solver", self.solver, [f.name for f in fields(SolverConfig)])
        self.sampling.validate()
        self.solver_config(0)

    def solver_config(self, seed: int) -> SolverConfig:
        opts = {"R": self.scenario.R, "L": 3, **self.solver, "seed": seed}
        try:
            return SolverConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver settings: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        _reject_unknown("experiment config", data, [f.name for f in fields(cls)])
        if "schema" not in data:
            raise ConfigError("config needs a 'schema' field")
        scen = data.pop("scenario", {})
        _reject_unknown("scenario", scen, [f.name for f in fields(ScenarioConfig)])
        samp = data.pop("sampling", {})
        _reject_unknown("sampling", samp, [f.name for f in fields(SamplingConfig)])
        return cls(scenario=ScenarioConfig(**scen), sampling=SamplingConfig(**samp), **data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrialRecord:
    index: int
    seed: int
    nae_c: float = math.nan
    nae_s: float = math.nan
    nae_x: float = math.nan
    final_loss: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    status: str = "ok"

    @property
    def aborted(self) -> bool:
        return self.status != "ok"


# ---------------------------------------------------------------------------
# one trial


def _load_truth(path):
    """Read ``C.csv`` and ``S_<r>.csv`` from an exported ground-truth folder."""
    path = Path(path)
    C = io.read_matrix(path / "C.csv")
    slfs = [io.read_matrix(path / f"S_{r + 1}.csv") for r in range(C.shape[1])]
    x = io.read_tensor(path / "X.tns") if (path / "X.tns").exists() else None
    return C, slfs, x


def _observe(cfg: ExperimentConfig, x: np.ndarray, rng):
    """Return ``(kind, payload, mask)`` for the configured sampling mode."""
    s = cfg.sampling
    dims = x.shape
    if s.mode == "slab":
        plan = io.load_plan(s.plan) if s.plan else SlabPlan.equispaced(dims, s.M, s.N, s.s3, s.s4)
        if not isinstance(plan, SlabPlan):
            raise ConfigError("slab mode needs a slab plan file")
        plan.validate(dims)
        return "slab", (plan, *slab_subtensors(x, plan)), slab_plan_to_mask(plan, dims)
    if s.mode == "groups":
        plan = io.load_plan(s.plan)
        if not isinstance(plan, FiberGroupPlan):
            raise ConfigError("groups mode needs a fiber-group plan file")
        mask = plan_to_mask(plan, dims)
    elif s.q is not None:
        mask = random_fiber_mask(dims, s.q, rng)
    else:
        mask = random_location_mask(dims, s.rho, rng)
    return "mask", None, mask


def run_trial(cfg: ExperimentConfig, index: int) -> TrialRecord:
    seed = cfg.master_seed + index
    rec = TrialRecord(index, seed)
    t0 = time.perf_counter()
    try:
        rng = np.random.default_rng([seed, 1])
        if cfg.sampling.mode == "external-obs":
            y, mask, dims = io.ingest_observations(cfg.sampling.observations)
            c_true = s_true = x_true = None
            if cfg.sampling.truth:
                c_true, s_true, x_true = _load_truth(cfg.sampling.truth)
            kind = "mask"
        else:
            scen = ScenarioConfig(**{**asdict(cfg.scenario), "seed": seed})
            gt = assemble_ground_truth(scen)
            c_true, s_true, x_true = gt.psd, gt.slfs, gt.map
            x = gt.map if cfg.snr_db is None else add_noise(gt.map, cfg.snr_db, rng)
            kind, slab, mask = _observe(cfg, x, rng)
            y = np.where(mask.weights > 0, x, 0.0)
        solver = cfg.solver_config(seed)
        if kind == "slab":
            plan, x1, x2 = slab
            res = bcd_solve(x1, x2, plan, solver, K=y.shape[2])
        else:
            res = bcd_solve_masked(y, mask, solver)
        rec.final_loss = res.final_loss
        rec.iterations = res.iterations
        if res.termination == "diverged":
            raise FloatingPointError("solver diverged on every restart")
        out = disaggregate_full(res.factors, y, mask.weights, c_true=c_true,
                                smoothing=cfg.smoothing, refine=cfg.refine)
        if c_true is not None and cfg.metrics.get("nae_c", True):
            rec.nae_c = nae_psd(c_true, out.psd_hat)
        if s_true is not None and cfg.metrics.get("nae_s", True):
            rec.nae_s = nae_slf(s_true, out.slfs_hat)
        if x_true is not None and cfg.metrics.get("nae_x", True):
            rec.nae_x = nae_map(x_true, out.map_hat)
    except Exception as exc:  # an aborted trial must not stop the sweep
        log.warning("trial %d aborted: %s", index, exc)
        rec = TrialRecord(index, seed, status=f"aborted: {type(exc).__name__}: {exc}")
    rec.wall_time = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# aggregation


def summarize(records: list[TrialRecord]) -> dict:
    """Median and quartiles of each metric over non-aborted trials."""
    ok = [r for r in records if not r.aborted]
    out = {"trials": len(records), "aborted": len(records) - len(ok)}
    for name in (*METRICS, "final_loss", "iterations"):
        vals = np.array([getattr(r, name) for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            out[name] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(vals.size)}
        else:
            out[name] = {"median": None, "q1": None, "q3": None, "n": 0}
    return out


def _write_trials(path: Path, records: list[TrialRecord]) -> None:
    names = [f.name for f in fields(TrialRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])


def _run_one(args):
    cfg, index = args
    return run_trial(cfg, index)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, write: bool = True) -> dict:
    """Run all trials and write ``trials.csv`` and ``summary.json``.

    Records are written in trial order whatever the completion order, so two
    runs of the same configuration differ only in the ``wall_time`` column.
    """
    work = [(cfg, t) for t in range(cfg.trials)]
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, work))
    else:
        records = [_run_one(w) for w in work]
    summary = summarize(records)
    summary["master_seed"] = cfg.master_seed
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_trials(out / "trials.csv", records)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    summary["records"] = records
    return summary
