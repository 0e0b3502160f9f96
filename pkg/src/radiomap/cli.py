"""Command-line front end.

Subcommands::

    simulate    draw a scenario and export C.csv, S_<r>.csv and X.tns
    sample      turn a full tensor into an observation file
    solve-slab  fit factors to two slab observations
    solve-mask  fit factors to an observation file
    eval        NAE_C, NAE_S, NAE_X of an estimate against a truth folder
    check       identifiability report for a plan (exit 0 satisfied, 1 not)
    mc          Monte-Carlo sweep from an experiment config
    render      PGM heatmap of a CSV matrix
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .experiment import ConfigError, ExperimentConfig, run_experiment
from .posteval import disaggregate_full, nae_map, nae_psd, nae_slf, reconstruct_map
from .sampling import (
    FiberGroupPlan,
    FiberMask,
    PlanError,
    SlabPlan,
    check_anchor_identifiability,
    check_group_identifiability,
    check_ll1_uniqueness,
    check_random_fiber,
    check_slab_identifiability,
    plan_to_mask,
    random_fiber_mask,
    random_location_mask,
    slab_plan_to_mask,
    slab_subtensors,
)
from .scenario import ScenarioConfig, add_noise, assemble_ground_truth
from .solver_masked import bcd_solve_masked
from .solver_slab import SolverConfig, bcd_solve
from .tensor_core import Ll1Factors

USAGE_ERROR = 2


class UsageError(Exception):
    pass


def _scenario_from_args(args) -> ScenarioConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - set(ScenarioConfig.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("I", "J", "K", "R", "sigma", "xc", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    return ScenarioConfig(**data)


def cmd_simulate(args) -> int:
    cfg = _scenario_from_args(args)
    gt = assemble_ground_truth(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x = gt.map
    if args.snr is not None:
        x = add_noise(x, args.snr, np.random.default_rng([cfg.seed, 1]))
    io.write_matrix(out / "C.csv", gt.psd)
    for r, s in enumerate(gt.slfs, 1):
        io.write_matrix(out / f"S_{r}.csv", s)
    io.write_tensor(out / "X.tns", gt.map)
    if args.snr is not None:
        io.write_tensor(out / "X_noisy.tns", x)
    meta = {"scenario": cfg.to_dict(), "snr_db": args.snr,
            "emitters": [asdict(e) for e in gt.emitters]}
    (out / "scenario.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote scenario with R={gt.R} to {out}")
    return 0


def _mask_from_args(args, dims) -> FiberMask:
    rng = np.random.default_rng(args.seed)
    if args.plan:
        plan = io.load_plan(args.plan)
        plan.validate(dims)
        return slab_plan_to_mask(plan, dims) if isinstance(plan, SlabPlan) else plan_to_mask(plan, dims)
    if args.q is not None:
        return random_fiber_mask(dims, args.q, rng)
    if args.rho is not None:
        return random_location_mask(dims, args.rho, rng)
    raise UsageError("give one of --plan, --q or --rho")


def cmd_sample(args) -> int:
    x = io.read_tensor(args.tensor)
    mask = _mask_from_args(args, x.shape)
    io.write_observations(args.out, x, mask)
    if args.slabs:
        plan = io.load_plan(args.plan) if args.plan else None
        if not isinstance(plan, SlabPlan):
            raise UsageError("--slabs needs a slab plan")
        x1, x2 = slab_subtensors(x, plan)
        folder = Path(args.slabs)
        folder.mkdir(parents=True, exist_ok=True)
        io.write_tensor(folder / "x1.tns", x1)
        io.write_tensor(folder / "x2.tns", x2)
    print(f"wrote {mask.observed_count} observations to {args.out}")
    return 0


def _solver_config(args) -> SolverConfig:
    """Settings from ``--config`` (JSON), overridden by explicit flags."""
    opts = {}
    if args.config:
        opts = json.loads(Path(args.config).read_text())
        unknown = set(opts) - set(SolverConfig.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown solver keys: {sorted(unknown)}")
    for key in ("L", "R", "max_iters", "rel_tol", "restarts", "seed"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    if args.lam is not None:
        opts["lam"] = args.lam if len(args.lam) == 3 else args.lam[0]
    if "L" not in opts or "R" not in opts:
        raise UsageError("L and R are required (flags or --config)")
    try:
        return SolverConfig(**opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad solver settings: {exc}") from None


def _write_result(out, res, extra: dict) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    f = res.factors
    io.write_matrix(out / "A.csv", f.A_mat)
    io.write_matrix(out / "B.csv", f.B_mat)
    io.write_matrix(out / "C.csv", f.C)
    io.write_matrix(out / "loss.csv", np.asarray(res.loss_trace)[:, None], header=["loss"])
    meta = {
        "L": f.ranks[0], "R": f.R, "dims": list(f.dims),
        "iterations": res.iterations, "termination": res.termination,
        "final_loss": res.final_loss, "restart_index": res.restart_index,
        "restart_losses": res.restart_losses, "data_scale": res.data_scale,
        "events": res.events, **extra,
    }
    (out / "result.json").write_text(json.dumps(meta, indent=2))
    print(f"{res.termination} after {res.iterations} iterations, loss {res.final_loss:.6g}")


def cmd_solve_slab(args) -> int:
    plan = io.load_plan(args.plan)
    if not isinstance(plan, SlabPlan):
        raise UsageError("solve-slab needs a slab plan (s1, s2, s3, s4)")
    if args.tensor:
        x = io.read_tensor(args.tensor)
        plan.validate(x.shape)
        x1, x2 = slab_subtensors(x, plan)
        K = x.shape[2]
    elif args.x1 and args.x2:
        x1, x2 = io.read_tensor(args.x1), io.read_tensor(args.x2)
        K = args.K
    else:
        raise UsageError("give --x1 and --x2, or --tensor")
    try:
        res = bcd_solve(x1, x2, plan, _solver_config(args), K=K)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_result(args.out, res, {"plan": plan.to_dict()})
    return 0


def cmd_solve_mask(args) -> int:
    y, mask, dims = io.ingest_observations(args.obs)
    res = bcd_solve_masked(y, mask, _solver_config(args))
    _write_result(args.out, res, {"observed": mask.observed_count})
    return 0


def _load_estimate(path) -> Ll1Factors:
    path = Path(path)
    meta = json.loads((path / "result.json").read_text())
    return Ll1Factors.from_blocks(io.read_matrix(path / "A.csv"), io.read_matrix(path / "B.csv"),
                                  io.read_matrix(path / "C.csv"), meta["L"])


def cmd_eval(args) -> int:
    truth = Path(args.truth)
    c_true = io.read_matrix(truth / "C.csv")
    s_true = [io.read_matrix(truth / f"S_{r}.csv") for r in range(1, c_true.shape[1] + 1)]
    x_true = io.read_tensor(truth / "X.tns")
    factors = _load_estimate(args.est)
    if args.obs:
        y, mask, _ = io.ingest_observations(args.obs)
        w = mask.weights
    else:
        y, w = np.zeros(factors.dims), np.zeros(factors.dims)
    out = disaggregate_full(factors, y, w, c_true=c_true, smoothing=args.smoothing,
                            refine=bool(args.obs))
    row = (nae_psd(c_true, out.psd_hat), nae_slf(s_true, out.slfs_hat),
           nae_map(x_true, out.map_hat))
    if not args.no_header:
        print("nae_c,nae_s,nae_x")
    print(",".join(f"{v:.6g}" for v in row))
    return 0


def cmd_check(args) -> int:
    dims = tuple(args.dims)
    if args.q is not None:
        rep = check_random_fiber(dims, args.L, args.R, args.q, args.epsilon)
    elif args.plan:
        plan = io.load_plan(args.plan)
        if isinstance(plan, SlabPlan):
            rep = check_slab_identifiability(plan, dims, args.L, args.R)
        elif args.anchor:
            rep = check_anchor_identifiability(plan, dims, args.L, args.R)
        else:
            rep = check_group_identifiability(plan, dims, args.L, args.R)
    else:
        rep = check_ll1_uniqueness(dims, args.L, args.R)
    print(rep.table())
    return 0 if rep.satisfied else 1


def cmd_mc(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if os.environ.get("RADIOMAP_SEED"):
        try:
            cfg.master_seed = int(os.environ["RADIOMAP_SEED"])
        except ValueError:
            raise UsageError("RADIOMAP_SEED must be an integer") from None
    if args.out:
        cfg.output_dir = args.out
    summary = run_experiment(cfg, jobs=args.jobs)
    summary.pop("records")
    for name in ("nae_c", "nae_s", "nae_x"):
        med = summary[name]["median"]
        print(f"median {name}: {'nan' if med is None else f'{med:.4g}'}")
    print(f"{summary['trials']} trials, {summary['aborted']} aborted; output in {cfg.output_dir}")
    return 0


def write_pgm(path, m: np.ndarray) -> None:
    """8-bit binary PGM of ``m`` scaled so its minimum is black and maximum white."""
    m = np.asarray(m, dtype=float)
    lo, hi = np.nanmin(m), np.nanmax(m)
    span = hi - lo if hi > lo else 1.0
    img = np.round(255 * (np.nan_to_num(m, nan=lo) - lo) / span).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_render(args) -> int:
    write_pgm(args.out, io.read_matrix(args.matrix))
    return 0


def _add_solver_args(p) -> None:
    p.add_argument("--config", help="solver settings JSON (L, R, lam, max_iters, ...)")
    p.add_argument("--L", type=int, help="rank of each SLF")
    p.add_argument("--R", type=int, help="number of emitters")
    p.add_argument("--lam", type=float, nargs="+", help="one or three ridge weights (default 1e-2)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output folder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radiomap", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic scenario")
    p.add_argument("--config", help="scenario JSON")
    for key, typ in (("I", int), ("J", int), ("K", int), ("R", int), ("sigma", float),
                     ("xc", float), ("seed", int)):
        p.add_argument(f"--{key}", type=typ)
    p.add_argument("--snr", type=float, help="also write X_noisy.tns at this SNR (dB)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="write observations of a tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--plan", help="slab or group plan JSON")
    p.add_argument("--q", type=int, help="random bands per location")
    p.add_argument("--rho", type=float, help="fraction of locations with full spectra")
    p.add_argument("--slabs", help="with a slab plan, also write x1.tns and x2.tns here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve-slab", help="coupled slab decomposition")
    p.add_argument("--x1", help="horizontal slabs X(s1, :, s3) as a tensor file")
    p.add_argument("--x2", help="vertical slabs X(:, s2, s4) as a tensor file")
    p.add_argument("--K", type=int, help="band count when s3 | s4 misses the last bands")
    p.add_argument("--tensor", help="full tensor to slice with the plan instead of --x1/--x2")
    p.add_argument("--plan", required=True)
    _add_solver_args(p)
    p.set_defaults(func=cmd_solve_slab)

    p = sub.add_parser("solve-mask", help="masked decomposition of an observation file")
    p.add_argument("--obs", required=True)
    _add_solver_args(p)
    p.set_defaults(func=cmd_solve_mask)

    p = sub.add_parser("eval", help="error metrics against a truth folder")
    p.add_argument("--truth", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--obs", help="observations used for SLF refinement")
    p.add_argument("--smoothing", type=float, default=1e-3)
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="identifiability report")
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("I", "J", "K"))
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--plan", help="slab or group plan JSON")
    p.add_argument("--anchor", action="store_true", help="use the anchor-group condition")
    p.add_argument("--q", type=int, help="random-fiber samples per fiber")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("mc", help="Monte-Carlo experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="override output_dir")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("render", help="PGM heatmap of a CSV matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, PlanError, io.ParseError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"radiomap {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
