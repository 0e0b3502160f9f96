"""Disaggregating a radio map from two sets of moving-sensor slabs.

Horizontal sensors drive along a few rows and record some bands, vertical
sensors do the same along a few columns.  The coupled LL1 solver fits shared
factors to both and hands back one spatial loss field and one spectrum per
emitter.

Run from the repository root::

    python3 demos/01_slab_disaggregation.py
"""
from pathlib import Path

import numpy as np

from radiomap.cli import write_pgm
from radiomap.posteval import disaggregate_full, nae_map, nae_psd, nae_slf
from radiomap.sampling import SlabPlan, check_slab_identifiability, slab_plan_to_mask, slab_subtensors
from radiomap.scenario import ScenarioConfig, assemble_ground_truth
from radiomap.solver_slab import SolverConfig, bcd_solve

# %% A scene whose SLFs are exactly rank 3, so the LL1 model holds.
dims = (48, 48, 32)
scen = ScenarioConfig(I=dims[0], J=dims[1], K=dims[2], R=2, slf_rank=3, seed=7)
gt = assemble_ground_truth(scen)
print("map shape", gt.map.shape, "emitters", gt.R)

# %% Eight horizontal and six vertical routes, every band on both.
plan = SlabPlan.equispaced(dims, 8, 6)
print(check_slab_identifiability(plan, dims, L=3, R=2).table())
x1, x2 = slab_subtensors(gt.map, plan)
print("observed fraction", slab_plan_to_mask(plan, dims).observed_count / gt.map.size)

# %% Fit with a few restarts; extrapolation speeds up the slow tail.
cfg = SolverConfig(L=3, R=2, max_iters=1000, rel_tol=1e-10, restarts=3, extrapolate=True)
res = bcd_solve(x1, x2, plan, cfg, K=dims[2])
print(f"{res.termination} after {res.iterations} iterations, loss {res.final_loss:.3g}")

# %% Match estimated emitters to the truth and score them.
mask = slab_plan_to_mask(plan, dims).weights
y = np.where(mask > 0, gt.map, 0.0)
out = disaggregate_full(res.factors, y, mask, c_true=gt.psd, refine=False)
print("NAE_C", nae_psd(gt.psd, out.psd_hat))
print("NAE_S", nae_slf(gt.slfs, out.slfs_hat))
print("NAE_X", nae_map(gt.map, out.map_hat))

# %% Write the recovered fields as grey-scale images next to the truth.
folder = Path("demo-output")
folder.mkdir(exist_ok=True)
for r, (s_true, s_hat) in enumerate(zip(gt.slfs, out.slfs_hat), 1):
    write_pgm(folder / f"slf{r}_true.pgm", s_true)
    write_pgm(folder / f"slf{r}_est.pgm", s_hat)
print("images in", folder.resolve())
