"""Completing a radio map from random spectrum samples.

Static sensors each report ``q`` random bands per frontal column.  The masked
solver fits the LL1 model to the observed entries only, and the checker says
whether the sampling density meets the sufficient recovery conditions.

    python3 demos/02_random_fibers.py
"""
import numpy as np

from radiomap.posteval import nae_map
from radiomap.sampling import check_random_fiber, random_fiber_mask
from radiomap.solver_masked import bcd_solve_masked
from radiomap.solver_slab import SolverConfig
from radiomap.tensor_core import Ll1Factors, ll1_synthesize

dims, L, R = (64, 301, 8), 2, 2
truth = Ll1Factors.random(dims, L, R, 0)
truth = Ll1Factors(truth.A, truth.B, np.abs(truth.C))  # spectra are nonnegative
x = ll1_synthesize(truth)

# %% The checker lists every clause; q = 50 falls just short, 51 is enough.
for q in (50, 51):
    print(check_random_fiber(dims, L, R, q).table(), end="\n\n")

# %% Observe 51 of 64 entries per column and solve.
w = random_fiber_mask(dims, 51, rng=1)
y = np.where(w.weights > 0, x, 0.0)
print(f"observed {w.observed_count} of {x.size} entries")
res = bcd_solve_masked(y, w, SolverConfig(L=L, R=R, max_iters=500, rel_tol=1e-12, restarts=5))
print(f"best restart {res.restart_index}, losses", np.round(res.restart_losses, 8))
print("NAE_X on the full map", nae_map(x, ll1_synthesize(res.factors)))
