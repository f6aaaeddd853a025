"""
Wild data instead of pure unknowns
==================================

On a small discrete input space every risk is a finite sum, so the gap between
the ideal rejection risk and its wild-data surrogate can be computed exactly
and compared with pi * N_t / 2.
"""

# %%
import numpy as np

from openpu.evaluate import DiscreteToySpace, check_bounds_discrete, exhaustive_minimizer

rng = np.random.default_rng(0)
space = DiscreteToySpace.random(6, rng, pi=0.6)
print("known", space.p_known.round(3))
print("unknown", space.p_unknown.round(3))

# %%
for t in (1, 2, 3):
    f_star = exhaustive_minimizer(space, t, "u")
    rep = check_bounds_discrete(space, f_star, t)
    print(f"t={t} gap {rep.observed_gap:.4f} <= {rep.bound:.4f}   "
          f"excess {rep.excess_u:.4f}, {rep.excess_pu:.4f} <= {2 * rep.bound:.4f}")

# %% contamination pushes the surrogate minimiser towards rejecting known atoms
print(exhaustive_minimizer(space, 2, "u"))
print(exhaustive_minimizer(space, 2, "pu"))
