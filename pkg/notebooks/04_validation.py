# %% [markdown]
# # Epoch-subsample validation
#
# With no ground truth, refit on subsets of epochs and compare each sub-fit
# with the full fit restricted to the same epochs.

# %%
import numpy as np

from tricov.estimator import AssumptionSet, FitConfig, fit
from tricov.evaluation import run_validation, split_epochs
from tricov.simulate import sample_dataset, surrogate_truth

truth = surrogate_truth(8, 16, 64, seed=2024, refit=False)
t = sample_dataset(truth, n=1, seed=77)
a, cfg = AssumptionSet(), FitConfig()
full = fit(t, a, cfg).factors

# %%
print([len(s) for s in split_epochs(t.r, mode="consecutive")])
con = run_validation(t, full, a, cfg, mode="consecutive")
print("consecutive quarters:", np.round(con["values"], 4))

# %%
rnd = run_validation(t, full, a, cfg, mode="random", repeats=3, seed=7)
print("random quarters: mean", round(rnd["mean"], 4), "max", round(max(rnd["values"]), 4))
