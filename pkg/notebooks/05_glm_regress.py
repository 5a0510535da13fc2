# %% [markdown]
# # Epoch regressors and voxelwise F-tests
#
# The estimated epoch variances form a regressor.  It is lagged, combined
# with confounders and tested voxel by voxel with a partial F-test; the
# Benjamini-Hochberg procedure controls the false discovery rate.

# %%
import numpy as np

from tricov.estimator import fit
from tricov.glm import bh_fdr, build_design, delta_regressor, f_tests, spectrum_from_psi
from tricov.simulate import sample_dataset, surrogate_truth

truth = surrogate_truth(6, 16, 120, fs=128.0, seed=5, refit=False)
res = fit(sample_dataset(truth, seed=2))
reg = delta_regressor(res.factors.delta, removed=[0, 57])
print("interpolated epochs:", np.flatnonzero(reg.interpolated_mask))

# %%
rng = np.random.default_rng(9)
r, voxels = reg.values.size, 500
conf = rng.standard_normal((r, 2))
design = build_design(reg.values, shifts=(0, 1, 2), confounders=conf)
y = conf @ rng.standard_normal((2, voxels)) + rng.standard_normal((r, voxels))
y[:, :50] += 0.8 * np.outer(design.matrix[:, design.interest_columns[0]], np.ones(50))
f, p, df1, df2 = f_tests(y, design)
sig = bh_fdr(p, 0.01)
print(f"df = ({df1}, {df2});", sig[:50].sum(), "of 50 signal voxels and", sig[50:].sum(), "null voxels flagged")

# %%
freqs, power = spectrum_from_psi(res.factors.psi, fs=128.0)
print("spectral peak at", freqs[np.argmax(power)], "Hz")
