# %% [markdown]
# # Command-line walk-through
#
# The same pipeline through the ``tricov`` console script, using the
# shipped desk surrogate truth in ``configs/desk``.  Run from the repo root.

# %%
import json
import subprocess
import tempfile
from pathlib import Path

desk = Path("configs/desk")
work = Path(tempfile.mkdtemp())


def run(*args):
    out = subprocess.run(["tricov", *map(str, args)], capture_output=True, text=True)
    print("$ tricov", *args, "->", out.returncode)
    return out


# %%
run("simulate", "--truth", desk, "--n", 1, "--seed", 7, "--fs", 128, "--out", work / "x.kct")
print(run("fit", "--data", work / "x.kct", "--out", work / "fit").stdout)
print(run("evaluate", "--fit", work / "fit", "--truth", desk).stdout)

# %%
v = run("validate", "--data", work / "x.kct", "--fit", work / "fit", "--mode", "consecutive")
print(json.loads(v.stdout)["values"])
print(run("spectrum", "--fit", work / "fit", "--fs", 128).stdout[:200])

# %%
run("regress", "--fit", work / "fit", "--removed", "0", "--out", work / "reg")
print((work / "reg" / "regressor.csv").read_text()[:120])
