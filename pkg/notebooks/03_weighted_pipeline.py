"""
Weighted mode with a random archive
===================================

No trained weights ship with the package.  A randomly initialised archive
still exercises every stage: recurrent flow completion, feature propagation,
the transformer blocks and the decoder.  The output inside the holes is
noise, but the plumbing, shapes and compositing can be checked.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from dualprop import io
from dualprop.cli import demo_dir
from dualprop.config import PipelineConfig
from dualprop.pipeline import random_archive, run_pipeline

seq = io.read_sequence(demo_dir())
print("demo frames:", seq["frames"].shape, "masked:", int(seq["masks"].sum()))

# %%
cfg = PipelineConfig(mode="weighted", channels=16, token_channels=32, num_blocks=2,
                     flow_channels=8)
arrays = random_archive(cfg, seed=0)
print(len(arrays), "arrays,", sum(a.size for a in arrays.values()), "parameters")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "weights.bin"
    io.write_archive(path, arrays)
    arrays = io.read_archive(path)

# %%
out, diag = run_pipeline(seq["frames"], seq["masks"], seq["flows_fwd"], seq["flows_bwd"],
                         cfg, arrays)
print("flow completion:", diag["flow_completion"])
print("active windows per clip and block:", diag["active_windows"], "of", diag["total_windows"])
print("unmasked pixels kept:", np.array_equal(out[~seq["masks"]], seq["frames"][~seq["masks"]]))
print("cost:", {k: round(v, 3) for k, v in diag["cost"].items()})
