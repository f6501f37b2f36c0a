"""
Sparse window attention and its cost
====================================

Windows whose tokens never see the mask skip attention, and alternating
blocks only read every other frame for keys and values.
"""

# %%
import numpy as np

from dualprop.cost import CostConfig, block_flops, cost_table, geometry
from dualprop.msvt import MsvtConfig, attention_stage, sparse_query_mask
from dualprop.weights import init_msvt_block

rng = np.random.default_rng(0)
cfg = MsvtConfig()
masks = np.zeros((10, 60, 108), bool)
masks[:, 20:30, 40:55] = True
sq = sparse_query_mask(masks, cfg)
print("token grid:", cfg.token_dims(60, 108), "windows:", sq.shape)
print(sq.astype(int))

# %%
w = init_msvt_block(rng, 1, 32, heads=4)
mt, nt = cfg.token_dims(60, 108)
z = rng.normal(size=(10, mt, nt, 32))
out = attention_stage(z, sq, w, cfg, block_index=0)
changed = np.abs(out - z).max(axis=(0, 3)) > 0
print("tokens touched by attention:", int(changed.sum()), "of", mt * nt)

# %% [markdown]
# The closed-form model counts one multiply-accumulate as two FLOPs.  The
# attention stages scale with the active-window fraction and the inverse
# key/value stride.

# %%
base = CostConfig()
dense, sparse = block_flops(base.dense()), block_flops(base.sparse(1 / 6, 2))
print("windows:", geometry(base)["total_windows"], "active at 1/6:", sparse.geometry["active_windows"])
print(f"dense {dense.gflops():.1f} GFLOPs, sparse {sparse.gflops():.1f} GFLOPs per block")
print(f"attention share: dense {dense.attention / dense.total:.1%}, "
      f"sparse {sparse.attention / sparse.total:.1%}")

# %%
print(cost_table())
