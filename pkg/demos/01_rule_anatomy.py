"""A cellular rule from the inside.

Run with ``python demos/01_rule_anatomy.py``. Prints shapes and numbers as it
goes and writes a couple of PNGs next to this file under ``output/``.
"""
# %%
from pathlib import Path

import numpy as np

from unca import imageio, nca

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# %% [markdown]
# Every cell carries C numbers. The first three are its color, the rest are
# private memory. Each channel is filtered by exactly one fixed 3x3 kernel, so
# the model size is set by how many channels get which kernel.

# %%
for filters in [(2, 1, 1), (2, 2, 2), (4, 2, 2), (4, 4, 4)]:
    cfg = nca.make_config(*filters)
    print(f"filters {filters}: {cfg.channels:2d} channels, {cfg.n_params:3d} parameters")

cfg = nca.make_config(2, 1, 1)
print(nca.perception_kernels(cfg))

# %% [markdown]
# What a cell sees: its own state plus the filtered state, 2C numbers. The
# rule then looks at those values and their magnitudes (4C numbers) and adds
# a learned linear combination back onto the state.

# %%
grid = nca.seed_grid(32, 32, cfg, rng=0)
seen = nca.perceive(grid, cfg)
print("grid", grid.shape, "-> perception", seen.shape, "-> rule input", nca.expand(seen).shape)

# %% [markdown]
# With all-zero weights the rule does nothing, whatever the number of steps.

# %%
zero = nca.Params.zeros(cfg)
assert np.array_equal(nca.rollout(grid, zero, cfg, 50), grid)

# %% [markdown]
# A hand-written rule: pull every channel toward its neighbours (the
# Laplacian channels diffuse) and shrink everything a little. Noise turns
# into smooth blobs.

# %%
rule = nca.Params.zeros(cfg)
c = cfg.channels
for j in range(c):
    rule.w[j, j] = -0.02               # mild decay of the raw state
rule.w[c + 0, 0] = 0.05                # channel 0 follows its Laplacian
rule.w[c + 1, 1] = 0.05
rule.w[c + 0, 2] = 0.05                # blue borrows red's Laplacian
rule.b[:] = 0.01
frames = nca.rollout(grid, rule, cfg, 60, trajectory=True)
for k in (0, 20, 60):
    rgb = nca.to_rgb(frames[k] + 0.5)
    imageio.write_png(out / f"anatomy_step{k:02d}.png", rgb)
    print(f"step {k:2d}: RGB std {frames[k][..., :3].std():.4f}")
