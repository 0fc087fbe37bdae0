"""Comparing textures by their patches, then painting with the comparison.

Run with ``python demos/02_texture_loss.py`` (several minutes on one core).
"""
# %%
from pathlib import Path

import numpy as np

from unca import imageio, ot, textures, train

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# %% [markdown]
# A texture is described by the cloud of all its small patches, taken at a
# few scales of a sharpened image pyramid. Two images are close when their
# patch clouds can be matched cheaply.

# %%
target = textures.stripes(48, 8)
feats = ot.extract_features(target, n_levels=3, patch_size=5, with_scales=True)
for level, rows in enumerate(feats.levels):
    print(f"level {level}: image {feats.shapes[level][:2]}, {rows.shape[0]} patches of {rows.shape[1]} values")

# %% [markdown]
# The divergence ignores where patches sit. It only grows as the clouds
# themselves drift apart. Each side is a random subset of its patches, so even
# the target against itself leaves a small floor; noise sits far above it.

# %%
cfg = ot.OTConfig(patch_size=5, n_levels=3, n_subsample=512)
tf = ot.target_features(target, cfg)
shifted = np.roll(target, (5, 11), axis=(0, 1))
noise = np.random.default_rng(0).uniform(size=target.shape)
for name, img in [("itself", target), ("shifted copy", shifted), ("noise", noise)]:
    print(f"{name:>12}: {ot.texture_loss(img, tf, cfg, 0)[0]:.4f}")

# %% [markdown]
# Gradient steps on the pixels alone already pull noise toward the target's
# patch statistics. Patch size and pyramid depth decide how large the
# features that emerge can be.

# %%
blobs = textures.blobs(112, feature=6.0, seed=0)
imageio.write_png(out / "blobs_target.png", blobs)
for k, levels in [(3, 3), (7, 5)]:
    history = []
    img = train.optimize_pixels(blobs, ot.OTConfig(patch_size=k, n_levels=levels, n_subsample=512),
                                iterations=200, learning_rate=1e-2, rng=0, history=history)
    imageio.write_png(out / f"pixelopt_K{k}_L{levels}.png", img)
    print(f"K={k} levels={levels}: loss {history[0]:.2f} -> {history[-1]:.2f}, "
          f"feature length {textures.autocorrelation_length(img):.2f}px "
          f"(target {textures.autocorrelation_length(blobs):.2f}px)")
