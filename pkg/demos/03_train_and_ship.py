"""Train a 68-parameter rule on stripes and ship it as 68 bytes of C.

Run with ``python demos/03_train_and_ship.py`` (a few minutes on one core).
"""
# %%
import shutil
import subprocess
from pathlib import Path

import numpy as np

from unca import codegen, imageio, nca, ot, quant, textures, train

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# %% [markdown]
# A small run: 48x48 grids, rollouts of 16 to 32 steps, 500 updates.

# %%
cfg = nca.make_config(2, 1, 1)
target = textures.stripes(48, 8)
tc = train.TrainConfig(n_train=500, n_batch=4, n_pool=64, n_steps_min=16, n_steps_max=32,
                       grid_size=48, learning_rate=3e-3)
oc = ot.OTConfig(n_subsample=256, patch_size=5, n_levels=3)


def progress(it, params, states):
    if (it + 1) % 100 == 0:
        print(f"iteration {it + 1}: max |state| {np.abs(states).max():.2f}")


report = train.train(cfg, target, tc, oc, rng=0, callback=progress)
losses = np.array(report.texture_loss)
print(f"texture loss: first 10 {losses[:10].mean():.1f}, last 50 {losses[-50:].mean():.1f}")
report.to_csv(out / "stripes_loss.csv")

# %% [markdown]
# The rule is size-agnostic: grow a bigger canvas than it was trained on.

# %%
big = nca.rollout(nca.seed_grid(128, 128, cfg, rng=1), report.params, cfg, 64)
imageio.write_png(out / "stripes_128.png", nca.to_rgb(big))

# %% [markdown]
# One byte per parameter. The file is the 68 code bytes plus a 17-byte header.

# %%
qm = quant.quantize(report.params, cfg)
size = quant.save_model(qm, out / "stripes.q.unca")
print(f"quantized file: {size} bytes, payload {len(qm.payload)} bytes")
deq = quant.dequantize(qm)
feats = ot.target_features(target, oc)
for name, p in [("float", report.params), ("8-bit", deq)]:
    grid = nca.rollout(nca.seed_grid(48, 48, cfg, rng=2), p, cfg, 64)
    print(f"{name:>6} rule loss: {ot.texture_loss(grid[..., :3], feats, oc, 2)[0]:.3f}")

# %% [markdown]
# The same rule as a standalone C program and as a fragment shader.

# %%
c_src = codegen.emit_c(qm)
(out / "stripes.c").write_text(c_src)
(out / "stripes.frag").write_text(codegen.emit_glsl(qm))
print(f"C source {len(c_src)} characters, {c_src.count(chr(10))} lines")
if shutil.which("gcc"):
    exe = out / "stripes_rule"
    subprocess.run(["gcc", "-O2", "-o", str(exe), str(out / "stripes.c"), "-lm"], check=True)
    ppm = subprocess.run([str(exe), "64", "64", "64", "3"], check=True, capture_output=True).stdout
    compiled = imageio.decode_ppm(ppm)
    library = nca.to_rgb(codegen.reference_rollout(qm, 64, 64, 64, 3))
    print(f"compiled program vs library: max difference {np.abs(compiled - library).max():.2e}")
    imageio.write_png(out / "stripes_from_c.png", compiled)
else:
    print("no C compiler found; skipped the compile step")
