"""Standalone C and GLSL sources for a quantized rule.

The C program seeds its grid with a xorshift32 generator. ``xorshift_grid``
reproduces that stream exactly, so a library rollout can be compared with
the compiled program cell by cell.
"""

from __future__ import annotations

from string import Template

import numpy as np

from .nca import Params, rollout
from .quant import QuantizedModel, dequantize

SEED_MIX = 0x9E3779B9


def _xorshift_state(seed: int) -> int:
    s = (int(seed) ^ SEED_MIX) & 0xFFFFFFFF
    return s or 1


def xorshift_grid(height: int, width: int, channels: int, seed: int) -> np.ndarray:
    """Uniform [-0.5, 0.5) noise from the emitted program's generator, shape (H, W, C)."""
    s = _xorshift_state(seed)
    out = np.empty(height * width * channels)
    for i in range(out.size):
        s ^= (s << 13) & 0xFFFFFFFF
        s ^= s >> 17
        s ^= (s << 5) & 0xFFFFFFFF
        out[i] = (s >> 8) / 16777216.0 - 0.5
    return out.reshape(height, width, channels)


def reference_rollout(qm: QuantizedModel, height: int, width: int, n_steps: int, seed: int,
                      dtype=np.float64) -> np.ndarray:
    """What the compiled program computes, run through the library."""
    params = dequantize(qm)
    params = Params(params.w.astype(dtype), params.b.astype(dtype))
    grid = xorshift_grid(height, width, qm.config.channels, seed).astype(dtype)
    return rollout(grid, params, qm.config, n_steps)


def _int_list(codes, per_line=24, indent="    "):
    flat = [str(int(v)) for v in np.asarray(codes).ravel()]
    lines = [", ".join(flat[i:i + per_line]) for i in range(0, len(flat), per_line)]
    return (",\n" + indent).join(lines)


def _float_literal(x: float) -> str:
    # 9 significant digits round-trip any float32
    text = f"{float(np.float32(x)):.9g}"
    if "e" not in text and "." not in text:
        text += ".0"
    return text


C_TEMPLATE = Template(r"""/* Cellular texture generator: $n_params one-byte parameters.
 * usage: $$0 [width height steps seed] > out.ppm
 * Writes a 16-bit binary PPM of the clamped RGB channels.
 */
#include <stdio.h>
#include <stdlib.h>
#include <math.h>

#define C $channels
#define N_LAP $n_lap
#define N_X $n_x

static const signed char WQ[4 * C * C] = {
    $w_codes
};
static const signed char BQ[C] = {
    $b_codes
};
static const float W_SCALE = ${w_scale}f;
static const float B_SCALE = ${b_scale}f;

static const float KERNELS[3][9] = {
    {1, 2, 1, 2, -12, 2, 1, 2, 1},
    {-1, 0, 1, -2, 0, 2, -1, 0, 1},
    {-1, -2, -1, 0, 0, 0, 1, 2, 1},
};

static float W[4 * C * C], B[C];
static unsigned int rng;

static float uniform_noise(void) {
    rng ^= rng << 13;
    rng ^= rng >> 17;
    rng ^= rng << 5;
    return (float)(rng >> 8) / 16777216.0f - 0.5f;
}

static void step(const float *s, float *out, int w, int h) {
    float y[4 * C];
    for (int r = 0; r < h; r++) {
        for (int q = 0; q < w; q++) {
            const float *cell = s + (r * w + q) * C;
            for (int c = 0; c < C; c++) {
                const float *k = KERNELS[c < N_LAP ? 0 : (c < N_LAP + N_X ? 1 : 2)];
                float f = 0.0f;
                for (int i = 0; i < 9; i++) {
                    int rr = (r + i / 3 - 1 + h) % h, qq = (q + i % 3 - 1 + w) % w;
                    f += k[i] * s[(rr * w + qq) * C + c];
                }
                y[c] = cell[c];
                y[C + c] = f;
                y[2 * C + c] = fabsf(cell[c]);
                y[3 * C + c] = fabsf(f);
            }
            for (int j = 0; j < C; j++) {
                float acc = 0.0f;
                for (int i = 0; i < 4 * C; i++) acc += y[i] * W[i * C + j];
                out[(r * w + q) * C + j] = cell[j] + acc + B[j];
            }
        }
    }
}

int main(int argc, char **argv) {
    int w = argc > 1 ? atoi(argv[1]) : 128;
    int h = argc > 2 ? atoi(argv[2]) : 128;
    int steps = argc > 3 ? atoi(argv[3]) : 64;
    unsigned int seed = argc > 4 ? (unsigned int)strtoul(argv[4], NULL, 10) : 0u;
    if (w < 3 || h < 3 || steps < 0) {
        fprintf(stderr, "need width, height >= 3 and steps >= 0\n");
        return 1;
    }
    for (int i = 0; i < 4 * C * C; i++) W[i] = WQ[i] * W_SCALE;
    for (int i = 0; i < C; i++) B[i] = BQ[i] * B_SCALE;
    float *a = malloc(sizeof(float) * w * h * C), *b = malloc(sizeof(float) * w * h * C);
    if (!a || !b) return 2;
    rng = (seed ^ ${seed_mix}u) ? (seed ^ ${seed_mix}u) : 1u;
    for (int i = 0; i < w * h * C; i++) a[i] = uniform_noise();
    for (int t = 0; t < steps; t++) {
        float *tmp;
        step(a, b, w, h);
        tmp = a; a = b; b = tmp;
    }
    printf("P6\n%d %d\n65535\n", w, h);
    for (int i = 0; i < w * h; i++) {
        for (int c = 0; c < 3; c++) {
            float v = a[i * C + c];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            unsigned int u = (unsigned int)(v * 65535.0f + 0.5f);
            putchar((int)(u >> 8));
            putchar((int)(u & 255));
        }
    }
    free(a);
    free(b);
    return 0;
}
""")


def emit_c(qm: QuantizedModel) -> str:
    cfg = qm.config
    return C_TEMPLATE.substitute(
        n_params=cfg.n_params,
        channels=cfg.channels,
        n_lap=cfg.n_lap,
        n_x=cfg.n_x,
        w_codes=_int_list(qm.w_codes),
        b_codes=_int_list(qm.b_codes),
        w_scale=_float_literal(qm.w_scale),
        b_scale=_float_literal(qm.b_scale),
        seed_mix=f"0x{SEED_MIX:08X}",
    )


GLSL_TEMPLATE = Template(r"""#version 300 es
// One cellular automaton update. The state texture is $planes plane(s) of
// RGBA side by side, each u_grid.x texels wide; plane k holds channels
// 4k..4k+3. Render into a float target of the same size.
precision highp float;
precision highp int;

#define C $channels
#define N_LAP $n_lap
#define N_X $n_x

uniform sampler2D u_state;
uniform ivec2 u_grid;
out vec4 o_state;

const int WQ[4 * C * C] = int[](
    $w_codes
);
const int BQ[C] = int[](
    $b_codes
);
const float W_SCALE = $w_scale;
const float B_SCALE = $b_scale;

const float LAP[9] = float[](1.0, 2.0, 1.0, 2.0, -12.0, 2.0, 1.0, 2.0, 1.0);
const float SOBX[9] = float[](-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0);
const float SOBY[9] = float[](-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0);

float cell(ivec2 pos, int ch) {
    pos = (pos % u_grid + u_grid) % u_grid;
    vec4 t = texelFetch(u_state, ivec2(pos.x + (ch / 4) * u_grid.x, pos.y), 0);
    return t[ch % 4];
}

float tap(int ch, int i) {
    if (ch < N_LAP) return LAP[i];
    if (ch < N_LAP + N_X) return SOBX[i];
    return SOBY[i];
}

void main() {
    ivec2 frag = ivec2(gl_FragCoord.xy);
    int plane = frag.x / u_grid.x;
    ivec2 pos = ivec2(frag.x - plane * u_grid.x, frag.y);
    float y[4 * C];
    for (int c = 0; c < C; c++) {
        float f = 0.0;
        for (int i = 0; i < 9; i++) {
            f += tap(c, i) * cell(pos + ivec2(i % 3 - 1, i / 3 - 1), c);
        }
        float s = cell(pos, c);
        y[c] = s;
        y[C + c] = f;
        y[2 * C + c] = abs(s);
        y[3 * C + c] = abs(f);
    }
    vec4 result = vec4(0.0);
    for (int j = 0; j < 4; j++) {
        int ch = plane * 4 + j;
        if (ch >= C) break;
        float acc = cell(pos, ch) + float(BQ[ch]) * B_SCALE;
        for (int i = 0; i < 4 * C; i++) {
            acc += y[i] * float(WQ[i * C + ch]) * W_SCALE;
        }
        result[j] = acc;
    }
    o_state = result;
}
""")


def emit_glsl(qm: QuantizedModel) -> str:
    cfg = qm.config
    return GLSL_TEMPLATE.substitute(
        planes=-(-cfg.channels // 4),
        channels=cfg.channels,
        n_lap=cfg.n_lap,
        n_x=cfg.n_x,
        w_codes=_int_list(qm.w_codes),
        b_codes=_int_list(qm.b_codes),
        w_scale=_float_literal(qm.w_scale),
        b_scale=_float_literal(qm.b_scale),
    )
