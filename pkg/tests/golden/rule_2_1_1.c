/* Cellular texture generator: 68 one-byte parameters.
 * usage: $0 [width height steps seed] > out.ppm
 * Writes a 16-bit binary PPM of the clamped RGB channels.
 */
#include <stdio.h>
#include <stdlib.h>
#include <math.h>

#define C 4
#define N_LAP 2
#define N_X 1

static const signed char WQ[4 * C * C] = {
    -111, -2, 12, 2, -10, -106, 25, 18, -13, -24, -125, 1, -44, -4, -24, -127, -1, -1, 1, 2, 0, 3, -1, 1,
    2, 0, -1, -2, -1, 0, -2, 0, -3, 10, 4, 7, -12, -2, 15, 28, -24, 29, 25, 15, 5, -6, 28, 37,
    3, 2, 1, -2, 0, 1, -2, 1, 1, 1, -2, -1, -1, -2, 3, -1
};
static const signed char BQ[C] = {
    83, 62, 127, 118
};
static const float W_SCALE = 0.00265049888f;
static const float B_SCALE = 0.0014108161f;

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
    rng = (seed ^ 0x9E3779B9u) ? (seed ^ 0x9E3779B9u) : 1u;
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
