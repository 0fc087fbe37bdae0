"""Patch-based optimal transport texture loss.

An image is summarized as the set of all KxK patches of every level of a
sharpened Gaussian pyramid. Two images are compared by an entropic OT
divergence between (subsampled) patch sets, level by level. All the image
operators are linear, so the gradient with respect to the image is obtained
by running their adjoints in reverse.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class SinkhornError(ArithmeticError):
    pass


@dataclass
class OTConfig:
    """Loss settings.

    ``epsilon`` is relative to a cost scale when ``relative`` is set (the
    mean pairwise squared distance of the target patches inside
    ``texture_loss``, the mean cross cost otherwise).
    """

    epsilon: float = 0.05
    relative: bool = True
    max_iters: int = 200
    tolerance: float = 1e-6
    n_subsample: int = 2048
    debiased: bool = True
    patch_size: int = 5
    n_levels: int = 4

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_subsample < 2:
            raise ValueError("n_subsample must be >= 2")
        if self.patch_size < 1 or self.n_levels < 1:
            raise ValueError("patch_size and n_levels must be >= 1")


# -- linear image operators -------------------------------------------------

def _blur_axis0(x):
    n = x.shape[0]
    xp = np.pad(x, [(2, 2)] + [(0, 0)] * (x.ndim - 1), mode="reflect")
    out = BINOMIAL5[0] * xp[0:n]
    for k in range(1, 5):
        out = out + BINOMIAL5[k] * xp[k:k + n]
    return out


def _blur_axis0_adjoint(g):
    n = g.shape[0]
    gp = np.zeros((n + 4,) + g.shape[1:], dtype=g.dtype)
    for k in range(5):
        gp[k:k + n] += BINOMIAL5[k] * g
    out = gp[2:n + 2].copy()
    # fold the reflected border back onto the samples it was copied from
    out[2] += gp[0]
    out[1] += gp[1]
    out[n - 2] += gp[n + 2]
    out[n - 3] += gp[n + 3]
    return out


def _check_blur_size(image):
    if image.shape[0] < 3 or image.shape[1] < 3:
        raise ValueError(f"image {image.shape[:2]} too small for the 5-tap blur")


def gaussian_blur5(image: np.ndarray) -> np.ndarray:
    """Separable [1,4,6,4,1]/16 blur over the first two axes, reflect borders."""
    _check_blur_size(image)
    out = _blur_axis0(image)
    return np.swapaxes(_blur_axis0(np.swapaxes(out, 0, 1)), 0, 1)


def gaussian_blur5_adjoint(g: np.ndarray) -> np.ndarray:
    _check_blur_size(g)
    out = np.swapaxes(_blur_axis0_adjoint(np.swapaxes(g, 0, 1)), 0, 1)
    return _blur_axis0_adjoint(out)


def sharpen(image: np.ndarray) -> np.ndarray:
    """Unsharp mask ``I + 2 (I - blur(I))``; not clamped."""
    return image + 2.0 * (image - gaussian_blur5(image))


def sharpen_adjoint(g: np.ndarray) -> np.ndarray:
    return g + 2.0 * (g - gaussian_blur5_adjoint(g))


def downscale2(image: np.ndarray) -> np.ndarray:
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ValueError("image too small to downscale")
    return gaussian_blur5(image)[::2, ::2]


def downscale2_adjoint(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of ``downscale2`` for an input image of the given shape."""
    up = np.zeros(tuple(shape), dtype=g.dtype)
    up[::2, ::2] = g
    return gaussian_blur5_adjoint(up)


def patchify(image: np.ndarray, k: int) -> np.ndarray:
    """All overlapping KxK patches as rows, flattened in (row, col, channel) order."""
    h, w, ch = image.shape
    win = sliding_window_view(image, (k, k), axis=(0, 1))  # (h', w', ch, k, k)
    return win.transpose(0, 1, 3, 4, 2).reshape(-1, k * k * ch)


def patchify_adjoint(rows: np.ndarray, shape, k: int) -> np.ndarray:
    h, w, ch = shape
    ph, pw = h - k + 1, w - k + 1
    r = rows.reshape(ph, pw, k, k, ch)
    out = np.zeros(shape, dtype=rows.dtype)
    for di in range(k):
        for dj in range(k):
            out[di:di + ph, dj:dj + pw] += r[:, :, di, dj]
    return out


# -- feature pyramid --------------------------------------------------------

@dataclass
class PatchFeatures:
    """Per-level patch matrices of one image.

    ``scales[l]`` is the mean pairwise squared distance between the rows of
    level l, used to make the entropic regularization scale-free.
    """

    levels: list
    patch_size: int
    n_levels: int
    shapes: list
    scales: list = field(default_factory=list)


def pyramid_shapes(shape, n_levels: int, patch_size: int) -> list:
    """Image shapes of each pyramid level; raises if the pyramid runs out."""
    h, w = shape[0], shape[1]
    rest = tuple(shape[2:])
    shapes = []
    for level in range(n_levels):
        if min(h, w) < max(patch_size, 3):
            raise ValueError(
                f"pyramid exhausted at level {level}: {h}x{w} image, patch size {patch_size}, "
                f"{n_levels} levels requested for a {shape[0]}x{shape[1]} input"
            )
        shapes.append((h, w) + rest)
        h, w = (h + 1) // 2, (w + 1) // 2
    return shapes


def _mean_sq_distance(rows):
    # mean over all ordered pairs (i, j) of |r_i - r_j|^2
    return float(2.0 * rows.var(axis=0).sum())


def extract_features(image: np.ndarray, n_levels: int, patch_size: int,
                     with_scales: bool = False) -> PatchFeatures:
    shapes = pyramid_shapes(image.shape, n_levels, patch_size)
    levels = []
    current = image
    for level in range(n_levels):
        levels.append(patchify(sharpen(current), patch_size))
        if level + 1 < n_levels:
            current = downscale2(current)
    scales = [_mean_sq_distance(f) for f in levels] if with_scales else []
    return PatchFeatures(levels, patch_size, n_levels, shapes, scales)


def features_adjoint(level_grads: list, shapes: list, patch_size: int) -> np.ndarray:
    """Pull per-level patch-row gradients back to a gradient on the input image."""
    acc = None
    for level in reversed(range(len(shapes))):
        g = sharpen_adjoint(patchify_adjoint(level_grads[level], shapes[level], patch_size))
        if acc is not None:
            g = g + downscale2_adjoint(acc, shapes[level])
        acc = g
    return acc


def subsample(rows: np.ndarray, n: int, rng, return_index: bool = False):
    """Up to ``n`` distinct rows drawn uniformly without replacement."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    if rows.shape[0] <= n:
        idx = np.arange(rows.shape[0])
    else:
        idx = rng.choice(rows.shape[0], size=n, replace=False)
    return (rows[idx], idx) if return_index else rows[idx]


# -- entropic optimal transport ---------------------------------------------

def sq_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # overflow shows up as inf/nan, which the solvers reject
    with np.errstate(over="ignore", invalid="ignore"):
        c = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(c, 0.0)


@dataclass
class OTResult:
    value: float
    plan: np.ndarray
    violation: float
    iterations: int
    converged: bool


def sinkhorn(cost: np.ndarray, epsilon: float, max_iters: int = 200, tolerance: float = 1e-6,
             tau: float = 1e3) -> OTResult:
    """Entropic OT between uniform weights with log-stabilized Sinkhorn.

    The dual potentials are kept in the log domain and the scaling vectors
    are absorbed into them whenever they leave [1/tau, tau], so the kernel
    never under- or overflows. The returned value is the regularized
    objective <P, C> + eps * KL(P | a x b) at the final iterate, whose
    derivative with respect to the cost is the plan itself.
    """
    if not np.all(np.isfinite(cost)):
        raise SinkhornError("cost matrix has non-finite entries")
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    f = cost.min(axis=1)
    g = (cost - f[:, None]).min(axis=0)
    kernel = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    u = np.ones(n)
    v = np.ones(m)
    first = None
    violation = np.inf
    it = 0
    for it in range(max_iters + 1):
        kv = kernel @ v
        violation = float(np.abs(u * kv - a).sum())
        if first is None:
            first = violation
        if violation < tolerance or it == max_iters:
            break
        u = a / kv
        v = b / (kernel.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise SinkhornError(f"scaling vectors became non-finite at iteration {it}")
        lo, hi = 1.0 / tau, tau
        if u.max() > hi or v.max() > hi or u.min() < lo or v.min() < lo:
            f += epsilon * np.log(u)
            g += epsilon * np.log(v)
            kernel = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
            u[:] = 1.0
            v[:] = 1.0
    converged = violation < tolerance
    if not converged:
        if not np.isfinite(violation) or violation >= first:
            raise SinkhornError(f"Sinkhorn failed to reduce marginal violation (final {violation:.3g})")
        log.debug("Sinkhorn stopped at %d iterations, violation %.3g", it, violation)
    f_tot = f + epsilon * np.log(u)
    g_tot = g + epsilon * np.log(v)
    value = a @ f_tot + b @ g_tot + epsilon * (np.log(n) + np.log(m))
    plan = u[:, None] * kernel * v[None, :]
    return OTResult(float(value), plan, violation, it, converged)


def _logsumexp_rows(m):
    top = m.max(axis=1)
    return top + np.log(np.exp(m - top[:, None]).sum(axis=1))


def sinkhorn_symmetric(cost: np.ndarray, epsilon: float, max_iters: int = 200,
                       tolerance: float = 1e-6) -> OTResult:
    """Entropic OT of a uniform point set with itself.

    A symmetric problem has a symmetric solution, so a single log-domain
    potential is iterated with averaged updates, which avoids the slow
    oscillation of alternating updates. The plan is exactly symmetric.
    """
    if not np.all(np.isfinite(cost)):
        raise SinkhornError("cost matrix has non-finite entries")
    cost = 0.5 * (cost + cost.T)
    n = cost.shape[0]
    log_a = -np.log(n)
    f = np.zeros(n)
    violation = first = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        t = -epsilon * _logsumexp_rows((f[None, :] - cost) / epsilon + log_a)
        # row mass of the current plan is a_i * exp((f_i - t_i) / eps)
        violation = float(np.abs(np.exp((f - t) / epsilon) - 1.0).sum() / n)
        if not np.isfinite(violation):
            raise SinkhornError(f"symmetric Sinkhorn became non-finite at iteration {it}")
        if it == 1:
            first = violation
        if violation < tolerance:
            break
        f = 0.5 * (f + t)
    if violation >= tolerance and violation >= first:
        raise SinkhornError(f"Sinkhorn failed to reduce marginal violation (final {violation:.3g})")
    plan = np.exp((f[:, None] + f[None, :] - cost) / epsilon + 2 * log_a)
    return OTResult(float(2.0 * f.mean()), plan, violation, it, violation < tolerance)


def _ot_term(x, y, eps, cfg, same=False):
    """Value and x-gradient of one OT term; ``same`` means y is x itself."""
    if same or (x.shape == y.shape and np.array_equal(x, y)):
        res = sinkhorn_symmetric(sq_distances(x, x), eps, cfg.max_iters, cfg.tolerance)
    else:
        res = sinkhorn(sq_distances(x, y), eps, cfg.max_iters, cfg.tolerance)
    p = res.plan
    gx = 2.0 * (p.sum(1)[:, None] * x - p @ y)
    if same:
        gx = gx + 2.0 * (p.sum(0)[:, None] * y - p.T @ x)
    return res.value, gx


def resolve_epsilon(cfg: OTConfig, x, y, scale=None) -> float:
    if not cfg.relative:
        return cfg.epsilon
    if scale is None:
        scale = float(sq_distances(x, y).mean())
    return cfg.epsilon * scale if scale > 0 else cfg.epsilon


def sinkhorn_divergence(x: np.ndarray, y: np.ndarray, cfg: OTConfig, scale: float | None = None):
    """Debiased entropic OT divergence between point clouds and its gradient in ``x``.

    Returns ``(value, grad_x)``. The gradient treats the converged transport
    plans as constants. With ``cfg.relative`` the regularization is
    ``cfg.epsilon * scale``; ``scale`` defaults to the mean cross cost and is
    not differentiated through.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"incompatible point sets {x.shape} and {y.shape}")
    eps = resolve_epsilon(cfg, x, y, scale)
    value, grad = _ot_term(x, y, eps, cfg)
    if cfg.debiased:
        vxx, gxx = _ot_term(x, x, eps, cfg, same=True)
        vyy, _ = _ot_term(y, y, eps, cfg)
        value = value - 0.5 * vxx - 0.5 * vyy
        grad = grad - 0.5 * gxx
    return value, grad


def exact_ot_oracle(x: np.ndarray, y: np.ndarray) -> float:
    """Exact squared-Euclidean OT between equal-size uniform sets by enumerating permutations."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    n = len(x)
    if len(y) != n:
        raise ValueError("oracle needs equal-size sets")
    if n > 8:
        raise ValueError("oracle enumerates n! permutations; n must be <= 8")
    cost = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    rows = np.arange(n)
    return min(cost[rows, list(p)].sum() for p in itertools.permutations(range(n))) / n


# -- texture loss -------------------------------------------------------------

def target_features(image: np.ndarray, cfg: OTConfig) -> PatchFeatures:
    return extract_features(np.asarray(image, dtype=np.float64), cfg.n_levels, cfg.patch_size,
                            with_scales=True)


def texture_loss(gen_image: np.ndarray, target: PatchFeatures, cfg: OTConfig, rng):
    """Sum over pyramid levels of the OT divergence between subsampled patch sets.

    Returns ``(value, grad_image)``; generated rows are drawn before target
    rows at each level, so a fixed ``rng`` seed fixes the whole selection.
    """
    rng = np.random.default_rng(rng)
    feats = extract_features(gen_image, target.n_levels, target.patch_size)
    scales = target.scales or [_mean_sq_distance(f) for f in target.levels]
    total = 0.0
    level_grads = []
    for level, rows in enumerate(feats.levels):
        xs, idx = subsample(rows, cfg.n_subsample, rng, return_index=True)
        ys = subsample(target.levels[level], cfg.n_subsample, rng)
        value, gx = sinkhorn_divergence(xs, ys, cfg, scale=scales[level])
        total += value
        full = np.zeros_like(rows)
        full[idx] = gx
        level_grads.append(full)
    return total, features_adjoint(level_grads, feats.shapes, target.patch_size)
