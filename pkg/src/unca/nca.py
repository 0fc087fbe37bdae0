"""Cell state, fixed perception filters and the forward update rule.

Grids are plain numpy arrays shaped ``(H, W, C)`` or batched ``(B, H, W, C)``.
Channels 0..2 hold RGB, the rest are latent. The grid is a torus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAPLACIAN = np.array([[1.0, 2.0, 1.0], [2.0, -12.0, 2.0], [1.0, 2.0, 1.0]])
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

# the filter counts used for the four published model sizes
TABLE_CONFIGS = {
    68: (2, 1, 1),
    150: (2, 2, 2),
    264: (4, 2, 2),
    588: (4, 4, 4),
}


class DivergenceError(FloatingPointError):
    """Raised when a rollout produces non-finite cell states."""


@dataclass(frozen=True)
class ModelConfig:
    n_lap: int
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.n_lap < 1 or self.n_x < 0 or self.n_y < 0:
            raise ValueError(f"invalid filter counts {self.filters}")
        if self.channels < 4:
            raise ValueError(f"need at least 4 channels, got {self.channels}")

    @property
    def filters(self) -> tuple[int, int, int]:
        return (self.n_lap, self.n_x, self.n_y)

    @property
    def channels(self) -> int:
        return self.n_lap + self.n_x + self.n_y

    @property
    def n_params(self) -> int:
        c = self.channels
        return 4 * c * c + c


def make_config(n_lap: int, n_x: int, n_y: int) -> ModelConfig:
    return ModelConfig(int(n_lap), int(n_x), int(n_y))


@dataclass
class Params:
    """The complete learned rule: ``w`` is (4C, C), ``b`` is (C,)."""

    w: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, config: ModelConfig, dtype=np.float64) -> "Params":
        c = config.channels
        return cls(np.zeros((4 * c, c), dtype), np.zeros(c, dtype))

    @classmethod
    def from_flat(cls, flat, config: ModelConfig) -> "Params":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (config.n_params,):
            raise ValueError(f"expected {config.n_params} values, got {flat.shape}")
        c = config.channels
        return cls(flat[: 4 * c * c].reshape(4 * c, c).copy(), flat[4 * c * c:].copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.b.ravel()])

    def copy(self) -> "Params":
        return Params(self.w.copy(), self.b.copy())

    def check(self, config: ModelConfig):
        c = config.channels
        if self.w.shape != (4 * c, c) or self.b.shape != (c,):
            raise ValueError(f"params shaped {self.w.shape}/{self.b.shape} do not match C={c}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("params contain non-finite values")


def perception_kernels(config: ModelConfig) -> np.ndarray:
    """Per-channel 3x3 kernels, shape (C, 3, 3); kernel i filters channel i."""
    return np.stack(
        [LAPLACIAN] * config.n_lap + [SOBEL_X] * config.n_x + [SOBEL_Y] * config.n_y
    )


def seed_grid(height: int, width: int, config: ModelConfig, rng, batch: int | None = None) -> np.ndarray:
    """Uniform noise in [-0.5, 0.5]; ``rng`` is a numpy Generator or an int seed."""
    if height < 3 or width < 3:
        raise ValueError(f"grid {height}x{width} is smaller than the 3x3 kernel support")
    rng = np.random.default_rng(rng)
    shape = (height, width, config.channels)
    if batch is not None:
        shape = (batch,) + shape
    return rng.uniform(-0.5, 0.5, size=shape)


def depthwise_wrap(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Cross-correlate channel c of ``x`` with ``kernels[c]`` on the torus."""
    h, w = x.shape[-3], x.shape[-2]
    # channel-first so the tap loop runs over contiguous rows
    xc = np.moveaxis(x, -1, -3)
    xp = np.pad(xc, [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)], mode="wrap")
    kernels = kernels.astype(x.dtype, copy=False)
    out = np.zeros(xc.shape, dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            k = kernels[:, di, dj]
            if np.any(k):
                out += k[:, None, None] * xp[..., di:di + h, dj:dj + w]
    return np.moveaxis(out, -3, -1)


def depthwise_wrap_adjoint(g: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    # transpose of a wrapped correlation is correlation with the flipped kernel
    return depthwise_wrap(g, kernels[:, ::-1, ::-1])


def filter_bank(xc: np.ndarray, config: ModelConfig, adjoint: bool = False) -> np.ndarray:
    """Per-channel filter responses of a channel-first field (..., C, H, W).

    Uses the separable form of the three kernels: the Laplacian is
    [1,2,1] x [1,2,1] minus 16 at the center, the Sobels are [1,2,1] smoothing
    across [-1,0,1] differencing. The adjoint flips the antisymmetric Sobels.
    """
    h, w = xc.shape[-2], xc.shape[-1]
    nl, nx = config.n_lap, config.n_x
    xp = np.pad(xc, [(0, 0)] * (xc.ndim - 2) + [(1, 1), (1, 1)], mode="wrap")
    out = np.empty_like(xc)

    top, mid, bot = xp[..., 0:h, :], xp[..., 1:h + 1, :], xp[..., 2:h + 2, :]
    smooth_v = top[..., :nl + nx, :, :] + 2.0 * mid[..., :nl + nx, :, :] + bot[..., :nl + nx, :, :]
    sl = smooth_v[..., :nl, :, :]
    out[..., :nl, :, :] = sl[..., 0:w] + 2.0 * sl[..., 1:w + 1] + sl[..., 2:w + 2] - 16.0 * xc[..., :nl, :, :]
    sx = smooth_v[..., nl:, :, :]
    out[..., nl:nl + nx, :, :] = sx[..., 2:w + 2] - sx[..., 0:w]
    diff_v = bot[..., nl + nx:, :, :] - top[..., nl + nx:, :, :]
    out[..., nl + nx:, :, :] = diff_v[..., 0:w] + 2.0 * diff_v[..., 1:w + 1] + diff_v[..., 2:w + 2]
    if adjoint:
        out[..., nl:, :, :] *= -1.0
    return out


def channels_first(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def channels_last(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -3, -1))


def perceive(grid: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Concatenate raw state with its filtered copy along the channel axis (2C)."""
    if grid.shape[-1] != config.channels:
        raise ValueError(f"grid has {grid.shape[-1]} channels, config expects {config.channels}")
    filtered = channels_last(filter_bank(channels_first(grid), config))
    return np.concatenate([grid, filtered], axis=-1)


def expand(p: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.concatenate([p, np.abs(p)], axis=axis)


def step_cf(xc: np.ndarray, params: Params, config: ModelConfig) -> np.ndarray:
    """One update on a channel-first field (..., C, H, W)."""
    c = config.channels
    y = expand(np.concatenate([xc, filter_bank(xc, config)], axis=-3), axis=-3)
    flat = y.reshape(y.shape[:-3] + (4 * c, -1))
    with np.errstate(over="ignore", invalid="ignore"):
        upd = (params.w.T.astype(xc.dtype, copy=False) @ flat).reshape(xc.shape)
        out = xc + upd + params.b.astype(xc.dtype, copy=False)[:, None, None]
    if not np.all(np.isfinite(out)):
        raise DivergenceError("cell states became non-finite")
    return out


def step(grid: np.ndarray, params: Params, config: ModelConfig) -> np.ndarray:
    """``s + concat(p, |p|) W + b`` in every cell."""
    if grid.shape[-1] != config.channels:
        raise ValueError(f"grid has {grid.shape[-1]} channels, config expects {config.channels}")
    return channels_last(step_cf(channels_first(grid), params, config))


def rollout(grid: np.ndarray, params: Params, config: ModelConfig, n_steps: int,
            trajectory: bool = False):
    """Apply ``step`` n_steps times.

    With ``trajectory=True`` returns the list of all n_steps+1 grids (input first),
    which is what the backward pass needs.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if grid.shape[-1] != config.channels:
        raise ValueError(f"grid has {grid.shape[-1]} channels, config expects {config.channels}")
    xc = channels_first(grid)
    states = [grid]
    for _ in range(n_steps):
        xc = step_cf(xc, params, config)
        if trajectory:
            states.append(channels_last(xc))
    if trajectory:
        return states
    return channels_last(xc) if n_steps else grid


def to_rgb(grid: np.ndarray) -> np.ndarray:
    if grid.shape[-1] < 3:
        raise ValueError("grid needs at least 3 channels")
    return np.clip(grid[..., :3], 0.0, 1.0)
