"""Sample-pool training of the cell rule with a hand-written backward pass."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ot
from .nca import (
    DivergenceError,
    ModelConfig,
    Params,
    channels_first,
    channels_last,
    expand,
    filter_bank,
    rollout,
    seed_grid,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration, reason, last_losses=None):
        self.iteration = iteration
        self.reason = reason
        self.last_losses = last_losses
        super().__init__(f"training diverged at iteration {iteration}: {reason} "
                         f"(last finite losses: {last_losses})")


@dataclass
class TrainConfig:
    n_train: int = 4000
    n_batch: int = 4
    n_pool: int = 256
    seed_rate: int = 4
    n_steps_min: int = 32
    n_steps_max: int = 64
    grid_size: int = 96
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    disable_step_grad_norm: bool = False
    disable_overflow_loss: bool = False

    def __post_init__(self):
        if not 1 <= self.n_batch <= self.n_pool:
            raise ValueError("need 1 <= n_batch <= n_pool")
        if self.seed_rate < 1:
            raise ValueError("seed_rate must be >= 1")
        if not 0 <= self.n_steps_min <= self.n_steps_max:
            raise ValueError("need 0 <= n_steps_min <= n_steps_max")
        if self.grid_size < 3 or self.n_train < 0:
            raise ValueError("invalid grid_size or n_train")


# -- gradients -----------------------------------------------------------------

def overflow_loss(x: np.ndarray):
    """Sum of |x - clip(x, -1, 1)| and its (sub)gradient, 0 on the boundary."""
    over = x - np.clip(x, -1.0, 1.0)
    return float(np.abs(over).sum()), np.sign(over)


def step_backward_cf(xc: np.ndarray, params: Params, gc: np.ndarray, config: ModelConfig):
    """Channel-first transpose of ``nca.step_cf`` at input ``xc``."""
    c = config.channels
    p = np.concatenate([xc, filter_bank(xc, config)], axis=-3)
    y = expand(p, axis=-3)
    y_cells = y.reshape(y.shape[:-3] + (4 * c, -1))
    g_cells = gc.reshape(gc.shape[:-3] + (c, -1))
    grad_w = y_cells @ np.swapaxes(g_cells, -1, -2)
    grad_b = g_cells.sum(axis=-1)
    if grad_w.ndim > 2:
        grad_w = grad_w.sum(axis=0)
        grad_b = grad_b.sum(axis=0)

    gy = (params.w @ g_cells).reshape(y.shape)
    gp = gy[..., :2 * c, :, :] + gy[..., 2 * c:, :, :] * np.sign(p)
    grad_in = gc + gp[..., :c, :, :] + filter_bank(gp[..., c:, :, :], config, adjoint=True)
    return grad_in, Params(grad_w, grad_b)


def step_backward(grid_in: np.ndarray, params: Params, grad_out: np.ndarray, config: ModelConfig):
    """Transpose of ``nca.step`` at ``grid_in``.

    Returns ``(grad_in, grad_params)``; parameter gradients are summed over
    all cells (and batch elements, if batched).
    """
    if grad_out.shape != grid_in.shape:
        raise ValueError(f"grad shape {grad_out.shape} != state shape {grid_in.shape}")
    if grid_in.shape[-1] != config.channels:
        raise ValueError(f"grid has {grid_in.shape[-1]} channels, config expects {config.channels}")
    gi, gp = step_backward_cf(channels_first(grid_in), params, channels_first(grad_out), config)
    return channels_last(gi), gp


def norm_state_grad(g: np.ndarray, batched: bool = True) -> np.ndarray:
    """Scale each batch element's gradient to unit L2 norm (zero stays zero)."""
    if not batched:
        return g / (np.linalg.norm(g) + 1e-8)
    norms = np.sqrt((g.reshape(g.shape[0], -1) ** 2).sum(axis=1))
    return g / (norms + 1e-8).reshape((-1,) + (1,) * (g.ndim - 1))


def backprop_rollout(trajectory: list, params: Params, config: ModelConfig, loss_grad_final: np.ndarray,
                     normalize: bool = True, batched: bool = True) -> Params:
    """Parameter gradient of a loss on the last state of ``trajectory``.

    ``trajectory`` holds every grid from the initial state to the final one.
    With ``normalize`` the state gradient is renormalized per batch element
    before each backward step, starting with the incoming loss gradient.
    """
    grad_w = np.zeros_like(params.w)
    grad_b = np.zeros_like(params.b)
    g = channels_first(loss_grad_final)
    n_steps = len(trajectory) - 1
    for i in range(n_steps, 0, -1):
        if normalize:
            g = norm_state_grad(g, batched)
        g, gp = step_backward_cf(channels_first(trajectory[i - 1]), params, g, config)
        grad_w += gp.w
        grad_b += gp.b
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite state gradient at step {i}")
    return Params(grad_w, grad_b)


def unit_norm(flat: np.ndarray):
    """``(flat / |flat|, |flat|)``; an all-zero gradient is returned unchanged."""
    norm = float(np.linalg.norm(flat))
    return (flat / norm if norm > 0 else flat), norm


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, flat: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(flat), np.zeros_like(flat))


def adam_update(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


# -- pool ------------------------------------------------------------------------

class Pool:
    """Persistent grid states plus the number of CA steps each has seen."""

    def __init__(self, n_pool, grid_size, config, rng):
        self.rng = rng
        self.config = config
        self.grid_size = grid_size
        self.states = seed_grid(grid_size, grid_size, config, rng, batch=n_pool)
        self.ages = np.zeros(n_pool, dtype=np.int64)
        self.discarded_ages = []

    def __len__(self):
        return len(self.states)

    def sample(self, n_batch):
        idx = self.rng.choice(len(self.states), size=n_batch, replace=False)
        return idx, self.states[idx].copy()

    def fresh_seed(self):
        return seed_grid(self.grid_size, self.grid_size, self.config, self.rng)

    def commit(self, idx, states, n_steps, reseeded=False):
        if reseeded:
            self.discarded_ages.append(int(self.ages[idx[0]]))
            self.ages[idx[0]] = 0
        self.states[idx] = states
        self.ages[idx] += n_steps


@dataclass
class TrainReport:
    texture_loss: list = field(default_factory=list)
    overflow_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    n_steps: list = field(default_factory=list)
    max_abs_state: list = field(default_factory=list)
    reseeded: list = field(default_factory=list)
    params: Params | None = None
    pool: Pool | None = None
    ablations: tuple = ()
    diverged: str | None = None

    def log_lines(self):
        for i, (lt, lo, gn) in enumerate(zip(self.texture_loss, self.overflow_loss, self.grad_norm)):
            yield f"{i} texture={lt:.6g} overflow={lo:.6g} grad_norm={gn:.6g}"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,texture_loss,overflow_loss,grad_norm,n_steps,max_abs_state\n")
            rows = zip(self.texture_loss, self.overflow_loss, self.grad_norm, self.n_steps,
                       self.max_abs_state)
            for i, (lt, lo, gn, ns, mx) in enumerate(rows):
                fh.write(f"{i},{lt!r},{lo!r},{gn!r},{ns},{mx!r}\n")


def rgb_loss_and_grad(states, target, ot_config, rng):
    """Texture loss summed over the batch, with gradient on the full states."""
    total = 0.0
    grad = np.zeros_like(states)
    for k in range(states.shape[0]):
        value, g = ot.texture_loss(states[k, ..., :3], target, ot_config, rng)
        total += value
        grad[k, ..., :3] = g
    return total, grad


def train(model_config: ModelConfig, target_image: np.ndarray, train_config: TrainConfig,
          ot_config: ot.OTConfig, rng, params: Params | None = None, callback=None,
          raise_on_divergence: bool = True) -> TrainReport:
    """Fit a rule so that its rollouts match the target's patch statistics.

    ``callback(iteration, params, states)`` is invoked after every update.
    On divergence a ``TrainingDiverged`` is raised, or, with
    ``raise_on_divergence=False``, training stops and the reason is stored
    in ``report.diverged``.
    """
    rng = np.random.default_rng(rng)
    tc = train_config
    params = Params.zeros(model_config) if params is None else params.copy()
    target = ot.target_features(target_image, ot_config)
    pool = Pool(tc.n_pool, tc.grid_size, model_config, rng)
    adam = AdamState.like(params.flat())
    ablations = tuple(name for name, off in (("step_grad_norm", tc.disable_step_grad_norm),
                                             ("overflow_loss", tc.disable_overflow_loss)) if off)
    report = TrainReport(params=params, pool=pool, ablations=ablations)

    for it in range(tc.n_train):
        idx, x = pool.sample(tc.n_batch)
        reseed = (it + 1) % tc.seed_rate == 0
        if reseed:
            x[0] = pool.fresh_seed()
        n_steps = int(rng.integers(tc.n_steps_min, tc.n_steps_max + 1))
        try:
            traj = rollout(x, params, model_config, n_steps, trajectory=True)
            final = traj[-1]
            lt, g_final = rgb_loss_and_grad(final, target, ot_config, rng)
            lo = 0.0
            if not tc.disable_overflow_loss:
                lo, g_over = overflow_loss(final)
                g_final = g_final + g_over
            grads = backprop_rollout(traj, params, model_config, g_final,
                                     normalize=not tc.disable_step_grad_norm)
            unit_grad, gnorm = unit_norm(grads.flat())
            if not (np.isfinite(gnorm) and np.isfinite(lt)):
                raise FloatingPointError("non-finite loss or parameter gradient")
        except (DivergenceError, FloatingPointError, ot.SinkhornError) as err:
            last = (report.texture_loss[-1:], report.overflow_loss[-1:])
            if raise_on_divergence:
                raise TrainingDiverged(it, str(err), last) from err
            report.diverged = f"iteration {it}: {err}"
            log.warning("stopping: %s", report.diverged)
            break

        theta = adam_update(params.flat(), unit_grad, adam, tc.learning_rate,
                            tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
        params = Params.from_flat(theta, model_config)
        pool.commit(idx, final, n_steps, reseeded=reseed)

        report.texture_loss.append(lt)
        report.overflow_loss.append(lo)
        report.grad_norm.append(gnorm)
        report.n_steps.append(n_steps)
        report.max_abs_state.append(float(np.abs(final).max()))
        report.reseeded.append(reseed)
        report.params = params
        log.debug("it %d texture %.5g overflow %.5g |grad| %.3g", it, lt, lo, gnorm)
        if callback is not None:
            callback(it, params, final)
    return report


def optimize_pixels(target_image: np.ndarray, ot_config: ot.OTConfig, iterations: int = 200,
                    learning_rate: float = 1e-3, init: np.ndarray | None = None, rng=0,
                    history: list | None = None) -> np.ndarray:
    """Adam directly on image pixels against the texture loss.

    ``init`` defaults to uniform noise in [0, 1] of the target's shape. If a
    ``history`` list is passed, the loss of every iteration is appended.
    """
    rng = np.random.default_rng(rng)
    target = ot.target_features(target_image, ot_config)
    image = rng.uniform(0.0, 1.0, size=target_image.shape) if init is None \
        else np.array(init, dtype=np.float64)
    adam = AdamState.like(image)
    for _ in range(iterations):
        value, grad = ot.texture_loss(image, target, ot_config, rng)
        if history is not None:
            history.append(value)
        image = adam_update(image, grad, adam, learning_rate)
    return image
