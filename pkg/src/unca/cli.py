"""Command-line front end: ``unca train|generate|quantize|emit|eval|pixelopt``.

Settings come from built-in defaults, then an optional ``key = value`` file
(``--config``), then command-line flags. The resolved settings are echoed to
the log in the same ``key = value`` format, so a run can be repeated by
feeding its echo back as a config file.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(unreadable input, bad model file, numerical divergence).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import codegen, imageio, nca, ot, quant, train

log = logging.getLogger("unca")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    # model and run
    filters: str = "2,1,1"
    seed: int = 0
    size: int = 128
    steps: int | None = None
    frames: str = ""
    out: str = ""
    target: str = "c"
    # texture loss
    K: int = 5
    levels: int = 4
    epsilon: float = 0.05
    max_iters: int = 200
    tolerance: float = 1e-6
    n_subsample: int = 2048
    # training
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
    ablate_gradnorm: bool = False
    ablate_overflow: bool = False
    preview_every: int = 500
    # pixel optimization
    pixel_learning_rate: float = 1e-3

    def model_config(self) -> nca.ModelConfig:
        try:
            parts = [int(v) for v in self.filters.split(",")]
            if len(parts) != 3:
                raise ValueError
            return nca.make_config(*parts)
        except ValueError as err:
            raise UsageError(f"--filters must be three counts L,X,Y with L>=1 and L+X+Y>=4, "
                             f"got {self.filters!r}") from err

    def ot_config(self) -> ot.OTConfig:
        return ot.OTConfig(epsilon=self.epsilon, max_iters=self.max_iters, tolerance=self.tolerance,
                           n_subsample=self.n_subsample, patch_size=self.K, n_levels=self.levels)

    def train_config(self) -> train.TrainConfig:
        return train.TrainConfig(
            n_train=self.n_train if self.steps is None else self.steps,
            n_batch=self.n_batch, n_pool=self.n_pool, seed_rate=self.seed_rate,
            n_steps_min=self.n_steps_min, n_steps_max=self.n_steps_max, grid_size=self.grid_size,
            learning_rate=self.learning_rate, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, disable_step_grad_norm=self.ablate_gradnorm,
            disable_overflow_loss=self.ablate_overflow)

    def echo(self) -> str:
        return "\n".join(f"{f.name} = {getattr(self, f.name)}" for f in fields(self))


def _convert(text, kind):
    text = text.strip()
    if kind in (int, "int", "int | None"):
        if kind == "int | None" and text in ("", "None"):
            return None
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return text


def parse_config_text(text: str, source: str = "config") -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use - or _."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(value, known[key])
        except ValueError as err:
            raise UsageError(f"{source}:{lineno}: bad value for {key}: {err}") from err
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value settings file (flags override it)")
    common.add_argument("--filters", help="Laplacian, Sobel-x, Sobel-y filter counts, e.g. 2,1,1")
    common.add_argument("--size", type=int, help="target size (train/eval/pixelopt) or grid size (generate)")
    common.add_argument("--steps", type=int,
                        help="training iterations (train), CA steps (generate/eval), iterations (pixelopt)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path")
    common.add_argument("--K", type=int, help="patch size of the texture loss")
    common.add_argument("--levels", type=int, help="pyramid levels of the texture loss")
    common.add_argument("--ablate-gradnorm", dest="ablate_gradnorm", action="store_true",
                        help="train without per-step state-gradient normalization")
    common.add_argument("--ablate-overflow", dest="ablate_overflow", action="store_true",
                        help="train without the overflow loss")
    common.add_argument("--target", choices=["c", "glsl"], help="source language for emit")
    common.add_argument("--frames", help="comma-separated step indices to save (generate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="unca", description="Tiny cellular automata for texture synthesis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="fit a rule to a target image")
    p.add_argument("image")
    p = sub.add_parser("generate", parents=[common], help="roll out a model and save frames")
    p.add_argument("model")
    p = sub.add_parser("quantize", parents=[common], help="convert a model to one byte per parameter")
    p.add_argument("model")
    p = sub.add_parser("emit", parents=[common], help="write standalone C or GLSL source")
    p.add_argument("model")
    p = sub.add_parser("eval", parents=[common], help="texture loss of a rollout against an image")
    p.add_argument("model")
    p.add_argument("image")
    p = sub.add_parser("pixelopt", parents=[common], help="optimize pixels directly against an image")
    p.add_argument("image")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as err:
            raise UsageError(f"cannot read config file: {err}") from err
        values.update(parse_config_text(text, str(path)))
    names = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    cfg = RunConfig(**values)
    if cfg.steps is not None and cfg.steps < 0:
        raise UsageError("--steps must be >= 0")
    return cfg


def _out(cfg, default):
    return Path(cfg.out or default)


def _load_model(path):
    try:
        return quant.load_params(path)
    except OSError as err:
        raise RuntimeError(f"cannot read model: {err}") from err


def _read_target(path, size):
    try:
        return imageio.read_image(path, size)
    except (OSError, ValueError) as err:
        raise RuntimeError(f"cannot read image {path}: {err}") from err


def cmd_train(cfg: RunConfig, args) -> int:
    model_cfg = cfg.model_config()
    try:
        tc, oc = cfg.train_config(), cfg.ot_config()
    except ValueError as err:
        raise UsageError(str(err)) from err
    target = _read_target(args.image, cfg.size)
    out = _out(cfg, "model.unca")
    stem = out.with_suffix("")

    def preview(it, params, states):
        if cfg.preview_every > 0 and ((it + 1) % cfg.preview_every == 0 or it + 1 == tc.n_train):
            grid = nca.rollout(nca.seed_grid(tc.grid_size, tc.grid_size, model_cfg, cfg.seed), params,
                               model_cfg, tc.n_steps_max)
            imageio.write_png(f"{stem}_preview_{it + 1:05d}.png", nca.to_rgb(grid))

    report = train.train(model_cfg, target, tc, oc, cfg.seed, callback=preview, raise_on_divergence=False)
    quant.save_model(report.params, out, model_cfg)
    report.to_csv(f"{stem}_loss.csv")
    ablated = ", ".join(report.ablations) or "none"
    log.info("ablations: %s", ablated)
    if report.texture_loss:
        log.info("final texture loss %.6g after %d iterations", report.texture_loss[-1], len(report.texture_loss))
    print(f"wrote {out} ({model_cfg.n_params} float parameters); ablations: {ablated}")
    if report.diverged:
        print(f"training aborted: {report.diverged}", file=sys.stderr)
        return 2
    return 0


def _frame_list(cfg, n_steps):
    if not cfg.frames:
        return [n_steps]
    try:
        frames = sorted({int(v) for v in cfg.frames.split(",") if v.strip()})
    except ValueError as err:
        raise UsageError(f"--frames must be comma-separated integers, got {cfg.frames!r}") from err
    if not frames or frames[0] < 0:
        raise UsageError("--frames needs non-negative step indices")
    return frames


def cmd_generate(cfg: RunConfig, args) -> int:
    params, model_cfg = _load_model(args.model)
    n_steps = 64 if cfg.steps is None else cfg.steps
    frames = _frame_list(cfg, n_steps)
    if cfg.size < 3:
        raise UsageError("--size must be >= 3")
    out = _out(cfg, "frame.png")
    grid = nca.seed_grid(cfg.size, cfg.size, model_cfg, cfg.seed)
    done = 0
    for k in frames:
        grid = nca.rollout(grid, params, model_cfg, k - done)
        done = k
        path = out if not cfg.frames else out.with_name(f"{out.stem}_{k:05d}{out.suffix}")
        imageio.write_image(path, nca.to_rgb(grid))
        print(f"wrote {path}")
    return 0


def cmd_quantize(cfg: RunConfig, args) -> int:
    params, model_cfg = _load_model(args.model)
    qm = quant.quantize(params, model_cfg)
    out = _out(cfg, Path(args.model).with_suffix(".q.unca"))
    n = quant.save_model(qm, out)
    print(f"wrote {out}: {n} bytes, payload {len(qm.payload)} bytes")
    return 0


def cmd_emit(cfg: RunConfig, args) -> int:
    params, model_cfg = _load_model(args.model)
    qm = quant.quantize(params, model_cfg)
    text = codegen.emit_c(qm) if cfg.target == "c" else codegen.emit_glsl(qm)
    out = _out(cfg, "rule.c" if cfg.target == "c" else "rule.frag")
    out.write_text(text)
    print(f"wrote {out} ({len(text)} characters)")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    params, model_cfg = _load_model(args.model)
    target = _read_target(args.image, cfg.size)
    oc = cfg.ot_config()
    n_steps = 64 if cfg.steps is None else cfg.steps
    side = target.shape[0]
    grid = nca.rollout(nca.seed_grid(side, target.shape[1], model_cfg, cfg.seed), params, model_cfg, n_steps)
    value, _ = ot.texture_loss(grid[..., :3], ot.target_features(target, oc), oc, cfg.seed)
    print(f"{value:.10g}")
    return 0


def cmd_pixelopt(cfg: RunConfig, args) -> int:
    target = _read_target(args.image, cfg.size)
    oc = cfg.ot_config()
    history = []
    iterations = 200 if cfg.steps is None else cfg.steps
    image = train.optimize_pixels(target, oc, iterations, cfg.pixel_learning_rate, rng=cfg.seed,
                                  history=history)
    out = _out(cfg, f"pixelopt_K{cfg.K}_L{cfg.levels}.png")
    imageio.write_image(out, image)
    if history:
        print(f"loss {history[0]:.6g} -> {history[-1]:.6g}")
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "quantize": cmd_quantize,
    "emit": cmd_emit,
    "eval": cmd_eval,
    "pixelopt": cmd_pixelopt,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.getLogger("unca.ot").setLevel(logging.INFO)
    try:
        cfg = resolve(args)
        log.info("resolved config for %s:\n%s", args.command, cfg.echo())
        return COMMANDS[args.command](cfg, args)
    except UsageError as err:
        print(f"unca: error: {err}", file=sys.stderr)
        return 1
    except (RuntimeError, quant.ModelFormatError, FloatingPointError, ArithmeticError) as err:
        print(f"unca: failed: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        # invalid setting combinations surface as ValueError from the config types
        print(f"unca: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
