import numpy as np
import pytest

from unca import nca, ot, textures, train

# desk-scale run: small grid, short rollouts, a coarser loss than the defaults
DESK_TRAIN = dict(n_train=500, n_batch=4, n_pool=64, seed_rate=4, n_steps_min=16, n_steps_max=32,
                  grid_size=48, learning_rate=3e-3)
DESK_LOSS = dict(n_subsample=256, patch_size=5, n_levels=3)
DESK_FILTERS = (2, 1, 1)

ACCEPTANCE_LINES = []


def desk_run(seed=0, **overrides):
    tc = train.TrainConfig(**{**DESK_TRAIN, **overrides})
    oc = ot.OTConfig(**DESK_LOSS)
    return train.train(nca.make_config(*DESK_FILTERS), textures.stripes(48, 8), tc, oc, seed,
                       raise_on_divergence=False)


@pytest.fixture(scope="session")
def desk_report():
    """One full desk-scale training run, shared by every test that needs a trained rule."""
    return desk_run(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def record(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


@pytest.fixture
def rng():
    return np.random.default_rng(0)
