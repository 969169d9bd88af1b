import sys
from pathlib import Path

import numpy as np
import pytest

from routecap import model as model_mod

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []
DECOMPOSITION = {"passes": 0, "max_gap": 0.0}

_forward = model_mod.Model.forward


def _checked_forward(self, pooled, training=False, rng=None):
    # every routing forward pass in the suite must satisfy the logit decomposition
    out = _forward(self, pooled, training, rng)
    if out.state is not None:
        gap = model_mod.check_decomposition(out, self.readout)
        DECOMPOSITION["passes"] += 1
        DECOMPOSITION["max_gap"] = max(DECOMPOSITION["max_gap"], gap)
    return out


model_mod.Model.forward = _checked_forward


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    if DECOMPOSITION["passes"]:
        terminalreporter.write_line(
            f"logit decomposition checked on {DECOMPOSITION['passes']} routing forward passes, "
            f"max gap {DECOMPOSITION['max_gap']:.3e}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    from routecap.model import TrainConfig
    return TrainConfig(n_labels=3, dims={"a": 3, "v": 2, "t": 4}, d_f=5, d_c=4, dropout=0.0,
                       epochs=2, batch_size=8, learning_rate=1e-2, seed=3)


@pytest.fixture
def small_data(small_config):
    g = np.random.default_rng(99)
    pooled = {m: g.standard_normal((40, d)) for m, d in small_config.dims.items()}
    y = g.integers(0, small_config.n_labels, 40)
    return pooled, y
