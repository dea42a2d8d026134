import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qedge.decoder import BlockWeights, DecoderWeights, ModelConfig  # noqa: E402
from qedge.metrics import write_power_log  # noqa: E402


def random_model(config: ModelConfig, seed: int, gain_jitter: bool = True) -> DecoderWeights:
    """Float model with O(1) activations (weights ~ N(0, 1/fan_in))."""
    rng = np.random.default_rng(seed)
    d, f = config.d, config.d_ff

    def mat(rows, cols):
        return rng.normal(0, 1 / np.sqrt(cols), size=(rows, cols))

    def gain():
        return 1 + 0.1 * rng.normal(size=d) if gain_jitter else np.ones(d)

    blocks = [
        BlockWeights(
            w_q=mat(d, d), w_k=mat(d, d), w_v=mat(d, d), w_x=mat(d, d),
            w_i=mat(f, d), w_o=mat(d, f),
            b_i=0.1 * rng.normal(size=f), b_o=0.1 * rng.normal(size=d),
            ln1_g=gain(), ln1_b=0.1 * rng.normal(size=d),
            ln2_g=gain(), ln2_b=0.1 * rng.normal(size=d),
        )
        for _ in range(config.n_layers)
    ]
    return DecoderWeights(rng.normal(size=(config.vocab, d)), blocks, gain(), 0.1 * rng.normal(size=d))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def power_logs(tmp_path):
    """Idle log averaging 3.32 W and load log averaging 6.45 W."""
    idle = tmp_path / "idle.csv"
    load = tmp_path / "load.csv"
    write_power_log(idle, [0.0, 1.0, 2.0], [3.30, 3.32, 3.34])
    write_power_log(load, [0.0, 1.0, 2.0], [6.45, 6.45, 6.45])
    return idle, load


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
