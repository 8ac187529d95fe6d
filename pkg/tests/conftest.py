import numpy as np
import pytest

from capspoe.energy import EnergyModel
from capspoe.kernels import SeededRng
from capspoe.synthetic import write_synthetic_idx


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rng():
    return SeededRng(7)


def random_model(gen, I, J, N, M, scale=1.0):
    return EnergyModel(scale * gen.normal(size=(I, J, N, M)))


def binary(gen, shape):
    return (gen.random(shape) < 0.5).astype(float)


@pytest.fixture(scope="session")
def small_idx(tmp_path_factory):
    """64 rendered digits in MNIST IDX format."""
    path = tmp_path_factory.mktemp("data") / "digits-idx3-ubyte"
    write_synthetic_idx(path, 64, seed=3)
    return path


def tiny_config_text(data_path, out, epochs=2, seed=0):
    """A run small enough for unit tests: 8 channels, 4 upper capsules."""
    return f"""\
[data]
name = mnist
path = {data_path}
limit = 32

[run]
seed = {seed}
out = {out}

[autoencoder]
epochs = {epochs}
batch = 16
channels = 8

[capsules]
capsules = 4
dim = 4
epochs = {epochs}
batch = 16
lr = 0.05

[generate]
samples_per_capsule = 2
"""


@pytest.fixture
def tiny_config(tmp_path, small_idx):
    path = tmp_path / "run.ini"
    path.write_text(tiny_config_text(small_idx, tmp_path / "out"))
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
