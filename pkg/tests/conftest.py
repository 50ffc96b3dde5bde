import numpy as np
import pytest

from linconn.model import init_network
from linconn.taskgen import StreamSpec, make_stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    net = init_network([4, 8, 8], 3, seed=7)
    # non-zero biases so bias gradients are exercised
    for layer in net.extractor + net.heads:
        layer.bias[:] = np.random.default_rng(3).normal(scale=0.1, size=layer.bias.shape)
    return net


@pytest.fixture(scope="session")
def tiny_stream():
    return make_stream(StreamSpec(num_classes=4, num_tasks=2, input_dim=6, per_class_train=40, per_class_test=20, seed=3))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
