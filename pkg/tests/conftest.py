import itertools

import numpy as np
import pytest
from hypothesis import settings

from rbmstop.model import RbmParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def all_bits(n: int) -> np.ndarray:
    """Every n-bit state; row k is the state whose key is k (bit i = element i)."""
    return np.array([[(k >> i) & 1 for i in range(n)] for k in range(1 << n)], dtype=np.uint8)


def joint_log_z(params: RbmParams) -> float:
    """log Z by summing exp(-Energy) over every (x, h) pair."""
    terms = []
    for x in itertools.product((0, 1), repeat=params.n_visible):
        for h in itertools.product((0, 1), repeat=params.n_hidden):
            x_, h_ = np.array(x, float), np.array(h, float)
            terms.append(params.b @ x_ + params.c @ h_ + h_ @ params.W @ x_)
    terms = np.array(terms)
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def random_params(seed: int, nv: int, nh: int, scale: float = 1.0) -> RbmParams:
    return RbmParams.random(nv, nh, np.random.default_rng(seed), scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
