import numpy as np
import pytest

from curing.model import ModelConfig, ToyTransformer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(n_layers=4, d_model=16, n_heads=4, n_kv_heads=2, d_inter=24, vocab=20, max_seq=12)


@pytest.fixture
def tiny_model(tiny_config):
    return ToyTransformer.random(tiny_config, seed=3)


def low_rank(rng, m, n, k):
    return rng.standard_normal((m, k)) @ rng.standard_normal((k, n))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key:>2}: {detail}")
