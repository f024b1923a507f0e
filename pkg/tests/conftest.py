import sys

import numpy as np
import pytest

from igrsr.backbone import SASRec
from igrsr.config import ModelConfig
from igrsr.data import generate_synthetic


@pytest.fixture(scope="session")
def tiny_ds():
    return generate_synthetic(users=120, items=40, intent_count=4, seq_len_range=(6, 10), seed=0)


def tiny_backbone(item_count=12, dim=8, max_len=6, seed=0):
    return SASRec(item_count, dim, max_len, layers=1, heads=2, dropout=0.0, seed=seed)


def tiny_config(**kw):
    base = dict(prefix_tokens=2, intent_tokens=2, intent_dim=8, hidden_dim=4, layers=1, heads=2, n_max=6, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def random_items(rng, batch, width, item_count, min_len=1):
    lengths = rng.integers(min_len, width + 1, size=batch)
    items = np.zeros((batch, width), dtype=np.int64)
    for r, n in enumerate(lengths):
        items[r, width - n :] = rng.integers(1, item_count + 1, size=n)
    return items


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
