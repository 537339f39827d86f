from __future__ import annotations

import numpy as np
import pytest

import mqfactor as mq


@pytest.fixture
def noiseless_small():
    """A (T=24, 14, 12) rank-(2,3) panel with zero noise and its truth."""
    cfg = mq.DgpConfig(T=24, p1=14, p2=12, k1=2, k2=3, theta_star=0.0, seed=11)
    panel, truth = mq.gen_panel(cfg, 0.5)
    return panel, truth


def random_params(p1: int, p2: int, T: int, k1: int, k2: int, seed: int) -> mq.FactorParams:
    rng = np.random.default_rng(seed)
    return mq.FactorParams(
        R=rng.standard_normal((p1, k1)),
        C=rng.standard_normal((p2, k2)),
        F=rng.standard_normal((T, k1, k2)),
    )
