"""Factor-number selection rules."""

from __future__ import annotations

import numpy as np
import pytest

import mqfactor as mq
from mqfactor.selection import RM_EXPONENT


@pytest.fixture(scope="module")
def noiseless_panel():
    cfg = mq.DgpConfig(T=30, p1=16, p2=14, k1=2, k2=3, theta_star=0.0, seed=21)
    panel, truth = mq.gen_panel(cfg, 0.5)
    return panel


@pytest.fixture(scope="module")
def noisy_panel():
    cfg = mq.DgpConfig(T=30, p1=30, p2=30, k1=2, k2=3, theta_star=1.0, seed=22)
    panel, truth = mq.gen_panel(cfg, 0.5)
    return panel


_FAST = {"max_outer_iters": 25}


def test_noiseless_exact_ranks_all_methods(noiseless_panel):
    overfit = mq.fit(noiseless_panel, 0.5, mq.FitConfig(k1=5, k2=5, seed=0, **_FAST))
    rm = mq.select_rm(noiseless_panel, 0.5, K1=5, K2=5, overfit=overfit)
    er = mq.select_er(noiseless_panel, 0.5, K1=5, K2=5, overfit=overfit)
    ic = mq.select_ic(noiseless_panel, 0.5, K1=5, K2=5, fit_options=_FAST, overfit=overfit)
    assert (rm.k1_hat, rm.k2_hat) == (2, 3)
    assert (er.k1_hat, er.k2_hat) == (2, 3)
    assert (ic.k1_hat, ic.k2_hat) == (2, 3)
    # redundant moments collapse to numerical zero without noise
    assert rm.sigma1_full[2:].max() < 1e-6
    assert rm.sigma2_full[3:].max() < 1e-6


def test_noisy_panel_exact_ranks(noisy_panel):
    er = mq.select_er(noisy_panel, 0.5, K1=5, K2=5, fit_options=_FAST)
    rm = mq.select_rm(noisy_panel, 0.5, K1=5, K2=5, fit_options=_FAST)
    assert (er.k1_hat, er.k2_hat) == (2, 3)
    assert (rm.k1_hat, rm.k2_hat) == (2, 3)


def test_overfit_reuse_is_equivalent_and_validated(noiseless_panel):
    overfit = mq.fit(noiseless_panel, 0.5, mq.FitConfig(k1=5, k2=5, seed=0, **_FAST))
    fresh = mq.select_er(noiseless_panel, 0.5, K1=5, K2=5, fit_options=_FAST)
    reused = mq.select_er(noiseless_panel, 0.5, K1=5, K2=5, overfit=overfit)
    assert (fresh.k1_hat, fresh.k2_hat) == (reused.k1_hat, reused.k2_hat)
    np.testing.assert_array_equal(fresh.sigma1_full, reused.sigma1_full)

    with pytest.raises(ValueError, match="ranks"):
        mq.select_er(noiseless_panel, 0.5, K1=4, K2=4, overfit=overfit)
    other = mq.gen_panel(mq.DgpConfig(T=10, p1=16, p2=14, theta_star=0.0, seed=1), 0.5)[0]
    with pytest.raises(ValueError, match="dimensions"):
        mq.select_er(other, 0.5, K1=5, K2=5, overfit=overfit)


def test_rm_threshold_formula(noiseless_panel):
    rm = mq.select_rm(noiseless_panel, 0.5, K1=5, K2=5, fit_options=_FAST)
    L = mq.rate_L(noiseless_panel.p1, noiseless_panel.p2, noiseless_panel.T).value
    delta = 0.5 * (rm.sigma1_full[0] + rm.sigma2_full[0])
    assert rm.threshold_used == pytest.approx(delta * L**RM_EXPONENT, rel=1e-12)
    assert rm.k1_hat == int((rm.sigma1_full > rm.threshold_used).sum())


def test_ic_surface_structure(noiseless_panel):
    overfit = mq.fit(noiseless_panel, 0.5, mq.FitConfig(k1=4, k2=4, seed=0, **_FAST))
    ic = mq.select_ic(noiseless_panel, 0.5, K1=4, K2=4, fit_options=_FAST, overfit=overfit)
    # the over-ranked cell's value is the overfit objective plus its penalty
    assert ic.ic_surface[(4, 4)] == pytest.approx(
        overfit.objective + 8 * ic.threshold_used, rel=1e-12
    )
    # the reported pair minimizes the evaluated surface
    best = min(ic.ic_surface, key=lambda kk: (ic.ic_surface[kk], kk))
    assert best == (ic.k1_hat, ic.k2_hat)
    full = mq.select_ic(noiseless_panel, 0.5, K1=4, K2=4, full_grid=True,
                        fit_options=_FAST, overfit=overfit)
    assert (full.k1_hat, full.k2_hat) == (ic.k1_hat, ic.k2_hat)
    assert len(full.ic_surface) == 16


def test_er_cushion_and_validation(noiseless_panel):
    with pytest.raises(ValueError):
        mq.select_er(noiseless_panel, 0.5, c0=0.0)
    er = mq.select_er(noiseless_panel, 0.5, K1=5, K2=5, fit_options=_FAST)
    assert er.c0 == pytest.approx(1e-4)
    assert er.method == "ER"


def test_scale_equivariance(noisy_panel):
    big = mq.MatrixPanel(values=10.0 * noisy_panel.values, mask=noisy_panel.mask)
    a = mq.select_er(noisy_panel, 0.5, K1=4, K2=4, fit_options=_FAST)
    b = mq.select_er(big, 0.5, K1=4, K2=4, fit_options=_FAST)
    assert (a.k1_hat, a.k2_hat) == (b.k1_hat, b.k2_hat)
    # factor moments scale with the square of the data scale
    np.testing.assert_allclose(b.sigma1_full[:2] / a.sigma1_full[:2], 100.0, rtol=0.05)


def test_vec_baseline_contract():
    # rank-1 truth with mild noise (an exactly rank-1 noiseless panel makes
    # the deliberately over-ranked fit degenerate): the count is exactly 1
    cfg = mq.DgpConfig(T=25, p1=8, p2=8, k1=1, k2=1, theta_star=0.1, seed=23)
    panel, _ = mq.gen_panel(cfg, 0.5)
    k = mq.vec_select_rm(panel, 0.5, k_max=6, fit_options=_FAST)
    assert k == 1
    assert isinstance(k, int)
    assert k == mq.vec_select_rm(panel, 0.5, k_max=6, fit_options=_FAST)


def test_overfit_sigmas_descending(noisy_panel):
    s1, s2 = mq.overfit_sigmas(noisy_panel, 0.5, K1=4, K2=4, fit_options=_FAST)
    assert (np.diff(s1) <= 1e-10).all()
    assert (np.diff(s2) <= 1e-10).all()
    assert s1.shape == (4,) and s2.shape == (4,)
