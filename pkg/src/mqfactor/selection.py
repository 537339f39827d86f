"""Factor-number selection for matrix quantile factor models.

All three rules start from a deliberately over-ranked fit at (K1, K2) and
read off the descending diagonal second moments sigma_hat of its normalized
factors.  True factor directions keep these moments bounded away from zero
while redundant ones decay at the squared estimation rate, so:

* rank minimization (RM) counts the moments above a threshold
  delta * L^(-2/3), with delta the average of the two leading moments and
  L the rate constant of the panel;
* the information criterion (IC) penalizes the check-loss objective of
  candidate rank pairs by (l1 + l2) * delta / L, searched one side at a
  time from the over-ranked fit (or over the full grid on request);
* the eigenvalue ratio (ER) picks the largest ratio of consecutive moments,
  with a small c0 * L^(-2) cushion in the denominator to keep ratios of
  vanishing moments harmless.

The thresholds must shrink as the panel grows but more slowly than the
squared estimation rate, hence the negative exponents on L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MatrixPanel, TauLike, rate_L
from .estimator import FitConfig, fit

__all__ = [
    "SelectionResult",
    "overfit_sigmas",
    "select_rm",
    "select_ic",
    "select_er",
    "vec_select_rm",
]

RM_EXPONENT = -2.0 / 3.0
DEFAULT_C0 = 1e-4


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of a factor-number selection rule.

    sigma1_full and sigma2_full are the descending factor moments of the
    over-ranked fit the rule started from.  threshold_used is the RM/IC
    comparison constant; c0 is the ER cushion.  ic_surface maps evaluated
    (l1, l2) pairs to penalized objective values (IC only).
    """

    method: str
    k1_hat: int
    k2_hat: int
    sigma1_full: np.ndarray
    sigma2_full: np.ndarray
    threshold_used: float = None
    c0: float = None
    ic_surface: dict = None


def _overfit_config(panel: MatrixPanel, K1: int, K2: int, fit_options: dict) -> FitConfig:
    options = {"seed": 0}
    options.update(fit_options or {})
    return FitConfig(k1=K1, k2=K2, **options)


def _overfit_result(panel, tau, K1, K2, fit_options):
    if K1 < 1 or K2 < 1:
        raise ValueError(f"overfit ranks must be >= 1, got ({K1}, {K2})")
    return fit(panel, tau, _overfit_config(panel, K1, K2, fit_options))


def _resolve_overfit(panel, tau, K1, K2, fit_options, overfit):
    """Reuse a caller-supplied over-ranked fit, or compute one."""
    if overfit is None:
        return _overfit_result(panel, tau, K1, K2, fit_options)
    params = overfit.params
    if (params.k1, params.k2) != (K1, K2):
        raise ValueError(
            f"supplied overfit has ranks ({params.k1}, {params.k2}), expected ({K1}, {K2})"
        )
    if (params.p1, params.p2, params.T) != (panel.p1, panel.p2, panel.T):
        raise ValueError("supplied overfit does not match the panel dimensions")
    return overfit


def overfit_sigmas(
    panel: MatrixPanel,
    tau: TauLike,
    K1: int = 6,
    K2: int = 6,
    fit_options: dict = None,
) -> tuple:
    """Descending factor moments (sigma1, sigma2) of the rank-(K1, K2) fit."""
    res = _overfit_result(panel, tau, K1, K2, fit_options)
    return res.sigma1.copy(), res.sigma2.copy()


def select_rm(
    panel: MatrixPanel,
    tau: TauLike,
    K1: int = 6,
    K2: int = 6,
    fit_options: dict = None,
    overfit=None,
) -> SelectionResult:
    """Rank minimization: count moments above delta * L^(-2/3)."""
    over = _resolve_overfit(panel, tau, K1, K2, fit_options, overfit)
    s1, s2 = over.sigma1.copy(), over.sigma2.copy()
    L = rate_L(panel.p1, panel.p2, panel.T).value
    delta = 0.5 * (s1[0] + s2[0])
    threshold = delta * L**RM_EXPONENT
    return SelectionResult(
        method="RM",
        k1_hat=int(np.sum(s1 > threshold)),
        k2_hat=int(np.sum(s2 > threshold)),
        sigma1_full=s1,
        sigma2_full=s2,
        threshold_used=float(threshold),
    )


def select_er(
    panel: MatrixPanel,
    tau: TauLike,
    K1: int = 6,
    K2: int = 6,
    c0: float = DEFAULT_C0,
    fit_options: dict = None,
    overfit=None,
) -> SelectionResult:
    """Eigenvalue ratio: argmax_k sigma_k / (sigma_{k+1} + c0 L^{-2}).

    The argmax runs over k = 1..K-1; exact ties resolve to the smallest k.
    """
    if not c0 > 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    over = _resolve_overfit(panel, tau, K1, K2, fit_options, overfit)
    s1, s2 = over.sigma1.copy(), over.sigma2.copy()
    L = rate_L(panel.p1, panel.p2, panel.T).value
    cushion = c0 / L**2

    def best(s: np.ndarray) -> int:
        if s.size == 1:
            return 1
        ratios = s[:-1] / (s[1:] + cushion)
        return int(np.argmax(ratios)) + 1  # argmax takes the first maximum

    return SelectionResult(
        method="ER",
        k1_hat=best(s1),
        k2_hat=best(s2),
        sigma1_full=s1,
        sigma2_full=s2,
        c0=float(c0),
    )


def select_ic(
    panel: MatrixPanel,
    tau: TauLike,
    K1: int = 6,
    K2: int = 6,
    full_grid: bool = False,
    fit_options: dict = None,
    overfit=None,
) -> SelectionResult:
    """Penalized objective: argmin objective(l1, l2) + (l1 + l2) * delta / L.

    The default search fixes l2 = K2 while scanning l1, then fixes the
    winning l1 and scans l2, reusing the over-ranked fit for its cell.
    full_grid=True evaluates every (l1, l2) pair instead.  Candidates with
    l1 = 0 or l2 = 0 are not in the search space.
    """
    over = _resolve_overfit(panel, tau, K1, K2, fit_options, overfit)
    s1, s2 = over.sigma1, over.sigma2
    L = rate_L(panel.p1, panel.p2, panel.T).value
    delta = 0.5 * (s1[0] + s2[0])
    penalty_unit = delta / L

    cache = {(K1, K2): over.objective}

    def cell(l1: int, l2: int) -> float:
        if (l1, l2) not in cache:
            cfg = _overfit_config(panel, l1, l2, fit_options)
            cache[(l1, l2)] = fit(panel, tau, cfg).objective
        return cache[(l1, l2)] + (l1 + l2) * penalty_unit

    surface = {}
    if full_grid:
        for l1 in range(1, K1 + 1):
            for l2 in range(1, K2 + 1):
                surface[(l1, l2)] = cell(l1, l2)
        k1_hat, k2_hat = min(surface, key=lambda kk: (surface[kk], kk))
    else:
        for l1 in range(1, K1 + 1):
            surface[(l1, K2)] = cell(l1, K2)
        k1_hat = min(range(1, K1 + 1), key=lambda l1: (surface[(l1, K2)], l1))
        for l2 in range(1, K2 + 1):
            surface[(k1_hat, l2)] = cell(k1_hat, l2)
        k2_hat = min(range(1, K2 + 1), key=lambda l2: (surface[(k1_hat, l2)], l2))

    return SelectionResult(
        method="IC",
        k1_hat=int(k1_hat),
        k2_hat=int(k2_hat),
        sigma1_full=s1.copy(),
        sigma2_full=s2.copy(),
        threshold_used=float(penalty_unit),
        ic_surface=surface,
    )


def vec_select_rm(
    panel: MatrixPanel,
    tau: TauLike,
    k_max: int = 12,
    fit_options: dict = None,
) -> int:
    """RM rule on the vectorized panel, as a baseline for comparison.

    Each p1 x p2 matrix is reshaped to a (p1*p2)-vector, i.e. a panel of
    (p1*p2) x 1 matrices fitted with k2 = 1 and K1 = k_max; the RM count on
    its row moments is returned.  The rate constant of the reshaped panel is
    min(sqrt(p1*p2), sqrt(T)), the vector factor model rate.
    """
    T = panel.T
    flat = panel.values.reshape(T, panel.p1 * panel.p2, 1)
    flat_mask = panel.mask.reshape(T, panel.p1 * panel.p2, 1)
    vec_panel = MatrixPanel(values=flat, mask=flat_mask)
    s1, _s2 = overfit_sigmas(vec_panel, tau, K1=k_max, K2=1, fit_options=fit_options)
    L = rate_L(vec_panel.p1, vec_panel.p2, T).value
    # the width-1 column side's only moment is the total factor variance,
    # so unlike the matrix rule it cannot enter the scale constant
    threshold = s1[0] * L**RM_EXPONENT
    return int(np.sum(s1 > threshold))
