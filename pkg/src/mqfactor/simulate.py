"""Synthetic panels and replication experiments.

The data generating process draws i.i.d. standard normal loadings, AR(1)
factor matrices and an AR(1) scalar volatility multiplier,

    X_t = R F_t C' + theta_star * g_t * E_t,

with idiosyncratic noise E_t drawn i.i.d. normal, t(3) or t(1), optionally
passed through a first-order moving average over time, rows and columns.
Both AR chains start from their stationary law, and the draw order is fixed
(R, C, factor chain, volatility chain, noise field) so one seed pins the
panel regardless of the quantile level under study.

At tau = 0.5 the conditional quantile surface is R F_t C' itself.  Away
from the median the noise contributes its tau-quantile q_tau, which loads
on an extra rank-one direction: the truth becomes (R, 1), (C, 1) with
factors blockdiag(F_t, theta_star * q_tau * g_t), so the effective ranks
grow by one whenever theta_star * q_tau != 0.  Truths are normalized
replication by replication.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .core import (
    FactorParams,
    MatrixPanel,
    as_quantile,
    loading_distance,
    TauLike,
)
from .estimator import (
    FitConfig,
    asymptotic_stats,
    build_kernel,
    default_bandwidth,
    fit,
    normalize,
    smoothed_fit,
)
from . import selection as _selection

__all__ = [
    "DgpConfig",
    "SimTruth",
    "gen_panel",
    "corrupt",
    "mask_random",
    "align_columns",
    "run_selection_experiment",
    "run_loading_experiment",
    "run_clt_experiment",
]

_NOISE_LAWS = ("normal", "t3", "t1")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic data generating process.

    constant_noise_scale pins g_t = 1 (no volatility chain), the design
    used for the asymptotic-normality experiment together with ar_coef = 0,
    which makes the factor entries i.i.d. standard normal.
    """

    T: int
    p1: int
    p2: int
    k1: int = 2
    k2: int = 3
    theta_star: float = 3.0
    noise: str = "normal"
    ar_coef: float = 0.2
    dependent_errors: bool = False
    constant_noise_scale: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        for name, v in (("T", self.T), ("p1", self.p1), ("p2", self.p2)):
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"ranks must be >= 1, got ({self.k1}, {self.k2})")
        if self.noise not in _NOISE_LAWS:
            raise ValueError(f"noise must be one of {_NOISE_LAWS}, got {self.noise!r}")
        if not self.theta_star >= 0:
            raise ValueError(f"theta_star must be >= 0, got {self.theta_star}")
        if not abs(self.ar_coef) < 1:
            raise ValueError(f"ar_coef must satisfy |a| < 1, got {self.ar_coef}")


@dataclass(frozen=True)
class SimTruth:
    """Normalized true parameters of a generated panel at a quantile level."""

    params: FactorParams
    q_tau: float
    effective_k1: int
    effective_k2: int


def _noise_quantile(noise: str, tau: float) -> float:
    if tau == 0.5:
        return 0.0  # every supported law is symmetric; dodge ppf roundoff
    if noise == "normal":
        return float(stats.norm.ppf(tau))
    df = 3 if noise == "t3" else 1
    return float(stats.t.ppf(tau, df))


def _draw_noise(rng: np.random.Generator, noise: str, shape: tuple) -> np.ndarray:
    if noise == "normal":
        return rng.standard_normal(shape)
    return rng.standard_t(3 if noise == "t3" else 1, size=shape)


def ma_dependent_field(V: np.ndarray) -> np.ndarray:
    """First-order moving average over time, rows and columns.

    eps[t,i,j] = V[t,i,j] + 0.2 V[t-1,i,j] + 0.2 V[t,i-1,j] + 0.2 V[t,i,j-1],
    with out-of-range lags treated as zero.  Interior cells therefore have
    variance (1 + 3 * 0.04) Var(V) when V has finite variance.
    """
    out = V.copy()
    out[1:] += 0.2 * V[:-1]
    out[:, 1:, :] += 0.2 * V[:, :-1, :]
    out[:, :, 1:] += 0.2 * V[:, :, :-1]
    return out


def _ar1_chain(rng: np.random.Generator, a: float, n: int, shape: tuple) -> np.ndarray:
    """AR(1) path of length n started from its stationary normal law."""
    out = np.empty((n,) + shape)
    out[0] = rng.standard_normal(shape) / np.sqrt(1.0 - a * a)
    for t in range(1, n):
        out[t] = a * out[t - 1] + rng.standard_normal(shape)
    return out


def gen_panel(cfg: DgpConfig, tau: TauLike) -> tuple:
    """Generate one synthetic panel and its normalized truth at tau.

    The panel realization depends only on cfg (tau enters the truth
    through q_tau, never the draws), so the same seed yields bitwise
    identical observations at every quantile level.
    """
    t = as_quantile(tau).tau
    if cfg.dependent_errors and t != 0.5:
        raise ValueError(
            "dependent errors have no common per-entry quantile away from the median; "
            "use tau = 0.5"
        )
    rng = np.random.default_rng(cfg.seed)
    R = rng.standard_normal((cfg.p1, cfg.k1))
    C = rng.standard_normal((cfg.p2, cfg.k2))
    F = _ar1_chain(rng, cfg.ar_coef, cfg.T, (cfg.k1, cfg.k2))
    if cfg.constant_noise_scale:
        g = np.ones(cfg.T)
    else:
        g = _ar1_chain(rng, cfg.ar_coef, cfg.T, ())
    E = _draw_noise(rng, cfg.noise, (cfg.T, cfg.p1, cfg.p2))
    if cfg.dependent_errors:
        E = ma_dependent_field(E)

    X = np.matmul(np.matmul(R, F), C.T) + cfg.theta_star * g[:, None, None] * E
    panel = MatrixPanel(values=X)

    q = _noise_quantile(cfg.noise, t)
    if cfg.theta_star * q != 0.0:
        R_aug = np.hstack([R, np.ones((cfg.p1, 1))])
        C_aug = np.hstack([C, np.ones((cfg.p2, 1))])
        F_aug = np.zeros((cfg.T, cfg.k1 + 1, cfg.k2 + 1))
        F_aug[:, : cfg.k1, : cfg.k2] = F
        F_aug[:, cfg.k1, cfg.k2] = cfg.theta_star * q * g
        truth = SimTruth(
            params=normalize(FactorParams(R=R_aug, C=C_aug, F=F_aug)),
            q_tau=q,
            effective_k1=cfg.k1 + 1,
            effective_k2=cfg.k2 + 1,
        )
    else:
        truth = SimTruth(
            params=normalize(FactorParams(R=R, C=C, F=F)),
            q_tau=q,
            effective_k1=cfg.k1,
            effective_k2=cfg.k2,
        )
    return panel, truth


def corrupt(panel: MatrixPanel, fraction: float, magnitude: float, seed: int) -> MatrixPanel:
    """Replace a random sample of observed entries by +-magnitude.

    floor(fraction * T * p1 * p2) observed entries (all of them if fewer are
    observed) are drawn uniformly without replacement and overwritten with
    magnitude times an independent fair sign.  The mask is unchanged.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    observed = np.flatnonzero(panel.mask)
    n_cor = min(int(fraction * panel.values.size), observed.size)
    values = panel.values.copy()
    if n_cor:
        picks = rng.choice(observed, size=n_cor, replace=False)
        signs = 2.0 * rng.integers(0, 2, size=n_cor) - 1.0
        values.reshape(-1)[picks] = signs * magnitude
    return MatrixPanel(values=values, mask=panel.mask.copy())


def mask_random(panel: MatrixPanel, fraction: float, seed: int) -> MatrixPanel:
    """Mask out a random sample of currently observed entries.

    floor(fraction * T * p1 * p2) observed entries are hidden (composing
    with any existing mask); the stored values underneath are zeroed by the
    panel container, so keep the original panel for scoring.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    observed = np.flatnonzero(panel.mask)
    n_hide = min(int(fraction * panel.values.size), observed.size)
    mask = panel.mask.copy()
    if n_hide:
        picks = rng.choice(observed, size=n_hide, replace=False)
        mask.reshape(-1)[picks] = False
    return MatrixPanel(values=panel.values.copy(), mask=mask)


def align_columns(estimate: np.ndarray, truth: np.ndarray) -> tuple:
    """Match estimated loading columns to true ones by absolute correlation.

    Greedy assignment on |truth' estimate| / p, largest first, then sign
    flips so matched columns correlate positively.  Returns (aligned,
    permutation, signs) with aligned[:, a] the estimate column matched to
    truth column a.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"loading shapes differ: {est.shape} vs {tru.shape}")
    p, k = est.shape
    M = tru.T @ est / p
    scores = np.abs(M).copy()
    perm = np.full(k, -1)
    for _ in range(k):
        a, b = np.unravel_index(np.argmax(scores), scores.shape)
        perm[a] = b
        scores[a, :] = -1.0
        scores[:, b] = -1.0
    signs = np.where(M[np.arange(k), perm] < 0, -1.0, 1.0)
    return est[:, perm] * signs, perm, signs


def _method_select(method, panel, tau, K1, K2, c0, fit_options, overfit=None):
    if method == "RM":
        r = _selection.select_rm(panel, tau, K1, K2, fit_options, overfit=overfit)
        return r.k1_hat, r.k2_hat
    if method == "IC":
        r = _selection.select_ic(panel, tau, K1, K2, fit_options=fit_options, overfit=overfit)
        return r.k1_hat, r.k2_hat
    if method == "ER":
        r = _selection.select_er(panel, tau, K1, K2, c0, fit_options, overfit=overfit)
        return r.k1_hat, r.k2_hat
    if method == "VEC":
        return _selection.vec_select_rm(panel, tau, fit_options=fit_options), None
    raise ValueError(f"unknown selection method {method!r}; use RM, IC, ER or VEC")


def run_selection_experiment(
    grid,
    tau: TauLike,
    n_reps: int,
    methods=("ER", "RM", "IC"),
    K1: int = 6,
    K2: int = 6,
    c0: float = _selection.DEFAULT_C0,
    fit_options: dict = None,
) -> list:
    """Selection frequencies over a grid of DGP configurations.

    Replication r of a cell uses seed cfg.seed + r.  Returns one row dict
    per (cell, method) with the mean selected ranks and the frequency of
    exactly recovering the effective ranks (for the vectorized baseline,
    of hitting their product).
    """
    rows = []
    for cfg in grid:
        per_method = {m: [] for m in methods}
        eff = None
        for rep in range(n_reps):
            panel, truth = gen_panel(replace(cfg, seed=cfg.seed + rep), tau)
            eff = (truth.effective_k1, truth.effective_k2)
            shared = None
            if any(m != "VEC" for m in methods):
                # one over-ranked fit per replication serves RM, IC and ER alike
                shared = _selection._overfit_result(panel, tau, K1, K2, fit_options)
            for m in methods:
                per_method[m].append(
                    _method_select(m, panel, tau, K1, K2, c0, fit_options, overfit=shared)
                )
        for m in methods:
            picks = per_method[m]
            if m == "VEC":
                k_hats = np.array([p[0] for p in picks], dtype=float)
                target = eff[0] * eff[1]
                rows.append(
                    {
                        "noise": cfg.noise,
                        "T": cfg.T,
                        "p1": cfg.p1,
                        "p2": cfg.p2,
                        "method": m,
                        "mean_k1": float(k_hats.mean()),
                        "mean_k2": float("nan"),
                        "freq_exact": float(np.mean(k_hats == target)),
                        "n_reps": n_reps,
                    }
                )
            else:
                k1s = np.array([p[0] for p in picks], dtype=float)
                k2s = np.array([p[1] for p in picks], dtype=float)
                exact = np.mean((k1s == eff[0]) & (k2s == eff[1]))
                rows.append(
                    {
                        "noise": cfg.noise,
                        "T": cfg.T,
                        "p1": cfg.p1,
                        "p2": cfg.p2,
                        "method": m,
                        "mean_k1": float(k1s.mean()),
                        "mean_k2": float(k2s.mean()),
                        "freq_exact": float(exact),
                        "n_reps": n_reps,
                    }
                )
    return rows


def run_loading_experiment(
    grid,
    tau: TauLike,
    n_reps: int,
    fit_options: dict = None,
) -> list:
    """Loading space recovery over a grid: mean distances for R, C and C(x)R.

    Each replication fits at the true effective ranks and measures the
    distance between estimated and true loading spaces; the Kronecker
    product column space is scored as well.
    """
    rows = []
    for cfg in grid:
        d_r, d_c, d_w = [], [], []
        for rep in range(n_reps):
            panel, truth = gen_panel(replace(cfg, seed=cfg.seed + rep), tau)
            options = {"seed": 0}
            options.update(fit_options or {})
            fcfg = FitConfig(k1=truth.effective_k1, k2=truth.effective_k2, **options)
            res = fit(panel, tau, fcfg)
            d_r.append(loading_distance(truth.params.R, res.params.R))
            d_c.append(loading_distance(truth.params.C, res.params.C))
            d_w.append(
                loading_distance(
                    np.kron(truth.params.C, truth.params.R),
                    np.kron(res.params.C, res.params.R),
                )
            )
        rows.append(
            {
                "noise": cfg.noise,
                "T": cfg.T,
                "p1": cfg.p1,
                "p2": cfg.p2,
                "mean_dist_R": float(np.mean(d_r)),
                "mean_dist_C": float(np.mean(d_c)),
                "mean_dist_W": float(np.mean(d_w)),
                "n_reps": n_reps,
            }
        )
    return rows


def run_clt_experiment(
    cfg: DgpConfig,
    tau: TauLike,
    n_reps: int,
    kernel_order: int = 8,
    bandwidth_exponent: float = 0.15,
    fit_options: dict = None,
    smoothed_options: dict = None,
) -> np.ndarray:
    """Standardized entrywise loading errors from the smoothed estimator.

    The DGP is specialized so the asymptotic variance has a closed form:
    i.i.d. standard normal factors and unit noise scale (ar_coef = 0,
    theta_star = 1, g_t = 1).  Replication r generates a panel with seed
    cfg.seed + r, runs the smoothed fit at the effective ranks, aligns the
    estimated row loadings to the truth with the closest orthogonal matrix
    (every signed column permutation is one such matrix), and emits

        sqrt(T p2) (R_hat[0,0] - R0[0,0]) * f_hat(0) * sqrt(sigma_hat) /
            sqrt(tau (1 - tau)),

    with sigma_hat the fitted factor second moment of the aligned leading
    column.  Under the theory these are asymptotically standard normal.

    Sign/permutation matching alone is not enough here: the population
    factor moments share one eigenvalue, so the fitted eigenbasis wobbles
    around the truth's by a rotation of order 1/(sqrt(T) gap), which
    dominates the entrywise error scale sqrt(T p2) targets.
    """
    t = as_quantile(tau).tau
    base = replace(cfg, ar_coef=0.0, constant_noise_scale=True, theta_star=1.0)
    kernel = build_kernel(kernel_order, default_bandwidth(base.T, kernel_order, bandwidth_exponent))
    stats_out = np.empty(n_reps)
    for rep in range(n_reps):
        panel, truth = gen_panel(replace(base, seed=base.seed + rep), t)
        options = {"seed": 0}
        options.update(fit_options or {})
        fcfg = FitConfig(k1=truth.effective_k1, k2=truth.effective_k2, **options)
        res = smoothed_fit(panel, t, fcfg, kernel, **(smoothed_options or {}))
        stats_obj = asymptotic_stats(panel, res, t)
        U, _sv, Vt = np.linalg.svd(res.params.R.T @ truth.params.R)
        rot = U @ Vt
        sigma_matched = float(np.sum(res.sigma1 * rot[:, 0] ** 2))
        err = float(res.params.R[0] @ rot[:, 0]) - truth.params.R[0, 0]
        stats_out[rep] = (
            np.sqrt(panel.T * panel.p2)
            * err
            * stats_obj.density_at_zero
            * np.sqrt(sigma_matched)
            / np.sqrt(t * (1.0 - t))
        )
    return stats_out
