"""Alternating estimation for matrix quantile factor models.

The estimator minimizes the masked check-loss objective over the triple
(R, C, {F_t}) by block coordinate descent.  Each block update is a family of
independent linear quantile regressions sharing one design matrix:

* row block: p1 regressions on the (T*p2, k1) design with rows (F_t c_j)';
* column block: p2 regressions on the (T*p1, k2) design with rows (F_t' r_i)';
* factor block: T regressions of the vectorized F_t on design rows r_i (x) c_j.

Row and column blocks go through the batched check-loss solver.  The factor
block gets a dedicated majorize-minimize loop because its weighted Gram
matrix factorizes over the Kronecker structure, cutting the cost per
majorization step from O(T p1 p2 k1^2 k2^2) to O(T p1 p2 (k1^2 + k2^2));
this is what keeps rank-overfitted fits affordable.

After the row and column updates the triple is renormalized so that
R'R/p1 = I, C'C/p2 = I and the factor second-moment matrices are diagonal
with descending entries, with column signs pinned by the first sufficiently
nonzero loading entry.  The transformation leaves every fitted surface
R F_t C' unchanged, so renormalizing never moves the objective.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    FactorParams,
    FitResult,
    MatrixPanel,
    TauLike,
    as_quantile,
    common_component,
    objective,
    smoothed_objective,
    theta_distance,
)
from .kernels import KernelSpec, build_kernel, default_bandwidth
from .qrsolve import (
    MM_STAGES,
    _solve_batch_ridged,
    solve_qr_batch,
    solve_qr_smoothed_batch,
)

__all__ = [
    "FitConfig",
    "KernelSpec",
    "AsymptoticStats",
    "init_random",
    "normalize",
    "fit",
    "smoothed_fit",
    "build_kernel",
    "default_bandwidth",
    "asymptotic_stats",
    "impute",
]

SIGN_TOL = 1e-10  # |entry| below this does not determine a column sign
TIE_TOL = 1e-8  # relative gap under which factor moments count as tied

# inner-solver schedules: a cold start walks the full perturbation ladder,
# warm-started sweeps only polish the last rungs
_COLD_STAGES = MM_STAGES
_WARM_STAGES = (1e-6, 1e-8)
_COLD_CAP = 30
_WARM_CAP = 10
_STAGE_TOL = 1e-9


@dataclass(frozen=True)
class FitConfig:
    """Controls for :func:`fit` and :func:`smoothed_fit`.

    Convergence is declared when either the relative objective change over a
    sweep drops below obj_rel_tol or the surface distance between successive
    sweeps drops below param_tol.  Each restart draws fresh starting values
    from a seed derived deterministically from ``seed``; the restart with
    the lowest final objective wins.
    """

    k1: int
    k2: int
    max_outer_iters: int = 100
    obj_rel_tol: float = 1e-6
    param_tol: float = 1e-5
    n_restarts: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"factor ranks must be >= 1, got ({self.k1}, {self.k2})")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if not (self.obj_rel_tol > 0 and self.param_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


@dataclass(frozen=True)
class AsymptoticStats:
    """Plug-in quantities for entrywise loading inference.

    phi stacks the p1 matrices Phi_i = f_e(0) * (1/(T p2)) sum_{t,j}
    F_t c_j c_j' F_t'; under a homogeneous error density they coincide, and
    with normalized parameters each equals f_e(0) * diag(sigma1).
    density_at_zero is the kernel estimate of the error density at its
    tau-quantile (residuals are recentered before estimation).
    """

    tau: float
    phi: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    density_at_zero: float
    density_bandwidth: float

    def row_loading_covariance(self, i: int) -> np.ndarray:
        """tau(1-tau) Phi_i^{-1} Sigma1 Phi_i^{-1}; scale by 1/(T p2) for use."""
        inv = np.linalg.inv(self.phi[i])
        middle = np.diag(self.sigma1)
        return self.tau * (1.0 - self.tau) * (inv @ middle @ inv)


def init_random(p1: int, p2: int, T: int, k1: int, k2: int, seed: int) -> FactorParams:
    """Draw i.i.d. standard normal starting values and normalize them.

    Draw order is fixed (R, then C, then the factor stack) so a seed pins
    the full starting point.
    """
    if k1 > p1 or k2 > p2:
        raise ValueError(
            f"ranks ({k1}, {k2}) cannot exceed panel dimensions ({p1}, {p2})"
        )
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((p1, k1))
    C = rng.standard_normal((p2, k2))
    F = rng.standard_normal((T, k1, k2))
    return normalize(FactorParams(R=R, C=C, F=F))


def _sign_fix(R: np.ndarray, C: np.ndarray, F: np.ndarray) -> tuple:
    # first entry of each loading column that clears SIGN_TOL must be positive
    for a in range(R.shape[1]):
        col = R[:, a]
        nz = np.nonzero(np.abs(col) > SIGN_TOL)[0]
        if nz.size and col[nz[0]] < 0:
            R[:, a] = -col
            F[:, a, :] = -F[:, a, :]
    for b in range(C.shape[1]):
        col = C[:, b]
        nz = np.nonzero(np.abs(col) > SIGN_TOL)[0]
        if nz.size and col[nz[0]] < 0:
            C[:, b] = -col
            F[:, :, b] = -F[:, :, b]
    return R, C, F


def normalize(params: FactorParams) -> FactorParams:
    """Rotate a parameter triple into the identified representation.

    Output satisfies R'R/p1 = I, C'C/p2 = I, and both factor second-moment
    matrices sum_t F_t F_t'/T and sum_t F_t' F_t/T diagonal with descending
    entries, while every surface R F_t C' is preserved exactly.  Rank
    deficient loadings cannot be normalized and are rejected; (near-)tied
    moment eigenvalues leave column order and sign arbitrary, which is
    reported as a warning.
    """
    R, C, F = params.R, params.C, params.F
    p1, k1 = R.shape
    p2, k2 = C.shape
    T = F.shape[0]

    UR, sR, VtR = np.linalg.svd(R, full_matrices=False)
    UC, sC, VtC = np.linalg.svd(C, full_matrices=False)
    for name, s, p, k in (("R", sR, p1, k1), ("C", sC, p2, k2)):
        if s[0] == 0.0 or s[-1] <= max(p, k) * np.finfo(float).eps * s[0]:
            raise ValueError(f"cannot normalize: {name} is rank deficient")
    QR = sR[:, None] * VtR
    QC = sC[:, None] * VtC

    scale = T * p1 * p2
    CtC = C.T @ C
    RtR = R.T @ R
    mid1 = np.matmul(np.matmul(F, CtC), F.transpose(0, 2, 1)).sum(axis=0)
    mid2 = np.matmul(np.matmul(F.transpose(0, 2, 1), RtR), F).sum(axis=0)
    S1 = QR @ mid1 @ QR.T / scale
    S2 = QC @ mid2 @ QC.T / scale

    lam1, G1 = np.linalg.eigh(S1)
    lam2, G2 = np.linalg.eigh(S2)
    lam1, G1 = lam1[::-1], G1[:, ::-1]
    lam2, G2 = lam2[::-1], G2[:, ::-1]
    for lam in (lam1, lam2):
        gaps = np.abs(np.diff(lam))
        ref = np.maximum(np.abs(lam[:-1]), 1e-300)
        if lam.size > 1 and np.any(gaps <= TIE_TOL * ref):
            warnings.warn(
                "factor moment eigenvalues are tied to within tolerance; "
                "column order and sign are arbitrary among the tied group",
                stacklevel=2,
            )
            break

    Rn = np.sqrt(p1) * (UR @ G1)
    Cn = np.sqrt(p2) * (UC @ G2)
    left = G1.T @ QR
    right = QC.T @ G2
    Fn = np.matmul(np.matmul(left[None], F), right[None]) / np.sqrt(p1 * p2)
    Rn, Cn, Fn = _sign_fix(Rn, Cn, Fn)
    return FactorParams(R=Rn, C=Cn, F=Fn)


def _check_fit_inputs(panel: MatrixPanel, config: FitConfig) -> None:
    if config.k1 > panel.p1 or config.k2 > panel.p2:
        raise ValueError(
            f"ranks ({config.k1}, {config.k2}) cannot exceed "
            f"panel dimensions ({panel.p1}, {panel.p2})"
        )
    mask = panel.mask
    rows = np.nonzero(~mask.any(axis=(0, 2)))[0]
    if rows.size:
        raise ValueError(f"row {rows[0]} of the panel has no observed entries")
    cols = np.nonzero(~mask.any(axis=(0, 1)))[0]
    if cols.size:
        raise ValueError(f"column {cols[0]} of the panel has no observed entries")
    times = np.nonzero(~mask.any(axis=(1, 2)))[0]
    if times.size:
        raise ValueError(f"time slice {times[0]} of the panel has no observed entries")


def _update_rows(panel, params, tau, warm: bool) -> np.ndarray:
    T, p1, p2 = panel.T, panel.p1, panel.p2
    design = np.matmul(params.F, params.C.T).transpose(0, 2, 1).reshape(T * p2, params.k1)
    responses = panel.values.transpose(0, 2, 1).reshape(T * p2, p1)
    include = panel.mask.transpose(0, 2, 1).reshape(T * p2, p1)
    B = solve_qr_batch(
        design,
        responses,
        tau,
        include=include,
        warm_start=params.R.T,
        stages=_WARM_STAGES if warm else _COLD_STAGES,
        stage_rel_tol=_STAGE_TOL,
        max_stage_iter=_WARM_CAP if warm else _COLD_CAP,
    )
    return B.T


def _update_cols(panel, params, tau, warm: bool) -> np.ndarray:
    T, p1, p2 = panel.T, panel.p1, panel.p2
    design = np.matmul(params.R[None], params.F).reshape(T * p1, params.k2)
    responses = panel.values.reshape(T * p1, p2)
    include = panel.mask.reshape(T * p1, p2)
    B = solve_qr_batch(
        design,
        responses,
        tau,
        include=include,
        warm_start=params.C.T,
        stages=_WARM_STAGES if warm else _COLD_STAGES,
        stage_rel_tol=_STAGE_TOL,
        max_stage_iter=_WARM_CAP if warm else _COLD_CAP,
    )
    return B.T


def _factor_perturbed_objective(U, mask_f, tau, eps):
    loss = (tau - (U <= 0.0)) * U - 0.5 * eps * np.log(eps + np.abs(U))
    return np.sum(loss * mask_f, axis=(1, 2))


def _update_factors(panel, params, tau, warm: bool) -> np.ndarray:
    """MM loop for the factor block with a Kronecker-factorized Gram matrix."""
    X, mask_f = panel.values, panel.mask.astype(float)
    R, C = params.R, params.C
    T, p1, p2 = X.shape
    k1, k2 = R.shape[1], C.shape[1]
    d = k1 * k2
    stages = _WARM_STAGES if warm else _COLD_STAGES
    cap = _WARM_CAP if warm else _COLD_CAP

    RRp = (R[:, :, None] * R[:, None, :]).reshape(p1, k1 * k1)
    CCp = (C[:, :, None] * C[:, None, :]).reshape(p2, k2 * k2)
    # constant part of the majorization stationarity condition
    drift = (2.0 * tau - 1.0) * np.matmul(
        R.T[None], np.matmul(mask_f, C)
    ).reshape(T, d)

    F = params.F.copy()
    for eps in stages:
        U = X - np.matmul(np.matmul(R, F), C.T)
        prev = _factor_perturbed_objective(U, mask_f, tau, eps)
        for _ in range(cap):
            W = mask_f / (eps + np.abs(U))
            M1 = (W.reshape(T * p1, p2) @ CCp).reshape(T, p1, k2 * k2)
            A = np.matmul(RRp.T[None], M1).reshape(T, k1, k1, k2, k2)
            A = A.transpose(0, 1, 3, 2, 4).reshape(T, d, d)
            b = np.matmul(R.T[None], np.matmul(W * X, C)).reshape(T, d) + drift
            F = _solve_batch_ridged(A, b).reshape(T, k1, k2)
            U = X - np.matmul(np.matmul(R, F), C.T)
            cur = _factor_perturbed_objective(U, mask_f, tau, eps)
            if np.all(np.abs(cur - prev) <= _STAGE_TOL * (np.abs(prev) + 1e-30)):
                break
            prev = cur
    return F


def _fit_once(panel: MatrixPanel, tau: float, config: FitConfig, seed: int) -> FitResult:
    params = init_random(panel.p1, panel.p2, panel.T, config.k1, config.k2, seed)
    trace = [objective(panel, params, tau)]
    converged = False
    sweeps = 0
    prev_obj = trace[0]
    prev_params = params
    for sweep in range(config.max_outer_iters):
        warm = sweep > 0
        params = replace(params, R=_update_rows(panel, params, tau, warm))
        params = normalize(params)
        params = replace(params, F=_update_factors(panel, params, tau, warm))
        params = replace(params, C=_update_cols(panel, params, tau, warm))
        params = normalize(params)
        obj = objective(panel, params, tau)
        trace.append(obj)
        sweeps += 1
        if abs(obj - prev_obj) <= config.obj_rel_tol * (abs(prev_obj) + 1e-30):
            converged = True
            break
        if theta_distance(prev_params, params) <= config.param_tol:
            converged = True
            break
        prev_obj = obj
        prev_params = params
    sigma1 = np.mean(np.sum(params.F * params.F, axis=2), axis=0)
    sigma2 = np.mean(np.sum(params.F * params.F, axis=1), axis=0)
    return FitResult(
        params=params,
        objective=trace[-1],
        objective_trace=tuple(trace),
        sigma1=sigma1,
        sigma2=sigma2,
        iterations=sweeps,
        converged=converged,
    )


def fit(panel: MatrixPanel, tau: TauLike, config: FitConfig) -> FitResult:
    """Alternating check-loss fit of a rank-(k1, k2) quantile factor model.

    Runs config.n_restarts independent starts (seeds derived from
    config.seed) and returns the restart with the lowest final objective.
    The returned parameters are normalized; sigma1/sigma2 expose the
    descending diagonal factor second moments.
    """
    t = as_quantile(tau).tau
    _check_fit_inputs(panel, config)
    best = None
    for r in range(config.n_restarts):
        res = _fit_once(panel, t, config, config.seed + 1_000_003 * r)
        if best is None or res.objective < best.objective:
            best = res
    return best


# ---------------------------------------------------------------------------
# smoothed estimation


def _smoothed_factor_update(panel, params, tau, kernel, tol, max_iter) -> np.ndarray:
    T = panel.T
    p1, p2 = panel.p1, panel.p2
    k1, k2 = params.k1, params.k2
    design = (params.R[:, None, :, None] * params.C[None, :, None, :]).reshape(
        p1 * p2, k1 * k2
    )
    responses = panel.values.reshape(T, p1 * p2).T
    include = panel.mask.reshape(T, p1 * p2).T
    B = solve_qr_smoothed_batch(
        design,
        responses,
        tau,
        kernel,
        include=include,
        warm_start=params.F.reshape(T, k1 * k2).T,
        tol=tol,
        max_iter=max_iter,
    )
    return B.T.reshape(T, k1, k2)


def smoothed_fit(
    panel: MatrixPanel,
    tau: TauLike,
    config: FitConfig,
    kernel: KernelSpec,
    *,
    inner_tol: float = 1e-7,
    inner_max_iter: int = 300,
    init: FactorParams = None,
) -> FitResult:
    """Alternating fit of the kernel-smoothed objective.

    Identical loop structure to :func:`fit`; every block update minimizes
    the smoothed loss instead.  The reported objective and trace are the
    smoothed objective, which is the quantity the loop monotonically
    decreases; as the bandwidth shrinks it approaches the check loss.

    The first start polishes the plain check-loss fit (or ``init`` when
    given), which is already near the smoothed optimum; any additional
    restarts are random.
    """
    t = as_quantile(tau).tau
    _check_fit_inputs(panel, config)
    if init is None:
        init = fit(panel, t, config).params
    best = None
    for r in range(config.n_restarts):
        start = init if r == 0 else None
        res = _smoothed_fit_once(
            panel, t, config, kernel, config.seed + 1_000_003 * r,
            inner_tol, inner_max_iter, start,
        )
        if best is None or res.objective < best.objective:
            best = res
    return best


def _smoothed_fit_once(panel, tau, config, kernel, seed, inner_tol, inner_max_iter, start=None):
    T, p1, p2 = panel.T, panel.p1, panel.p2
    params = start if start is not None else init_random(p1, p2, T, config.k1, config.k2, seed)
    trace = [smoothed_objective(panel, params, tau, kernel)]
    converged = False
    sweeps = 0
    prev_obj = trace[0]
    prev_params = params
    for _sweep in range(config.max_outer_iters):
        design = np.matmul(params.F, params.C.T).transpose(0, 2, 1).reshape(T * p2, params.k1)
        B = solve_qr_smoothed_batch(
            design,
            panel.values.transpose(0, 2, 1).reshape(T * p2, p1),
            tau,
            kernel,
            include=panel.mask.transpose(0, 2, 1).reshape(T * p2, p1),
            warm_start=params.R.T,
            tol=inner_tol,
            max_iter=inner_max_iter,
        )
        params = replace(params, R=B.T)
        params = normalize(params)
        params = replace(
            params,
            F=_smoothed_factor_update(panel, params, tau, kernel, inner_tol, inner_max_iter),
        )
        design = np.matmul(params.R[None], params.F).reshape(T * p1, params.k2)
        B = solve_qr_smoothed_batch(
            design,
            panel.values.reshape(T * p1, p2),
            tau,
            kernel,
            include=panel.mask.reshape(T * p1, p2),
            warm_start=params.C.T,
            tol=inner_tol,
            max_iter=inner_max_iter,
        )
        params = replace(params, C=B.T)
        params = normalize(params)
        obj = smoothed_objective(panel, params, tau, kernel)
        trace.append(obj)
        sweeps += 1
        if abs(obj - prev_obj) <= config.obj_rel_tol * (abs(prev_obj) + 1e-30):
            converged = True
            break
        if theta_distance(prev_params, params) <= config.param_tol:
            converged = True
            break
        prev_obj = obj
        prev_params = params
    sigma1 = np.mean(np.sum(params.F * params.F, axis=2), axis=0)
    sigma2 = np.mean(np.sum(params.F * params.F, axis=1), axis=0)
    return FitResult(
        params=params,
        objective=trace[-1],
        objective_trace=tuple(trace),
        sigma1=sigma1,
        sigma2=sigma2,
        iterations=sweeps,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# inference and imputation


def asymptotic_stats(
    panel: MatrixPanel,
    result: FitResult,
    tau: TauLike,
    density_bandwidth: float = None,
) -> AsymptoticStats:
    """Plug-in asymptotic quantities from a fitted model.

    Residuals on observed entries are recentered so their empirical
    tau-quantile is zero, then the error density at zero is estimated with
    a Gaussian kernel (Silverman bandwidth unless one is supplied).
    """
    t = as_quantile(tau).tau
    params = result.params
    resid = (panel.values - common_component(params))[panel.mask]
    resid = resid - np.quantile(resid, t)
    n = resid.size
    if density_bandwidth is None:
        std = float(np.std(resid))
        iqr = float(np.subtract(*np.percentile(resid, [75, 25])))
        spread = min(std, iqr / 1.34) if iqr > 0 else std
        if spread <= 0:
            raise ValueError("residual spread is degenerate; cannot pick a density bandwidth")
        bw = 0.9 * spread * n ** (-0.2)
    else:
        bw = float(density_bandwidth)
        if bw <= 0:
            raise ValueError(f"density bandwidth must be positive, got {density_bandwidth}")
    z = resid / bw
    f0 = float(np.mean(np.exp(-0.5 * z * z)) / (bw * np.sqrt(2.0 * np.pi)))

    gram_c = params.C.T @ params.C / panel.p2
    base = np.matmul(np.matmul(params.F, gram_c), params.F.transpose(0, 2, 1)).mean(axis=0)
    phi = np.broadcast_to(f0 * base, (panel.p1,) + base.shape).copy()
    return AsymptoticStats(
        tau=t,
        phi=phi,
        sigma1=result.sigma1.copy(),
        sigma2=result.sigma2.copy(),
        density_at_zero=f0,
        density_bandwidth=bw,
    )


def impute(panel: MatrixPanel, fitted) -> MatrixPanel:
    """Fill masked entries with the fitted quantile surface.

    ``fitted`` may be a FitResult or a FactorParams triple.  Observed
    entries are kept verbatim; the result has a fully observed mask.
    """
    params = fitted.params if isinstance(fitted, FitResult) else fitted
    if not isinstance(params, FactorParams):
        raise TypeError(f"expected FitResult or FactorParams, got {type(fitted).__name__}")
    surface = common_component(params)
    if surface.shape != panel.values.shape:
        raise ValueError(
            f"fitted surface shape {surface.shape} does not match panel {panel.values.shape}"
        )
    return MatrixPanel(values=np.where(panel.mask, panel.values, surface))
