"""Quantile regression subproblem solvers.

Every block update of the alternating estimator reduces to independent
linear quantile regressions, so this module is the numerical workhorse.
Two solvers are provided:

* :func:`solve_qr` minimizes the check loss by majorize-minimize on a
  perturbed objective rho_tau(u) - (eps/2) log(eps + |u|).  Each majorization
  step is a weighted least squares solve; eps is tightened on a fixed
  geometric schedule (1e-2 down to 1e-8) so the perturbed optimum tracks the
  check-loss optimum.  On flat optima any minimizer is acceptable; callers
  should compare objectives, not coefficient vectors.

* :func:`solve_qr_smoothed` minimizes the kernel-smoothed loss
  (tau - K(u/h)) * u by damped Newton steps on its exact Hessian with an
  Armijo acceptance safeguard.  The smoothed loss is differentiable but
  not convex (higher-order kernels dip negative), so descent is enforced
  explicitly and the damping grows whenever a step fails.

Both have batched variants that solve many problems sharing one design
matrix simultaneously; the alternating estimator's row and column blocks
have exactly that structure.  All iterations are plain fixed-order numpy
reductions, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TauLike, as_quantile

__all__ = [
    "QrProblem",
    "DegenerateDesignError",
    "solve_qr",
    "solve_qr_smoothed",
    "solve_qr_batch",
    "solve_qr_smoothed_batch",
]

# geometric tightening schedule for the MM perturbation
MM_STAGES = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
_RIDGE = 1e-10


class DegenerateDesignError(ValueError):
    """Raised when a quantile regression design cannot identify its coefficients."""


@dataclass(frozen=True)
class QrProblem:
    """One linear quantile regression: minimize sum_i rho_tau(y_i - x_i' beta).

    design is (n, d), responses is (n,), and include optionally deselects
    observations (True = keep).  All entries must be finite.
    """

    design: np.ndarray
    responses: np.ndarray
    tau: object
    include: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        X = np.array(self.design, dtype=float)
        y = np.array(self.responses, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"design must be 2-d, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise ValueError(f"design must be non-empty, got shape {X.shape}")
        if y.shape != (n,):
            raise ValueError(f"responses must have shape ({n},), got {y.shape}")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise ValueError("design and responses must be finite")
        if self.include is None:
            inc = np.ones(n, dtype=bool)
        else:
            inc = np.array(self.include, dtype=bool)
            if inc.shape != (n,):
                raise ValueError(f"include must have shape ({n},), got {inc.shape}")
        if not inc.any():
            raise DegenerateDesignError("no included observations")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "tau", as_quantile(self.tau))
        object.__setattr__(self, "include", inc)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]


def _solve_batch_ridged(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A[m] beta[m] = b[m] for a (M,d,d) stack, ridging only on trouble."""
    d = A.shape[-1]
    eye = np.eye(d)
    try:
        out = np.linalg.solve(A, b[..., None])[..., 0]
        if np.isfinite(out).all():
            return out
    except np.linalg.LinAlgError:
        pass
    # numerically singular somewhere: bump every diagonal by a scale-aware ridge
    scale = 1.0 + np.trace(A, axis1=-2, axis2=-1) / d
    A2 = A + (_RIDGE * scale)[..., None, None] * eye
    try:
        out = np.linalg.solve(A2, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesignError(f"normal matrix is singular beyond repair: {exc}") from exc
    if not np.isfinite(out).all():
        raise DegenerateDesignError("normal equations produced non-finite coefficients")
    return out


def _ls_init(XX: np.ndarray, X: np.ndarray, Y: np.ndarray, incl: np.ndarray) -> np.ndarray:
    """Included-observation least squares start, (d, M)."""
    n, d = X.shape
    A = (incl.T @ XX).reshape(-1, d, d)
    b = X.T @ (incl * Y)
    return _solve_batch_ridged(A, b.T).T


def _perturbed_objective(U: np.ndarray, incl: np.ndarray, tau: float, eps: float) -> np.ndarray:
    loss = (tau - (U <= 0.0)) * U - 0.5 * eps * np.log(eps + np.abs(U))
    return np.sum(loss * incl, axis=0)


def solve_qr_batch(
    design: np.ndarray,
    responses: np.ndarray,
    tau: TauLike,
    include: np.ndarray = None,
    warm_start: np.ndarray = None,
    *,
    stages: tuple = MM_STAGES,
    stage_rel_tol: float = 1e-10,
    max_stage_iter: int = 80,
) -> np.ndarray:
    """Solve M check-loss regressions sharing one (n, d) design.

    responses is (n, M); include, if given, is an (n, M) boolean selection.
    Returns the (d, M) coefficient stack.  warm_start ((d, M)) seeds the
    first majorization; otherwise a least squares fit does.
    """
    t = as_quantile(tau).tau
    X = np.asarray(design, dtype=float)
    Y = np.asarray(responses, dtype=float)
    n, d = X.shape
    incl = np.ones_like(Y) if include is None else include.astype(float)
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    drift = (2.0 * t - 1.0) * (X.T @ incl)  # constant part of the MM stationarity condition
    if warm_start is None:
        B = _ls_init(XX, X, Y, incl)
    else:
        B = np.array(warm_start, dtype=float)

    for eps in stages:
        U = Y - X @ B
        prev = _perturbed_objective(U, incl, t, eps)
        for _ in range(max_stage_iter):
            W = incl / (eps + np.abs(U))
            A = (W.T @ XX).reshape(-1, d, d)
            b = X.T @ (W * Y) + drift
            B = _solve_batch_ridged(A, b.T).T
            U = Y - X @ B
            cur = _perturbed_objective(U, incl, t, eps)
            if np.all(np.abs(cur - prev) <= stage_rel_tol * (np.abs(prev) + 1e-30)):
                break
            prev = cur
    return B


def solve_qr(problem: QrProblem, warm_start: np.ndarray = None, tol: float = 1e-10) -> np.ndarray:
    """Minimize the check loss of one :class:`QrProblem`.

    tol is the relative tolerance used inside each majorization stage.
    A design whose included rows are column rank deficient is rejected,
    since the coefficients would not be identified.
    """
    X = problem.design[problem.include]
    if np.linalg.matrix_rank(X) < problem.d:
        raise DegenerateDesignError(
            f"design has rank < {problem.d} on the included observations"
        )
    B = solve_qr_batch(
        problem.design,
        problem.responses[:, None],
        problem.tau,
        include=problem.include[:, None],
        warm_start=None if warm_start is None else np.asarray(warm_start, float)[:, None],
        stage_rel_tol=tol,
    )
    return B[:, 0]


def _smoothed_value_grad(
    X: np.ndarray,
    Y: np.ndarray,
    B: np.ndarray,
    tau: float,
    kernel,
    incl: np.ndarray,
    counts: np.ndarray,
):
    """Per-problem mean smoothed loss and its gradient; both per column."""
    h = kernel.bandwidth
    U = Y - X @ B
    Z = U / h
    surv = kernel.survival(Z)
    vals = np.sum(((tau - surv) * U) * incl, axis=0) / counts
    psi = (tau - surv + Z * kernel.density(Z)) * incl
    grad = -(X.T @ psi) / counts
    return vals, grad


def solve_qr_smoothed_batch(
    design: np.ndarray,
    responses: np.ndarray,
    tau: TauLike,
    kernel,
    include: np.ndarray = None,
    warm_start: np.ndarray = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> np.ndarray:
    """Batched minimization of the kernel-smoothed check loss.

    Shapes are as in :func:`solve_qr_batch`.  Each problem runs a damped
    Newton iteration on the exact Hessian X' diag(k(u/h)/h) X, which can be
    indefinite since higher-order kernels take negative values; an adaptive
    per-problem ridge grows until the shifted step both points downhill and
    passes an Armijo test (constant 1e-4), so every problem's objective is
    non-increasing.  Iteration stops once every problem's gradient infinity
    norm is <= tol (gradient of the mean loss over included observations).
    """
    t = as_quantile(tau).tau
    X = np.asarray(design, dtype=float)
    Y = np.asarray(responses, dtype=float)
    n, d = X.shape
    incl = np.ones_like(Y) if include is None else include.astype(float)
    counts = np.maximum(incl.sum(axis=0), 1.0)
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    if warm_start is None:
        B = _ls_init(XX, X, Y, incl)
    else:
        B = np.array(warm_start, dtype=float)
    h = kernel.bandwidth
    M = B.shape[1]
    eye = np.eye(d)

    val, grad = _smoothed_value_grad(X, Y, B, t, kernel, incl, counts)
    lam = None
    retired = np.zeros(M, dtype=bool)  # numerically stationary, no usable step
    for _ in range(max_iter):
        active = (np.max(np.abs(grad), axis=0) > tol) & ~retired
        if not active.any():
            break
        U = Y - X @ B
        Z = U / h
        # loss curvature is (2 k(z) + z k'(z)) / h, not the bare density
        W = (2.0 * kernel.density(Z) + Z * kernel.density_derivative(Z)) * incl / (h * counts)
        H = (W.T @ XX).reshape(M, d, d)
        if lam is None:
            tr = np.trace(H, axis1=1, axis2=2)
            lam = 1e-3 * (1.0 + np.abs(tr) / d)
        pending = np.nonzero(active)[0]
        for _try in range(25):
            if pending.size == 0:
                break
            A = H[pending] + lam[pending, None, None] * eye
            try:
                S = np.linalg.solve(A, grad.T[pending, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                lam[pending] *= 10.0
                continue
            Bn = B[:, pending] - S.T
            valn, gradn = _smoothed_value_grad(
                X, Y[:, pending], Bn, t, kernel, incl[:, pending], counts[pending]
            )
            gs = np.sum(grad[:, pending] * S.T, axis=0)
            # NaN objectives and uphill directions both fail this test
            ok = (gs > 0) & (valn <= val[pending] - 1e-4 * gs)
            acc = pending[ok]
            if acc.size:
                B[:, acc] = Bn[:, ok]
                val[acc] = valn[ok]
                grad[:, acc] = gradn[:, ok]
                lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
            pending = pending[~ok]
            lam[pending] *= 10.0
        retired[pending] = True
    return B


def solve_qr_smoothed(
    problem: QrProblem,
    kernel,
    warm_start: np.ndarray = None,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> np.ndarray:
    """Minimize the kernel-smoothed check loss of one :class:`QrProblem`."""
    X = problem.design[problem.include]
    if np.linalg.matrix_rank(X) < problem.d:
        raise DegenerateDesignError(
            f"design has rank < {problem.d} on the included observations"
        )
    B = solve_qr_smoothed_batch(
        problem.design,
        problem.responses[:, None],
        problem.tau,
        kernel,
        include=problem.include[:, None],
        warm_start=None if warm_start is None else np.asarray(warm_start, float)[:, None],
        tol=tol,
        max_iter=max_iter,
    )
    return B[:, 0]
