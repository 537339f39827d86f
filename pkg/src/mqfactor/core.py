"""Value types and loss/metric primitives for matrix quantile factor models.

An observed panel is a sequence of T matrices X_t (p1 x p2).  The tau-th
conditional quantile of each entry is modelled as a low-rank product
R F_t C' with row loadings R (p1 x k1), column loadings C (p2 x k2) and a
k1 x k2 factor matrix per period.  This module owns the container types and
the operations everything else builds on: the check loss, the masked
empirical objective and its kernel-smoothed variant, and the distances used
to compare parameter triples and loading spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .kernels import KernelSpec

__all__ = [
    "QuantileLevel",
    "MatrixPanel",
    "FactorParams",
    "FitResult",
    "RateL",
    "as_quantile",
    "check_loss",
    "objective",
    "smoothed_objective",
    "theta_distance",
    "loading_distance",
    "space_similarity",
    "common_component",
    "rate_L",
]


def _freeze(obj, name: str, arr: np.ndarray) -> None:
    # bypass frozen-dataclass immutability once, then lock the buffer itself
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class QuantileLevel:
    """A quantile level tau, restricted to the open interval (0, 1)."""

    tau: float

    def __post_init__(self) -> None:
        tau = float(self.tau)
        if not math.isfinite(tau) or not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie strictly inside (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)


TauLike = Union[QuantileLevel, float]


def as_quantile(tau: TauLike) -> QuantileLevel:
    """Coerce a float (or pass through a QuantileLevel) to a validated level."""
    if isinstance(tau, QuantileLevel):
        return tau
    return QuantileLevel(float(tau))


@dataclass(frozen=True)
class MatrixPanel:
    """A length-T sequence of p1 x p2 observation matrices plus a mask.

    Parameters
    ----------
    values : (T, p1, p2) array
        Observed entries.  Values under a False mask are ignored everywhere
        and stored as 0 so they can never leak into a computation.
    mask : (T, p1, p2) bool array, optional
        True marks an observed entry.  Defaults to all-observed.

    Entries where ``mask`` is True must be finite; a panel with no observed
    entry at all is rejected.
    """

    values: np.ndarray
    mask: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 3:
            raise ValueError(f"panel values must have shape (T, p1, p2), got {vals.shape}")
        if min(vals.shape) < 1:
            raise ValueError(f"panel dimensions must be positive, got {vals.shape}")
        if self.mask is None:
            mask = np.ones(vals.shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != vals.shape:
                raise ValueError(
                    f"mask shape {mask.shape} does not match values shape {vals.shape}"
                )
        if not mask.any():
            raise ValueError("panel has no observed entries")
        vals = np.where(mask, vals, 0.0)
        if not np.isfinite(vals).all():
            raise ValueError("observed panel entries must be finite")
        _freeze(self, "values", vals)
        _freeze(self, "mask", mask)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p1(self) -> int:
        return self.values.shape[1]

    @property
    def p2(self) -> int:
        return self.values.shape[2]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class FactorParams:
    """A parameter triple (R, C, {F_t}) for the low-rank quantile model.

    R is p1 x k1, C is p2 x k2 and F stacks the T factor matrices into a
    (T, k1, k2) array.  Shapes must be mutually consistent and entries finite.
    """

    R: np.ndarray
    C: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.R, dtype=float)
        C = np.array(self.C, dtype=float)
        F = np.array(self.F, dtype=float)
        if R.ndim != 2 or C.ndim != 2 or F.ndim != 3:
            raise ValueError(
                f"expected R (p1,k1), C (p2,k2), F (T,k1,k2); "
                f"got {R.shape}, {C.shape}, {F.shape}"
            )
        if F.shape[1] != R.shape[1] or F.shape[2] != C.shape[1]:
            raise ValueError(
                f"factor shape {F.shape} does not match loadings "
                f"({R.shape[1]} rows, {C.shape[1]} columns expected)"
            )
        if min(R.shape) < 1 or min(C.shape) < 1 or F.shape[0] < 1:
            raise ValueError("all parameter dimensions must be positive")
        for name, arr in (("R", R), ("C", C), ("F", F)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
        _freeze(self, "R", R)
        _freeze(self, "C", C)
        _freeze(self, "F", F)

    @property
    def T(self) -> int:
        return self.F.shape[0]

    @property
    def p1(self) -> int:
        return self.R.shape[0]

    @property
    def p2(self) -> int:
        return self.C.shape[0]

    @property
    def k1(self) -> int:
        return self.R.shape[1]

    @property
    def k2(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Outcome of an alternating fit.

    sigma1 and sigma2 hold the diagonal second moments of the fitted factors
    (row side and column side), sorted in descending order by the
    normalization.  objective_trace records the objective after every
    completed sweep, starting with the value at the initial parameters.
    """

    params: FactorParams
    objective: float
    objective_trace: tuple
    sigma1: np.ndarray
    sigma2: np.ndarray
    iterations: int
    converged: bool

    def __post_init__(self) -> None:
        _freeze(self, "sigma1", np.array(self.sigma1, dtype=float))
        _freeze(self, "sigma2", np.array(self.sigma2, dtype=float))
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))


@dataclass(frozen=True)
class RateL:
    """The convergence rate L = min{sqrt(p1*p2), sqrt(p2*T), sqrt(p1*T)}."""

    p1: int
    p2: int
    T: int
    value: float


def rate_L(p1: int, p2: int, T: int) -> RateL:
    """Rate constant for a panel of T matrices of size p1 x p2."""
    for name, v in (("p1", p1), ("p2", p2), ("T", T)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    value = min(math.sqrt(p1 * p2), math.sqrt(p2 * T), math.sqrt(p1 * T))
    return RateL(p1=int(p1), p2=int(p2), T=int(T), value=value)


def check_loss(u, tau: TauLike):
    """Check loss rho_tau(u) = (tau - 1{u <= 0}) * u, elementwise."""
    t = as_quantile(tau).tau
    arr = np.asarray(u, dtype=float)
    out = (t - (arr <= 0.0)) * arr
    if out.ndim == 0:
        return float(out)
    return out


def common_component(params: FactorParams) -> np.ndarray:
    """The T x p1 x p2 array of fitted quantile surfaces R F_t C'."""
    # batched (p1,k1)@(T,k1,k2)@(k2,p2); cheap relative to any solver pass
    return np.matmul(np.matmul(params.R, params.F), params.C.T)


def _check_same_dims(panel: MatrixPanel, params: FactorParams) -> None:
    if (panel.T, panel.p1, panel.p2) != (params.T, params.p1, params.p2):
        raise ValueError(
            f"panel dims (T={panel.T}, p1={panel.p1}, p2={panel.p2}) do not match "
            f"params dims (T={params.T}, p1={params.p1}, p2={params.p2})"
        )


def objective(panel: MatrixPanel, params: FactorParams, tau: TauLike) -> float:
    """Masked empirical check loss, divided by p1*p2*T.

    Masked-out entries contribute zero but the divisor stays p1*p2*T, so
    objective values are comparable across masks of the same panel shape.
    The reduction is a single fixed-order sum over the (T, p1, p2) layout.
    """
    _check_same_dims(panel, params)
    resid = panel.values - common_component(params)
    loss = check_loss(resid, tau)
    return float(np.sum(np.where(panel.mask, loss, 0.0)) / panel.values.size)


def smoothed_objective(
    panel: MatrixPanel, params: FactorParams, tau: TauLike, kernel: "KernelSpec"
) -> float:
    """Kernel-smoothed analogue of :func:`objective`.

    Each observed residual u contributes (tau - K(u/h)) * u where K is the
    kernel's survival function and h its bandwidth.  Outside the kernel
    support this reduces to the check loss exactly: u/h > 1 contributes
    tau*u and u/h < -1 contributes (tau-1)*u.
    """
    t = as_quantile(tau).tau
    _check_same_dims(panel, params)
    resid = panel.values - common_component(params)
    loss = (t - kernel.survival(resid / kernel.bandwidth)) * resid
    return float(np.sum(np.where(panel.mask, loss, 0.0)) / panel.values.size)


def theta_distance(a: FactorParams, b: FactorParams) -> float:
    """Root mean squared gap between two parameter triples' quantile surfaces.

    d(a, b) = sqrt( sum_t ||R_a F_at C_a' - R_b F_bt C_b'||_F^2 / (p1*p2*T) ).
    The two triples must describe panels of the same shape; their ranks may
    differ.  Invariant under any rotation that leaves the surfaces unchanged.
    """
    ca = common_component(a)
    cb = common_component(b)
    if ca.shape != cb.shape:
        raise ValueError(f"panel shapes differ: {ca.shape} vs {cb.shape}")
    diff = ca - cb
    return float(np.sqrt(np.sum(diff * diff) / diff.size))


def _require_normalized(name: str, a: np.ndarray, tol: float) -> None:
    p, k = a.shape
    gram = a.T @ a / p
    dev = float(np.max(np.abs(gram - np.eye(k))))
    if dev > tol:
        raise ValueError(
            f"{name} loading matrix is not normalized: max |A'A/p - I| = {dev:.3e} > {tol:.1e}"
        )


def loading_distance(truth: np.ndarray, estimate: np.ndarray, *, tol: float = 1e-6) -> float:
    """Distance between the column spaces of two normalized p x k loadings.

    D = sqrt(1 - tr(A_hat' A0 A0' A_hat) / (k p^2)), which is 0 when the two
    span the same space and 1 when orthogonal.  Both inputs must satisfy
    A'A/p = I_k to within ``tol``.
    """
    a0 = np.asarray(truth, dtype=float)
    ah = np.asarray(estimate, dtype=float)
    if a0.ndim != 2 or a0.shape != ah.shape:
        raise ValueError(f"loading shapes differ: {a0.shape} vs {ah.shape}")
    _require_normalized("first", a0, tol)
    _require_normalized("second", ah, tol)
    p, k = a0.shape
    cross = ah.T @ a0 / p
    return float(math.sqrt(max(1.0 - np.sum(cross * cross) / k, 0.0)))


def space_similarity(a: np.ndarray, b: np.ndarray, *, tol: float = 1e-6) -> float:
    """Similarity tr(A1' A2 A2' A1 / p^2) / k between normalized loadings.

    Equals 1 - loading_distance(a, b)**2 for identically shaped inputs; 1
    means identical column spaces, 0 means orthogonal ones.
    """
    a1 = np.asarray(a, dtype=float)
    a2 = np.asarray(b, dtype=float)
    if a1.ndim != 2 or a1.shape != a2.shape:
        raise ValueError(f"loading shapes differ: {a1.shape} vs {a2.shape}")
    _require_normalized("first", a1, tol)
    _require_normalized("second", a2, tol)
    p, k = a1.shape
    cross = a1.T @ a2 / p
    return float(np.sum(cross * cross) / k)
