"""Compactly supported high-order kernels for smoothed check-loss estimation.

A kernel of order m is a symmetric density on [-1, 1] whose moments of order
1..m-1 vanish while the m-th does not.  We build the minimal-degree such
kernel of the form k(z) = (1 - z^2)^3 * q(z) with q an even polynomial; the
cubic envelope makes k and its first two derivatives vanish at the support
edges.  The q coefficients solve a small Gram system which is computed in
exact rational arithmetic, so the moment conditions hold to machine
precision for any admissible order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = ["KernelSpec", "build_kernel", "default_bandwidth"]

# (1 - z^2)^3 in ascending powers of z
_ENVELOPE = (Fraction(1), Fraction(0), Fraction(-3), Fraction(0), Fraction(3), Fraction(0), Fraction(-1))


def _envelope_moment(n: int) -> Fraction:
    # integral of z^(2n) (1 - z^2)^3 over [-1, 1]
    return (
        Fraction(2, 2 * n + 1)
        - Fraction(6, 2 * n + 3)
        + Fraction(6, 2 * n + 5)
        - Fraction(2, 2 * n + 7)
    )


def _solve_exact(mat: list, rhs: list) -> list:
    """Gaussian elimination over Fractions; mat is square and invertible."""
    n = len(rhs)
    aug = [list(mat[i]) + [rhs[i]] for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        pivot = aug[col][col]
        aug[col] = [x / pivot for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [x - factor * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


def _exact_moment(coeffs: list, s: int) -> Fraction:
    # integral of z^s k(z) over [-1, 1] for exact polynomial coefficients
    total = Fraction(0)
    for n, c in enumerate(coeffs):
        if c == 0 or (s + n) % 2 == 1:
            continue
        total += c * Fraction(2, s + n + 1)
    return total


@dataclass(frozen=True)
class KernelSpec:
    """A polynomial kernel on [-1, 1] together with a bandwidth.

    Parameters
    ----------
    order : int
        Even moment order m >= 2.  Moments 1..m-1 of the density vanish.
        Orders below 8 are fine for smoothing the objective; the asymptotic
        normality results need m >= 8.
    coeffs : tuple of float
        Ascending polynomial coefficients of k(z) on the support.
    bandwidth : float
        Positive smoothing bandwidth h.
    """

    order: int
    coeffs: tuple
    bandwidth: float

    def __post_init__(self) -> None:
        if self.order < 2 or self.order % 2 != 0:
            raise ValueError(f"kernel order must be an even integer >= 2, got {self.order}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs or not all(np.isfinite(coeffs)):
            raise ValueError("kernel coefficients must be finite and non-empty")
        object.__setattr__(self, "coeffs", coeffs)
        # antiderivative of k, for the survival function
        integ = np.polynomial.polynomial.polyint(np.array(coeffs))
        object.__setattr__(self, "_integ", tuple(integ))
        object.__setattr__(self, "_integ_at_m1", float(np.polynomial.polynomial.polyval(-1.0, integ)))
        deriv = np.polynomial.polynomial.polyder(np.array(coeffs))
        object.__setattr__(self, "_deriv", tuple(float(c) for c in deriv))

    def density(self, z):
        """k(z); zero outside [-1, 1]."""
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) <= 1.0
        vals = np.polynomial.polynomial.polyval(np.where(inside, z, 0.0), np.array(self.coeffs))
        out = np.where(inside, vals, 0.0)
        return float(out) if out.ndim == 0 else out

    def density_derivative(self, z):
        """k'(z); zero outside [-1, 1]."""
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) <= 1.0
        vals = np.polynomial.polynomial.polyval(np.where(inside, z, 0.0), np.array(self._deriv))
        out = np.where(inside, vals, 0.0)
        return float(out) if out.ndim == 0 else out

    def survival(self, z):
        """K(z) = 1 - integral of k from -1 to z; equals 1 below the support, 0 above."""
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, -1.0, 1.0)
        cumulative = np.polynomial.polynomial.polyval(zc, np.array(self._integ)) - self._integ_at_m1
        out = 1.0 - cumulative
        return float(out) if out.ndim == 0 else out

    def moment(self, s: int) -> float:
        """Integral of z^s k(z) dz over the support."""
        total = 0.0
        for n, c in enumerate(self.coeffs):
            if (s + n) % 2 == 0:
                total += c * 2.0 / (s + n + 1)
        return total


def build_kernel(order_m: int, bandwidth: float) -> KernelSpec:
    """Construct the minimal-degree order-m kernel at the given bandwidth.

    Solves for the even polynomial q in k(z) = (1 - z^2)^3 q(z) such that
    k integrates to one and its moments of order 2, 4, ..., m-2 vanish (odd
    moments vanish by symmetry).  Raises ValueError on an odd or sub-2 order.
    """
    if order_m < 2 or order_m % 2 != 0:
        raise ValueError(f"kernel order must be an even integer >= 2, got {order_m}")
    n_coef = order_m // 2
    gram = [[_envelope_moment(r + j) for j in range(n_coef)] for r in range(n_coef)]
    rhs = [Fraction(1)] + [Fraction(0)] * (n_coef - 1)
    q = _solve_exact(gram, rhs)

    exact = [Fraction(0)] * (len(_ENVELOPE) + 2 * (n_coef - 1))
    for j, a in enumerate(q):
        for i, w in enumerate(_ENVELOPE):
            exact[2 * j + i] += a * w

    # the construction guarantees these; fail loudly if the algebra is broken
    assert _exact_moment(exact, 0) == 1
    assert all(_exact_moment(exact, s) == 0 for s in range(1, order_m))
    assert _exact_moment(exact, order_m) != 0

    return KernelSpec(order=order_m, coeffs=tuple(float(c) for c in exact), bandwidth=float(bandwidth))


def default_bandwidth(T: int, order_m: int, c_exponent: float, scale: float = 1.0) -> float:
    """Bandwidth h = scale * T^(-2c) for the order-m smoothed objective.

    The exponent c must satisfy 1/order_m < c < 1/6 strictly; both endpoints
    are rejected.  ``scale`` is the proportionality constant, 1 by default.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if order_m < 2 or order_m % 2 != 0:
        raise ValueError(f"kernel order must be an even integer >= 2, got {order_m}")
    lo, hi = 1.0 / order_m, 1.0 / 6.0
    if not lo < c_exponent < hi:
        raise ValueError(
            f"bandwidth exponent must satisfy 1/{order_m} < c < 1/6 strictly, got {c_exponent}"
        )
    if not scale > 0:
        raise ValueError(f"bandwidth scale must be positive, got {scale}")
    return float(scale * T ** (-2.0 * c_exponent))
