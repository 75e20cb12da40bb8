"""Chebyshev approximation of scalar mapping functions with analytic error bounds.

A mapping function ``phi`` is approximated on ``[-R, R]`` by projecting onto an
orthonormal Chebyshev family and truncating at degree ``M``.  The family used
throughout is

    psi_0(s) = 1,    psi_m(s) = sqrt(2) * T_m(s / R)   for m >= 1,

which is orthonormal under the Chebyshev probability measure
``(1/pi) * (1 - (s/R)^2)^(-1/2) ds / R`` on ``[-R, R]``.  With this
normalization the truncated series is exactly ``sum_m c_m psi_m`` with
``c_m = integral(phi * psi_m)``, and the monomial coefficients follow from the
triangular change-of-basis table.

The bound calculators evaluate the Bernstein-ellipse decay rates for the
logistic, exponential and smoothed-Huber mapping functions, minimizing the
resulting sup bound over the admissible ellipse parameter ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "MAX_DEGREE",
    "ChebBasis",
    "PolyApprox",
    "BoundReport",
    "cheb_basis",
    "fit_chebyshev",
    "eval_poly",
    "eval_poly_deriv",
    "truncation_sup_bound",
    "deriv_bound",
    "ellipse_sup_logit",
    "ellipse_sup_exp",
    "ellipse_sup_shuber",
    "sup_bound_logit",
    "sup_bound_exp",
    "sup_bound_shuber",
]

# Beyond this degree the monomial conversion is too ill-conditioned in float64.
MAX_DEGREE = 20

_SUP_ERR_GRID = 10_001


@dataclass(frozen=True)
class ChebBasis:
    """Orthonormal Chebyshev basis up to degree ``M`` on ``[-R, R]``.

    ``alpha[m, j]`` is the coefficient of ``(s/R)**j`` in ``psi_m(s)``; the
    table is lower triangular.
    """

    M: int
    R: float
    alpha: np.ndarray

    def eval_row(self, m: int, s: np.ndarray) -> np.ndarray:
        """Evaluate ``psi_m`` at unscaled points ``s`` from its alpha row."""
        u = np.asarray(s, dtype=float) / self.R
        return np.polynomial.polynomial.polyval(u, self.alpha[m])


@dataclass(frozen=True)
class PolyApprox:
    """Degree-``M`` polynomial approximation of a mapping function.

    ``b`` holds monomial coefficients on the unscaled variable, ``c`` holds
    the orthonormal-basis coefficients, and ``sup_err_est`` is the maximum
    absolute error measured on a dense uniform grid over ``[-R, R]``.
    """

    M: int
    R: float
    b: np.ndarray
    c: np.ndarray
    sup_err_est: float


@dataclass(frozen=True)
class BoundReport:
    """Analytic sup/derivative error bounds at the minimizing ellipse parameter."""

    r: float
    C: float
    sup_bound: float
    deriv_bound: float


def cheb_basis(M: int, R: float) -> ChebBasis:
    """Build the orthonormal Chebyshev basis table for degree ``M`` on ``[-R, R]``."""
    if M < 0:
        raise InvalidInputError(f"degree must be >= 0, got {M}")
    if M > MAX_DEGREE:
        raise InvalidInputError(
            f"degree {M} exceeds the supported maximum {MAX_DEGREE}; the "
            "monomial conversion is ill-conditioned beyond that"
        )
    if not (R > 0):
        raise InvalidInputError(f"interval half-width must be positive, got {R}")
    table = np.zeros((M + 1, M + 1))
    table[0, 0] = 1.0
    if M >= 1:
        table[1, 1] = 1.0
    for m in range(1, M):
        # T_{m+1}(u) = 2 u T_m(u) - T_{m-1}(u)
        table[m + 1, 1:] = 2.0 * table[m, :-1]
        table[m + 1] -= table[m - 1]
    alpha = table.copy()
    alpha[1:] *= math.sqrt(2.0)
    return ChebBasis(M=M, R=float(R), alpha=alpha)


def quadrature_nodes(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Chebyshev angles and nodes used for the coefficient integrals."""
    Q = max(64, 4 * M + 1)
    q = np.arange(1, Q + 1)
    theta = (2 * q - 1) * np.pi / (2 * Q)
    return theta, np.cos(theta)


def fit_chebyshev(phi: Callable[[np.ndarray], np.ndarray], M: int, R: float) -> PolyApprox:
    """Fit the order-``M`` Chebyshev approximation of ``phi`` on ``[-R, R]``.

    Parameters
    ----------
    phi : callable
        Scalar function, vectorized over numpy arrays, finite on ``[-R, R]``.
    M : int
        Truncation degree, ``0 <= M <= MAX_DEGREE``.
    R : float
        Half-width of the approximation interval.

    Returns
    -------
    PolyApprox
        Basis coefficients, monomial coefficients and the grid-estimated
        sup error.
    """
    basis = cheb_basis(M, R)
    theta, u = quadrature_nodes(M)
    Q = theta.size
    vals = np.asarray(phi(R * u), dtype=float)
    if vals.shape != u.shape:
        raise InvalidInputError("phi must map an array of nodes to an equal-shaped array")
    if not np.all(np.isfinite(vals)):
        bad = R * u[~np.isfinite(vals)][0]
        raise InvalidInputError(f"phi is not finite at quadrature node s={bad!r}")

    c = np.empty(M + 1)
    c[0] = vals.mean()
    for m in range(1, M + 1):
        c[m] = math.sqrt(2.0) / Q * float(vals @ np.cos(m * theta))

    # scaled monomial coefficients, then undo the s = R*u substitution
    b_scaled = basis.alpha.T @ c
    b = b_scaled / R ** np.arange(M + 1)

    grid = np.linspace(-R, R, _SUP_ERR_GRID)
    approx = _horner(b, grid)
    sup_err = float(np.max(np.abs(np.asarray(phi(grid), dtype=float) - approx)))
    return PolyApprox(M=M, R=float(R), b=b, c=c, sup_err_est=sup_err)


def _horner(b: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.full_like(np.asarray(s, dtype=float), b[-1])
    for coeff in b[-2::-1]:
        out = out * s + coeff
    return out


def eval_poly(p: PolyApprox, s) -> np.ndarray | float:
    """Evaluate the monomial form of ``p`` at ``s`` by Horner's scheme."""
    arr = np.asarray(s, dtype=float)
    out = _horner(p.b, arr)
    return float(out) if np.isscalar(s) or arr.ndim == 0 else out


def eval_poly_deriv(p: PolyApprox, s) -> np.ndarray | float:
    """Evaluate the derivative of the monomial form of ``p`` at ``s``."""
    db = p.b[1:] * np.arange(1, p.M + 1)
    if db.size == 0:
        db = np.zeros(1)
    arr = np.asarray(s, dtype=float)
    out = _horner(db, arr)
    return float(out) if np.isscalar(s) or arr.ndim == 0 else out


# --- analytic bounds -------------------------------------------------------


def truncation_sup_bound(C: float, r: float, M: int) -> float:
    """Sup-error bound ``C / ((r - 1) r^M)`` for a function analytic on the
    Bernstein ellipse of parameter ``r`` with modulus at most ``C`` there."""
    if not (r > 1):
        raise InvalidInputError(f"ellipse parameter must exceed 1, got {r}")
    return C / ((r - 1.0) * r**M)


def deriv_bound(C: float, r: float, M: int) -> float:
    """Derivative-error bound for the same analytic class.

    Evaluates ``C r^-M (r+1)/(r-1)^4 [M^2 r(r+1) + M(2r^2+r+1) + r(r+1)]``.
    """
    if not (C > 0):
        raise InvalidInputError(f"ellipse sup must be positive, got {C}")
    if not (r > 1):
        raise InvalidInputError(f"ellipse parameter must exceed 1, got {r}")
    poly = M * M * r * (r + 1.0) + M * (2.0 * r * r + r + 1.0) + r * (r + 1.0)
    return C * r ** (-M) * (r + 1.0) / (r - 1.0) ** 4 * poly


def ellipse_sup_logit(r: float, R: float) -> float:
    """Modulus sup of the rescaled logistic mapping on the ellipse of parameter ``r``.

    Computed as ``|log(1 + exp(-i R (r - 1/r) / 2))|`` with complex arithmetic;
    valid for ``1 < r < pi/R + sqrt(pi^2/R^2 + 1)``.
    """
    z = 1.0 + np.exp(-0.5j * R * (r - 1.0 / r))
    return float(abs(np.log(complex(z))))


def ellipse_sup_exp(r: float, R: float) -> float:
    """Modulus sup of ``exp(R s)`` on the ellipse of parameter ``r``."""
    return math.exp(0.5 * R * (r + 1.0 / r))


def ellipse_sup_shuber(r: float, R: float, b_scale: float) -> float:
    """Modulus sup of the rescaled smoothed-Huber mapping on the ellipse.

    The branch point sits at ``i b/R``, so ``r`` must stay below
    ``b/R + sqrt(b^2/R^2 + 1)``.  The sup is attained at the real vertex
    ``(r^2 + 1) / (2 r)``.
    """
    zr = (r * r + 1.0) / (2.0 * r)
    return b_scale**2 * (math.sqrt(1.0 + (R * zr / b_scale) ** 2) - 1.0)


def _golden_min(f: Callable[[float], float], lo: float, hi: float, rel_tol: float = 1e-8) -> float:
    """Golden-section minimizer; ties break toward the smaller argument."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol * max(abs(a), abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return c if fc <= fd else d

def _minimized_bound(C_of_r: Callable[[float], float], r_hi: float, M: int) -> BoundReport:
    if not (r_hi > 1.0):
        raise InvalidInputError(f"internal error: degenerate r search interval (1, {r_hi})")
    eps = 1e-9 * (r_hi - 1.0)

    def objective(r: float) -> float:
        return truncation_sup_bound(C_of_r(r), r, M)

    r_star = _golden_min(objective, 1.0 + eps, r_hi - eps)
    C = C_of_r(r_star)
    return BoundReport(
        r=r_star,
        C=C,
        sup_bound=truncation_sup_bound(C, r_star, M),
        deriv_bound=deriv_bound(C, r_star, M),
    )


def sup_bound_logit(R: float, M: int) -> BoundReport:
    """Minimized sup/derivative error bounds for the logistic mapping on ``[-R, R]``."""
    if M < 0 or not (R > 0):
        raise InvalidInputError("require M >= 0 and R > 0")
    r_hi = np.pi / R + math.sqrt(np.pi**2 / R**2 + 1.0)
    return _minimized_bound(lambda r: ellipse_sup_logit(r, R), r_hi, M)


def sup_bound_exp(R: float, M: int) -> BoundReport:
    """Minimized bounds for ``exp(R s)`` on ``[-R, R]``.

    The function is entire, so the admissible interval is unbounded above;
    an upper bracket is grown until the objective starts increasing.
    """
    if M < 0 or not (R > 0):
        raise InvalidInputError("require M >= 0 and R > 0")

    def objective(r: float) -> float:
        return truncation_sup_bound(ellipse_sup_exp(r, R), r, M)

    r_hi = 2.0
    while objective(1.5 * r_hi) < objective(r_hi):
        r_hi *= 1.5
    return _minimized_bound(lambda r: ellipse_sup_exp(r, R), 1.5 * r_hi, M)


def sup_bound_shuber(R: float, M: int, b_scale: float) -> BoundReport:
    """Minimized bounds for the smoothed-Huber mapping with scale ``b_scale``."""
    if M < 0 or not (R > 0):
        raise InvalidInputError("require M >= 0 and R > 0")
    if not (b_scale > 0):
        raise InvalidInputError(f"huber scale must be positive, got {b_scale}")
    r_hi = b_scale / R + math.sqrt(b_scale**2 / R**2 + 1.0)
    return _minimized_bound(lambda r: ellipse_sup_shuber(r, R, b_scale), r_hi, M)
