"""GLM mapping functions and their term decompositions.

Every supported GLM writes its per-record log-likelihood as a sum of terms

    y**y_power * phi(y**y_in_arg_power * (x . theta) - y_offset * y)

plus an optional parameter-free base term in ``y`` alone.  This is the shape
that lets an order-``M`` polynomial approximation of each ``phi`` turn the
log-likelihood into an inner product between monomial statistics of the data
and monomials of the parameter.

The logistic mapping is special-cased throughout the package: since its label
enters only through ``y * x`` and ``y**2 = 1``, the statistics can be stored
as raw monomial sums with the polynomial coefficients applied later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, sparse

from .chebyshev import PolyApprox, fit_chebyshev
from .errors import InvalidInputError, NumericError

__all__ = [
    "Term",
    "MappingSpec",
    "mapping_logit",
    "mapping_poisson",
    "mapping_shuber",
    "mapping_cauchy",
    "mapping_gamma",
    "mapping_probit",
    "get_mapping",
    "MAPPING_FACTORIES",
    "fit_terms",
    "log_likelihood",
    "log_likelihood_grad",
    "log_likelihood_hess",
    "y_coefficient",
    "degree_weights",
]

_PROBE_GRID = np.linspace(-15.0, 15.0, 61)


@dataclass(frozen=True)
class Term:
    """One additive component of a GLM log-likelihood.

    ``y_power`` and ``y_in_arg_power`` are restricted to {0, 1}; ``y_offset``
    is the coefficient of the ``y`` shift inside the argument.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray], np.ndarray]
    y_power: int = 0
    y_in_arg_power: int = 0
    y_offset: float = 0.0
    exact_degree: int | None = None  # set when phi is itself a polynomial

    def __post_init__(self):
        if self.y_power not in (0, 1) or self.y_in_arg_power not in (0, 1):
            raise InvalidInputError("y exponents are restricted to {0, 1}")
        for f in (self.phi, self.dphi, self.d2phi):
            if not np.all(np.isfinite(f(_PROBE_GRID))):
                raise InvalidInputError("term function is not finite on the probe grid")
        # cheap smoothness probe: dphi must match finite differences of phi
        h = 1e-5
        fd = (self.phi(_PROBE_GRID + h) - self.phi(_PROBE_GRID - h)) / (2 * h)
        scale = np.maximum(1.0, np.abs(fd))
        if np.max(np.abs(fd - self.dphi(_PROBE_GRID)) / scale) > 1e-4:
            raise InvalidInputError("dphi does not match finite differences of phi")


@dataclass(frozen=True)
class MappingSpec:
    """A GLM mapping function and its term decomposition."""

    name: str
    terms: tuple[Term, ...]
    log_base: Callable[[np.ndarray], np.ndarray] | None = None
    label_mode: str | None = None  # "pm1", "01" or None
    scale: float | None = None
    raw_monomial: bool = False
    log_concave: bool = True

    @property
    def d_args(self) -> int:
        return len(self.terms)

    def canonicalize_y(self, y: np.ndarray) -> np.ndarray:
        """Map labels to the convention the mapping expects."""
        y = np.asarray(y, dtype=float)
        if self.label_mode == "pm1":
            out = np.where(y > 0, 1.0, -1.0)
            if not np.all(np.isin(y, (-1.0, 0.0, 1.0))):
                raise InvalidInputError("binary labels must be in {-1, 0, +1}")
            return out
        if self.label_mode == "01":
            if not np.all(np.isin(y, (-1.0, 0.0, 1.0))):
                raise InvalidInputError("binary labels must be in {-1, 0, +1}")
            return np.where(y > 0, 1.0, 0.0)
        return y


def _sigmoid(s):
    return special.expit(s)


def mapping_logit() -> MappingSpec:
    """Logistic regression with labels in {-1, +1}."""
    return MappingSpec(
        name="logit",
        terms=(
            Term(
                phi=lambda s: -np.logaddexp(0.0, -s),
                dphi=lambda s: _sigmoid(-s),
                d2phi=lambda s: -_sigmoid(s) * _sigmoid(-s),
                y_power=0,
                y_in_arg_power=1,
                y_offset=0.0,
            ),
        ),
        label_mode="pm1",
        raw_monomial=True,
        log_concave=True,
    )


def mapping_poisson() -> MappingSpec:
    """Poisson regression with log link; the -log y! term is parameter-free."""
    return MappingSpec(
        name="poisson",
        terms=(
            Term(
                phi=lambda s: np.asarray(s, dtype=float),
                dphi=lambda s: np.ones_like(np.asarray(s, dtype=float)),
                d2phi=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                y_power=1,
                exact_degree=1,
            ),
            Term(
                phi=lambda s: -np.exp(s),
                dphi=lambda s: -np.exp(s),
                d2phi=lambda s: -np.exp(s),
                y_power=0,
            ),
        ),
        log_base=lambda y: -special.gammaln(np.asarray(y, dtype=float) + 1.0),
        log_concave=True,
    )


def mapping_shuber(b: float = 1.0) -> MappingSpec:
    """Robust regression with the negative smoothed Huber loss, scale ``b``."""
    if not (b > 0):
        raise InvalidInputError(f"huber scale must be positive, got {b}")

    def phi(v):
        v = np.asarray(v, dtype=float)
        return -(b**2) * (np.sqrt(1.0 + (v / b) ** 2) - 1.0)

    def dphi(v):
        v = np.asarray(v, dtype=float)
        return -v / np.sqrt(1.0 + (v / b) ** 2)

    def d2phi(v):
        v = np.asarray(v, dtype=float)
        return -((1.0 + (v / b) ** 2) ** -1.5)

    return MappingSpec(
        name="shuber",
        terms=(Term(phi=phi, dphi=dphi, d2phi=d2phi, y_offset=1.0),),
        scale=b,
        log_concave=True,
    )


def mapping_cauchy(b: float = 1.0) -> MappingSpec:
    """Robust regression with the Cauchy likelihood.  Not log-concave; the
    posterior-quality guarantees of the rest of the package do not apply."""
    if not (b > 0):
        raise InvalidInputError(f"cauchy scale must be positive, got {b}")

    def phi(v):
        v = np.asarray(v, dtype=float)
        return -np.log1p((v / b) ** 2)

    def dphi(v):
        v = np.asarray(v, dtype=float)
        return -2.0 * v / (b**2 + v**2)

    def d2phi(v):
        v = np.asarray(v, dtype=float)
        return -2.0 * (b**2 - v**2) / (b**2 + v**2) ** 2

    return MappingSpec(
        name="cauchy",
        terms=(Term(phi=phi, dphi=dphi, d2phi=d2phi, y_offset=1.0),),
        scale=b,
        log_concave=False,
    )


def mapping_gamma(nu: float = 1.0) -> MappingSpec:
    """Gamma regression with log link and shape ``nu``."""
    if not (nu > 0):
        raise InvalidInputError(f"gamma shape must be positive, got {nu}")

    def log_base(y):
        y = np.asarray(y, dtype=float)
        return nu * math.log(nu) + (nu - 1.0) * np.log(y) - special.gammaln(nu)

    return MappingSpec(
        name="gamma",
        terms=(
            Term(
                phi=lambda s: -nu * np.asarray(s, dtype=float),
                dphi=lambda s: np.full_like(np.asarray(s, dtype=float), -nu),
                d2phi=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                y_power=0,
                exact_degree=1,
            ),
            Term(
                phi=lambda s: -nu * np.exp(-np.asarray(s, dtype=float)),
                dphi=lambda s: nu * np.exp(-np.asarray(s, dtype=float)),
                d2phi=lambda s: -nu * np.exp(-np.asarray(s, dtype=float)),
                y_power=1,
            ),
        ),
        log_base=log_base,
        scale=nu,
        log_concave=True,
    )


def _mills(s):
    # n(s) / Phi(-s), computed in log space
    s = np.asarray(s, dtype=float)
    logpdf = -0.5 * s**2 - 0.5 * math.log(2 * math.pi)
    return np.exp(logpdf - special.log_ndtr(-s))


def mapping_probit() -> MappingSpec:
    """Probit regression with labels in {0, 1}."""

    def phi1(s):
        return special.log_ndtr(-np.asarray(s, dtype=float))

    def dphi1(s):
        return -_mills(s)

    def d2phi1(s):
        h = _mills(s)
        return np.asarray(s, dtype=float) * h - h**2

    def phi2(s):
        s = np.asarray(s, dtype=float)
        return special.log_ndtr(s) - special.log_ndtr(-s)

    def dphi2(s):
        return _mills(-np.asarray(s, dtype=float)) + _mills(s)

    def d2phi2(s):
        s = np.asarray(s, dtype=float)
        g = _mills(-s)
        h = _mills(s)
        return (-s * g - g**2) + (s * h - h**2)

    return MappingSpec(
        name="probit",
        terms=(
            Term(phi=phi1, dphi=dphi1, d2phi=d2phi1, y_power=0),
            Term(phi=phi2, dphi=dphi2, d2phi=d2phi2, y_power=1),
        ),
        label_mode="01",
        log_concave=True,
    )


MAPPING_FACTORIES: dict[str, Callable[..., MappingSpec]] = {
    "logit": mapping_logit,
    "poisson": mapping_poisson,
    "shuber": mapping_shuber,
    "cauchy": mapping_cauchy,
    "gamma": mapping_gamma,
    "probit": mapping_probit,
}


def get_mapping(name: str, scale: float | None = None) -> MappingSpec:
    """Look up a mapping by name, passing ``scale`` where the model takes one."""
    try:
        factory = MAPPING_FACTORIES[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown model {name!r}; choose from {sorted(MAPPING_FACTORIES)}"
        ) from None
    if name in ("shuber", "cauchy", "gamma"):
        return factory(scale) if scale is not None else factory()
    return factory()


def fit_terms(spec: MappingSpec, M: int, R: float) -> tuple[PolyApprox, ...]:
    """Fit the order-``M`` Chebyshev approximation of every term of ``spec``."""
    return tuple(fit_chebyshev(t.phi, M, R) for t in spec.terms)


# --- exact likelihood computations ----------------------------------------


def _as_batches(data, batch_size=8192):
    if hasattr(data, "batches"):
        yield from data.batches(batch_size)
        return
    y, X = data
    yield np.asarray(y, dtype=float), X


def _term_args(term: Term, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    arg = s if term.y_in_arg_power == 0 else y * s
    if term.y_offset:
        arg = arg - term.y_offset * y
    return arg


def batch_log_likelihood(spec: MappingSpec, theta: np.ndarray, y: np.ndarray, X) -> np.ndarray:
    """Per-record exact log-likelihood values for one batch."""
    s = X @ theta
    total = np.zeros_like(s)
    for term in spec.terms:
        v = term.phi(_term_args(term, y, s))
        total += v if term.y_power == 0 else y * v
    if spec.log_base is not None:
        total += spec.log_base(y)
    return total


def log_likelihood(spec: MappingSpec, theta: np.ndarray, data) -> float:
    """Exact data log-likelihood, summed over a record source.

    ``data`` is either a stream exposing ``batches`` or a ``(y, X)`` pair.
    Raises :class:`NumericError` naming the first offending record when a
    non-finite contribution appears.
    """
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    offset = 0
    for y, X in _as_batches(data):
        vals = batch_log_likelihood(spec, theta, y, X)
        if not np.all(np.isfinite(vals)):
            idx = offset + int(np.flatnonzero(~np.isfinite(vals))[0])
            raise NumericError(
                f"non-finite log-likelihood contribution at record {idx}",
                record_index=idx,
            )
        total += float(vals.sum())
        offset += len(vals)
    return total


def _weighted_design_sum(X, w: np.ndarray) -> np.ndarray:
    if sparse.issparse(X):
        return np.asarray(X.T @ w).ravel()
    return X.T @ w


def log_likelihood_grad(spec: MappingSpec, theta: np.ndarray, data) -> np.ndarray:
    """Analytic gradient of the exact log-likelihood."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    offset = 0
    for y, X in _as_batches(data):
        s = X @ theta
        w = np.zeros_like(s)
        for term in spec.terms:
            dv = term.dphi(_term_args(term, y, s))
            if term.y_in_arg_power:
                dv = dv * y
            if term.y_power:
                dv = dv * y
            w += dv
        if not np.all(np.isfinite(w)):
            idx = offset + int(np.flatnonzero(~np.isfinite(w))[0])
            raise NumericError(
                f"non-finite gradient contribution at record {idx}", record_index=idx
            )
        grad += _weighted_design_sum(X, w)
        offset += len(w)
    return grad


def log_likelihood_hess(spec: MappingSpec, theta: np.ndarray, data) -> np.ndarray:
    """Analytic Hessian of the exact log-likelihood (dense ``d x d``)."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    hess = np.zeros((d, d))
    for y, X in _as_batches(data):
        s = X @ theta
        w = np.zeros_like(s)
        for term in spec.terms:
            d2v = term.d2phi(_term_args(term, y, s))
            # the chain rule brings y**(2 * y_in_arg_power) = 1 for labels in {-1, +1}
            if term.y_in_arg_power:
                d2v = d2v * y * y
            if term.y_power:
                d2v = d2v * y
            w += d2v
        if sparse.issparse(X):
            hess += np.asarray((X.T @ X.multiply(w[:, None])).todense())
        else:
            hess += X.T @ (w[:, None] * X)
    return hess


# --- polynomial coefficient machinery --------------------------------------


def y_coefficient(term: Term, b: np.ndarray, multinom: float, kbar: int, y) -> np.ndarray:
    """Per-observation statistic coefficient for one term and one multi-index.

    For a multi-index of total degree ``kbar`` with multinomial coefficient
    ``multinom``, returns

        y**(y_power + kbar * y_in_arg_power) * multinom *
            sum_{m=kbar}^{M} b[m] * binom(m, kbar) * (-y_offset * y)**(m - kbar)

    which multiplies ``x**k`` in the statistic update.
    """
    y = np.asarray(y, dtype=float)
    M = len(b) - 1
    acc = np.zeros_like(y)
    for m in range(kbar, M + 1):
        acc += b[m] * math.comb(m, kbar) * (-term.y_offset * y) ** (m - kbar)
    return y ** (term.y_power + kbar * term.y_in_arg_power) * multinom * acc


def degree_weights(
    spec: MappingSpec, approxes: tuple[PolyApprox, ...], y: np.ndarray
) -> np.ndarray:
    """Total per-record coefficient for each total degree, summed over terms.

    Returns an array of shape ``(len(y), M + 1)`` whose column ``kbar`` is the
    multi-index coefficient shared by every index of that degree, excluding
    the multinomial factor.
    """
    y = np.asarray(y, dtype=float)
    M = approxes[0].M
    out = np.zeros((y.size, M + 1))
    for term, approx in zip(spec.terms, approxes):
        b = approx.b
        shift = -term.y_offset * y if term.y_offset else None
        for kbar in range(M + 1):
            acc = np.full(y.size, b[kbar])
            if shift is not None:
                powv = np.ones_like(y)
                acc = b[kbar] * powv
                for m in range(kbar + 1, M + 1):
                    powv = powv * shift
                    acc = acc + b[m] * math.comb(m, kbar) * powv
            ypow = term.y_power + kbar * term.y_in_arg_power
            out[:, kbar] += acc if ypow == 0 else acc * y**ypow
    return out
