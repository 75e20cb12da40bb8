"""Approximate posteriors built from polynomial sufficient statistics.

For the degree-2 logistic surrogate with a Gaussian prior the posterior is an
exact Gaussian with closed-form mean and covariance.  For every other
supported case the surrogate log-posterior is a polynomial in the parameter;
its mode is found by Newton iteration and a Gaussian is fitted at the mode.

Covariances are represented by lower-triangular Cholesky factors obtained
from the precision matrix without explicitly inverting it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .chebyshev import PolyApprox, eval_poly
from .errors import (
    ConvergenceError,
    InvalidInputError,
    NonConcaveError,
    NotPositiveDefiniteError,
    PathologicalApproximationError,
)
from .mappings import log_likelihood_hess
from .suffstats import MultiIndexSet, SuffStats, enumerate_indices

__all__ = [
    "PriorSpec",
    "GaussianPosterior",
    "SurrogatePosterior",
    "MapCertificate",
    "PolySurface",
    "surrogate_loglik_coefficients",
    "posterior_lr2",
    "posterior_general",
    "map_error_certificate",
    "sample",
]


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian (diagonal-covariance) or flat improper prior on the parameter."""

    kind: str  # "gaussian" or "flat"
    mean: np.ndarray | None = None
    variance: np.ndarray | float | None = None

    @staticmethod
    def gaussian(variance: float | np.ndarray, mean: np.ndarray | float = 0.0) -> "PriorSpec":
        v = np.asarray(variance, dtype=float)
        if np.any(v <= 0):
            raise InvalidInputError("prior variance must be positive")
        return PriorSpec(kind="gaussian", mean=np.asarray(mean, dtype=float), variance=v)

    @staticmethod
    def flat() -> "PriorSpec":
        return PriorSpec(kind="flat")

    @staticmethod
    def parse(text: str) -> "PriorSpec":
        """Parse CLI syntax: ``flat`` or ``gaussian:SIGMA2``."""
        if text == "flat":
            return PriorSpec.flat()
        if text.startswith("gaussian:"):
            return PriorSpec.gaussian(float(text.split(":", 1)[1]))
        raise InvalidInputError(f"cannot parse prior {text!r}")

    def mean_vector(self, d: int) -> np.ndarray:
        if self.kind == "flat" or self.mean is None:
            return np.zeros(d)
        return np.broadcast_to(np.asarray(self.mean, dtype=float), (d,)).copy()

    def precision_diag(self, d: int) -> np.ndarray:
        """Diagonal of the prior precision (zeros for the flat prior)."""
        if self.kind == "flat":
            return np.zeros(d)
        return np.broadcast_to(1.0 / np.asarray(self.variance, dtype=float), (d,)).copy()

    def log_density(self, theta: np.ndarray) -> float:
        if self.kind == "flat":
            return 0.0
        d = theta.size
        prec = self.precision_diag(d)
        diff = theta - self.mean_vector(d)
        return -0.5 * float(prec @ (diff * diff))


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian posterior summary: mean, lower Cholesky factor of the
    covariance, and the covariance log-determinant."""

    mean: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def d(self) -> int:
        return self.mean.size

    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def marginal_variances(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.chol, self.chol)

    def sample(self, count: int, seed: int | None = None) -> np.ndarray:
        """Draw ``count`` samples; deterministic under a fixed seed."""
        if count < 1:
            raise InvalidInputError("sample count must be >= 1")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, self.d))
        return self.mean + z @ self.chol.T


def sample(post: GaussianPosterior, count: int, seed: int | None = None) -> np.ndarray:
    return post.sample(count, seed=seed)


@dataclass(frozen=True)
class SurrogatePosterior:
    """Polynomial surrogate log-posterior with its mode and Laplace fit."""

    surface: "PolySurface"
    map_estimate: np.ndarray
    laplace: GaussianPosterior
    domain_radius: float | None = None

    @property
    def coefficients(self) -> np.ndarray:
        return self.surface.coefficients


def _chol_from_precision(precision: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Cholesky of a precision matrix plus the lower Cholesky factor of its
    inverse, computed via the index-reversal identity (no explicit inverse
    of the covariance is formed)."""
    try:
        lam_chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"precision matrix is not positive definite: {exc}")
    rev = precision[::-1, ::-1]
    try:
        m = linalg.cholesky(rev, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"precision matrix is not positive definite: {exc}")
    eye = np.eye(precision.shape[0])
    cov_chol = linalg.solve_triangular(m, eye, lower=True, trans="T")[::-1, ::-1]
    logdet_cov = -2.0 * float(np.sum(np.log(np.diag(lam_chol))))
    return lam_chol, cov_chol, logdet_cov


def _check_logistic_leading_coefficient(b: np.ndarray) -> None:
    nz = np.flatnonzero(np.abs(b) > 1e-12)
    if nz.size == 0:
        raise PathologicalApproximationError("all polynomial coefficients vanish")
    lead = int(nz[-1])
    if lead == 0:
        raise PathologicalApproximationError("approximation is constant in the parameter")
    if lead % 2 == 1 or b[lead] >= 0:
        raise PathologicalApproximationError(
            f"logistic approximation with leading coefficient b_{lead}={b[lead]:.3g} "
            "makes the surrogate log-likelihood unbounded above; usable logistic "
            "degrees are M = 2 + 4k (degree-4k leading terms are positive)"
        )


def posterior_lr2(stats: SuffStats, approx: PolyApprox, prior: PriorSpec) -> GaussianPosterior:
    """Closed-form Gaussian posterior for the degree-2 logistic surrogate.

    The precision is ``prior_precision - 2 b2 T2`` and the mean solves
    ``precision @ mean = b1 t1 + prior_precision @ prior_mean``, where ``t1``
    and ``T2`` are the degree-1 vector and degree-2 matrix of raw monomial
    statistics.
    """
    if not stats.mapping.raw_monomial:
        raise InvalidInputError("closed-form path requires raw logistic statistics")
    if stats.index_set.M != 2 or approx.M != 2:
        raise InvalidInputError("closed-form path requires degree M = 2")
    if prior.kind != "gaussian":
        raise InvalidInputError("closed-form path requires a Gaussian prior")
    b = approx.b
    if b[2] >= 0:
        raise PathologicalApproximationError(
            f"quadratic coefficient b2={b[2]:.3g} >= 0 would make the surrogate "
            "log-likelihood unbounded above"
        )
    d = stats.index_set.d
    vals = stats.values()
    t1 = vals[1 : d + 1]
    T2 = _degree2_matrix(vals, stats.index_set)

    prec_diag = prior.precision_diag(d)
    precision = -2.0 * b[2] * T2
    precision[np.diag_indices(d)] += prec_diag
    rhs = b[1] * t1 + prec_diag * prior.mean_vector(d)
    lam_chol, cov_chol, logdet = _chol_from_precision(precision)
    mean = linalg.cho_solve((lam_chol, True), rhs)
    return GaussianPosterior(mean=mean, chol=cov_chol, logdet=logdet)


def _degree2_matrix(vals: np.ndarray, iset: MultiIndexSet) -> np.ndarray:
    d = iset.d
    T2 = np.empty((d, d))
    pos = 1 + d
    for i in range(d):
        block = vals[pos : pos + d - i]
        T2[i, i:] = block
        T2[i:, i] = block
        pos += d - i
    return T2


# --- polynomial surfaces ----------------------------------------------------


class PolySurface:
    """A polynomial in ``d`` variables over a multi-index set, with gradient
    and Hessian evaluation."""

    def __init__(self, index_set: MultiIndexSet, coefficients: np.ndarray):
        self.index_set = index_set
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (len(index_set),):
            raise InvalidInputError("coefficient vector does not match the index set")
        self._grad_links = None
        self._hess_links = None

    def _monomials(self, theta: np.ndarray) -> np.ndarray:
        iset = self.index_set
        parent_pos, parent_var = iset.parents()
        vals = np.empty(len(iset))
        vals[0] = 1.0
        for i in range(1, len(iset)):
            vals[i] = vals[parent_pos[i]] * theta[parent_var[i]]
        return vals

    def value(self, theta: np.ndarray) -> float:
        return float(self.coefficients @ self._monomials(theta))

    def _build_links(self):
        iset = self.index_set
        grad_links = []
        hess_links = []
        for key in iset.keys:
            g = []
            h = []
            entries = dict(key)
            for j, e in key:
                reduced = _reduce_key(key, j)
                g.append((j, iset.position(reduced), float(e)))
                for l, e2 in entries.items():
                    if l == j:
                        if e >= 2:
                            h.append(
                                (j, j, float(e * (e - 1)), iset.position(_reduce_key(reduced, j)))
                            )
                    elif l > j:
                        h.append(
                            (j, l, float(e * e2), iset.position(_reduce_key(reduced, l)))
                        )
            grad_links.append(g)
            hess_links.append(h)
        self._grad_links = grad_links
        self._hess_links = hess_links

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        if self._grad_links is None:
            self._build_links()
        mono = self._monomials(theta)
        grad = np.zeros(self.index_set.d)
        for coef, links in zip(self.coefficients, self._grad_links):
            if coef == 0.0:
                continue
            for j, pos, e in links:
                grad[j] += coef * e * mono[pos]
        return grad

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        if self._hess_links is None:
            self._build_links()
        mono = self._monomials(theta)
        d = self.index_set.d
        hess = np.zeros((d, d))
        for coef, links in zip(self.coefficients, self._hess_links):
            if coef == 0.0:
                continue
            for j, l, mult, pos in links:
                v = coef * mult * mono[pos]
                hess[j, l] += v
                if j != l:
                    hess[l, j] += v
        return hess


def _reduce_key(key: tuple, var: int) -> tuple:
    out = []
    for j, e in key:
        if j == var:
            if e > 1:
                out.append((j, e - 1))
        else:
            out.append((j, e))
    return tuple(out)


def surrogate_loglik_coefficients(stats: SuffStats, approx: PolyApprox | None = None) -> np.ndarray:
    """Monomial coefficients of the surrogate log-likelihood over the index set.

    Raw logistic statistics get the multinomial-weighted polynomial
    coefficients applied here; general-form statistics already carry them.
    """
    vals = stats.values()
    if not stats.mapping.raw_monomial:
        return vals.copy()
    if approx is None:
        raise InvalidInputError("raw logistic statistics need the fitted approximation")
    if approx.M != stats.index_set.M:
        raise InvalidInputError("approximation degree must match the statistics")
    _check_logistic_leading_coefficient(approx.b)
    iset = stats.index_set
    return iset.multinom * approx.b[iset.degrees] * vals


def _surrogate_posterior_surface(
    stats: SuffStats, approx: PolyApprox | None, prior: PriorSpec
) -> PolySurface:
    lik_coef = surrogate_loglik_coefficients(stats, approx)
    d = stats.index_set.d
    M = stats.index_set.M
    target_M = max(M, 2) if prior.kind == "gaussian" else M
    if target_M == M:
        iset = stats.index_set
        coef = lik_coef.copy()
    else:
        iset = enumerate_indices(d, target_M)
        coef = np.zeros(len(iset))
        for key, v in zip(stats.index_set.keys, lik_coef):
            coef[iset.position(key)] += v
    if prior.kind == "gaussian":
        prec = prior.precision_diag(d)
        mean = prior.mean_vector(d)
        coef[0] += -0.5 * float(prec @ (mean * mean))
        for j in range(d):
            coef[iset.position(((j, 1),))] += prec[j] * mean[j]
            coef[iset.position(((j, 2),))] += -0.5 * prec[j]
    return PolySurface(iset, coef)


def posterior_general(
    stats: SuffStats,
    approx: PolyApprox | None,
    prior: PriorSpec,
    domain_radius: float | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 500,
) -> SurrogatePosterior:
    """Surrogate-MAP plus Laplace-on-surrogate posterior for general degree.

    Maximizes the polynomial surrogate log-posterior by Newton iteration with
    Armijo backtracking, projecting onto the ball of ``domain_radius`` when
    given, then fits a Gaussian at the optimum.
    """
    surface = _surrogate_posterior_surface(stats, approx, prior)
    if stats.mapping.name == "poisson":
        nonlinear = approx if approx is not None else stats.approxes[1]
        _check_poisson_convexity(nonlinear)
    d = stats.index_set.d
    theta = prior.mean_vector(d)
    if domain_radius is not None:
        theta = _project_ball(theta, domain_radius)

    hess0 = surface.hessian(theta)
    if np.max(np.linalg.eigvalsh(hess0)) >= 0:
        _raise_nonconcave(stats)

    trace = []
    c_armijo = 1e-4
    converged = False
    for it in range(max_iter):
        g = surface.gradient(theta)
        f0 = surface.value(theta)
        crit = _stationarity(theta, g, domain_radius)
        trace.append((it, f0, float(np.linalg.norm(g))))
        if crit <= grad_tol * max(1.0, abs(f0)):
            converged = True
            break
        H = surface.hessian(theta)
        try:
            step = linalg.cho_solve((linalg.cholesky(-H, lower=True), True), g)
        except linalg.LinAlgError:
            _raise_nonconcave(stats)
        alpha = 1.0
        g_dot_step = float(g @ step)
        while alpha > 1e-12:
            candidate = theta + alpha * step
            if domain_radius is not None:
                candidate = _project_ball(candidate, domain_radius)
            if surface.value(candidate) >= f0 + c_armijo * alpha * g_dot_step:
                break
            alpha *= 0.5
        theta = candidate
    if not converged:
        raise ConvergenceError(
            f"surrogate MAP did not reach tolerance in {max_iter} iterations",
            trace=trace,
        )

    H = surface.hessian(theta)
    if np.max(np.linalg.eigvalsh(H)) >= 0:
        _raise_nonconcave(stats)
    _, cov_chol, logdet = _chol_from_precision(-H)
    laplace = GaussianPosterior(mean=theta.copy(), chol=cov_chol, logdet=logdet)
    return SurrogatePosterior(
        surface=surface,
        map_estimate=theta,
        laplace=laplace,
        domain_radius=domain_radius,
    )


def _stationarity(theta: np.ndarray, grad: np.ndarray, radius: float | None) -> float:
    if radius is None:
        return float(np.linalg.norm(grad))
    return float(np.linalg.norm(_project_ball(theta + grad, radius) - theta))


def _project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(theta))
    if norm <= radius:
        return theta
    return theta * (radius / norm)


def _raise_nonconcave(stats: SuffStats):
    if stats.mapping.name == "logit":
        raise PathologicalApproximationError(
            "surrogate log-posterior is not concave; logistic approximations "
            "with degree M = 4k have positive leading coefficients and are "
            "pathological (usable degrees are M = 2 + 4k)"
        )
    raise NonConcaveError("surrogate log-posterior is not concave on the domain")


def _check_poisson_convexity(approx: PolyApprox) -> None:
    if approx.M % 2 == 1:
        raise NonConcaveError("Poisson surrogate requires an even degree")
    grid = np.linspace(-approx.R, approx.R, 2001)
    d2 = np.zeros_like(grid)
    for m in range(2, approx.M + 1):
        d2 += approx.b[m] * m * (m - 1) * grid ** (m - 2)
    # stats fold the negated exponential, so convexity of f_M means d2 <= 0 here
    if np.max(d2) >= 0:
        raise NonConcaveError(
            "the approximated exponential term is not convex on [-R, R]; "
            "increase the degree or shrink the interval"
        )


# --- MAP error certificate ---------------------------------------------------


@dataclass(frozen=True)
class MapCertificate:
    """Numerical evaluation of the surrogate-MAP error bound.

    ``bound`` is ``4 eps_n / rho_n``; ``measured_sq`` is the actual squared
    distance between the exact and surrogate MAP points.  The premise flags
    report whether the checked assumptions held; the bound is only guaranteed
    when they do.
    """

    eps_n: float
    rho_n: float
    bound: float
    measured_sq: float
    in_range_fraction: float
    premises: dict = field(default_factory=dict)
    surrogate_map: np.ndarray | None = None

    @property
    def premises_ok(self) -> bool:
        return all(self.premises.values())

    @property
    def holds(self) -> bool:
        return self.measured_sq <= self.bound


def map_error_certificate(
    exact_map: np.ndarray,
    approx: PolyApprox,
    stats: SuffStats,
    prior: PriorSpec,
    data,
    in_range_threshold: float = 0.98,
) -> MapCertificate:
    """Evaluate the MAP error bound ``4 eps_n / rho_n`` numerically.

    ``eps_n`` is estimated as ``N`` times the largest approximation error of
    the mapping over the observed inner-product range at the exact MAP (an
    empirical, not certified, stand-in for the uniform premise).  ``rho_n``
    is the smallest Hessian eigenvalue of the exact negative log-posterior at
    the exact MAP.  Premise failures are flagged, never fatal.
    """
    exact_map = np.asarray(exact_map, dtype=float)
    mapping = stats.mapping
    d = exact_map.size

    y, X = data.materialize() if hasattr(data, "materialize") else data
    y = mapping.canonicalize_y(np.asarray(y, dtype=float))
    s = np.asarray(X @ exact_map).ravel()

    eps_n = 0.0
    worst_fraction = 1.0
    approxes = stats.approxes if stats.approxes is not None else (approx,) * len(mapping.terms)
    n = len(y)
    for term, term_approx in zip(mapping.terms, approxes):
        arg = s if term.y_in_arg_power == 0 else y * s
        if term.y_offset:
            arg = arg - term.y_offset * y
        worst_fraction = min(
            worst_fraction, float(np.mean(np.abs(arg) <= stats.radius))
        )
        if term.exact_degree is not None and term.exact_degree <= stats.index_set.M:
            continue
        span = max(float(np.max(np.abs(arg))), 1e-12)
        grid = np.linspace(-span, span, 20_001)
        err = float(np.max(np.abs(term.phi(grid) - eval_poly(term_approx, grid))))
        weight = float(np.max(np.abs(y) ** term.y_power))
        eps_n += n * weight * err

    hess = log_likelihood_hess(mapping, exact_map, (y, X))
    neg_log_post_hess = -hess + np.diag(prior.precision_diag(d))
    rho_n = float(np.min(np.linalg.eigvalsh(neg_log_post_hess)))

    if stats.mapping.raw_monomial and stats.index_set.M == 2 and prior.kind == "gaussian":
        surrogate_map = posterior_lr2(stats, approx, prior).mean
    else:
        surrogate_map = posterior_general(stats, approx, prior).map_estimate

    measured = float(np.sum((exact_map - surrogate_map) ** 2))
    bound = math.inf if rho_n <= 0 else 4.0 * eps_n / rho_n
    premises = {
        "inner_products_in_range": worst_fraction >= in_range_threshold,
        "posterior_strongly_log_concave_at_map": rho_n > 0,
        "prior_log_concave": prior.kind in ("gaussian", "flat"),
    }
    return MapCertificate(
        eps_n=eps_n,
        rho_n=rho_n,
        bound=bound,
        measured_sq=measured,
        in_range_fraction=worst_fraction,
        premises=premises,
        surrogate_map=surrogate_map,
    )
