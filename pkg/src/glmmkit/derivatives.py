"""Casewise likelihood derivatives for fitted models.

Everything here is post-estimation: given a :class:`FittedGlmm` (fitted
internally or rehydrated from external estimates), compute per-cluster log
likelihood contributions, per-cluster scores for the fixed effects and the
random-effect hyperparameters on any of the three parameterizations, and a
finite-difference Hessian of the total log-likelihood.

Scores are ratios of two integrals sharing one adapted quadrature rule per
cluster: the numerator integrates the conditional score times the
conditional density, the denominator the conditional density alone.  Both
are evaluated in log space with a per-cluster max shift, so small marginal
densities never produce NaN scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import covariance as cov
from .estimation import (FittedGlmm, _adapted_log_weights, _cluster_loglik,
                         _linear_predictor, conditional_modes, default_points)
from .exceptions import ConfigError, EstimationError, SingularityError
from .quadrature import AdaptedRule, adapt_rule, gh_rule

__all__ = ["ScoreMatrix", "HessianResult", "llcont", "score_beta_cluster",
           "score_theta_cluster", "estfun", "gradient", "hessian"]

_FD_STEP = 1e-5


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-cluster scores: one row per cluster, one column per parameter."""

    values: np.ndarray
    labels: tuple[str, ...]
    parameterization: str
    m_used: int

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HessianResult:
    """Finite-difference Hessian of the total log-likelihood.

    ``one_sided`` lists parameter indices where a central difference was
    infeasible (the perturbation left the parameter space) and a one-sided
    difference was used instead.
    """

    values: np.ndarray
    labels: tuple[str, ...]
    parameterization: str
    m_used: int
    one_sided: tuple[int, ...] = ()


def llcont(fit: FittedGlmm, n_points: int | None = None) -> np.ndarray:
    """Per-cluster log marginal likelihood contributions.

    Uses the posterior modes stored in the fit (modes depend on the
    parameters, not on the point count), so changing ``n_points`` refines
    the same anchored rule.
    """
    n_points = n_points or default_points(fit.data.n_random, "derivatives")
    rule = gh_rule(n_points, fit.data.n_random)
    return _cluster_loglik(fit.beta, fit.lambda_matrix, fit.data, fit.family,
                           fit.modes, fit.cond_chol, rule)


def _working_residual(family, y, eta, mu, general: bool) -> np.ndarray:
    """d log f / d eta per observation: (y - mu) / (D V), which collapses
    to y - mu under a canonical link."""
    if not general:
        return y - mu
    dmu = family._dmu_deta(eta)
    var = family.variance_function(mu)
    return (y - mu) * dmu / var


def _score_pass(fit: FittedGlmm, n_points: int, general: bool | None = None):
    """One shared-rule sweep: per-cluster loglik, beta scores, theta scores."""
    data, family = fit.data, fit.family
    lam = fit.lambda_matrix
    q = data.n_random
    if general is None:
        general = not family.canonical
    rule = gh_rule(n_points, q)
    log_w, locations = _adapted_log_weights(fit.modes, fit.cond_chol, rule)
    xbeta = data.X @ fit.beta

    cond = np.empty_like(log_w)
    for m in range(rule.size):
        eta = _linear_predictor(xbeta, lam, locations[:, m, :], data)
        mu = family.inverse_link(eta)
        cond[:, m] = data.sum_by_cluster(family._log_density(data.y, mu))
    joint = log_w + cond
    ell = logsumexp(joint, axis=1)
    rho = np.exp(joint - ell[:, None])  # normalized node weights per cluster

    positions = cov.free_positions(q, fit.structure)
    s_beta = np.zeros((data.n_clusters, data.n_fixed))
    s_theta = np.zeros((data.n_clusters, len(positions)))
    for m in range(rule.size):
        u = locations[:, m, :]
        eta = _linear_predictor(xbeta, lam, u, data)
        mu = family.inverse_link(eta)
        resid = _working_residual(family, data.y, eta, mu, general)
        x_kernel = data.sum_by_cluster(data.X * resid[:, None])
        z_kernel = data.sum_by_cluster(data.Z * resid[:, None])
        w = rho[:, m, None]
        s_beta += w * x_kernel
        for col, (a, b) in enumerate(positions):
            s_theta[:, col] += w[:, 0] * z_kernel[:, a] * u[:, b]
    return ell, s_beta, s_theta


def _cluster_position(fit: FittedGlmm, cluster) -> int:
    ids = fit.data.cluster_ids
    try:
        return ids.index(cluster)
    except ValueError:
        pass
    idx = int(cluster)
    if not 0 <= idx < len(ids):
        raise ConfigError(f"unknown cluster {cluster!r}")
    return idx


def _cluster_ratio_scores(fit: FittedGlmm, idx: int, adapted: AdaptedRule,
                          general: bool | None = None):
    """Log-space numerator/denominator ratio for one cluster."""
    data, family = fit.data, fit.family
    lam = fit.lambda_matrix
    if general is None:
        general = not family.canonical
    rows = data.rows(idx)
    y = data.y[rows]
    x = data.X[rows]
    z = data.Z[rows]
    xbeta = x @ fit.beta
    positions = cov.free_positions(data.n_random, fit.structure)

    log_terms = np.empty(adapted.weights.size)
    beta_kernels = np.empty((adapted.weights.size, data.n_fixed))
    theta_kernels = np.empty((adapted.weights.size, len(positions)))
    for m, u in enumerate(adapted.locations):
        eta = xbeta + z @ (lam @ u)
        mu = family.inverse_link(eta)
        log_terms[m] = adapted.log_weights[m] + float(
            np.sum(family._log_density(y, mu)))
        resid = _working_residual(family, y, eta, mu, general)
        beta_kernels[m] = x.T @ resid
        zr = z.T @ resid
        theta_kernels[m] = [zr[a] * u[b] for (a, b) in positions]
    shift = np.max(log_terms)
    weights = np.exp(log_terms - shift)
    denom = weights.sum()
    return (beta_kernels.T @ weights / denom,
            theta_kernels.T @ weights / denom)


def _default_adapted(fit: FittedGlmm, idx: int, n_points: int) -> AdaptedRule:
    q = fit.data.n_random
    return adapt_rule(gh_rule(n_points, q), fit.modes[idx],
                      fit.cond_chol[idx], np.eye(q))


def score_beta_cluster(fit: FittedGlmm, cluster, adapted: AdaptedRule | None = None,
                       n_points: int | None = None) -> np.ndarray:
    """Score of one cluster's log marginal likelihood w.r.t. beta."""
    idx = _cluster_position(fit, cluster)
    if adapted is None:
        n_points = n_points or default_points(fit.data.n_random, "derivatives")
        adapted = _default_adapted(fit, idx, n_points)
    return _cluster_ratio_scores(fit, idx, adapted)[0]


def score_theta_cluster(fit: FittedGlmm, cluster, adapted: AdaptedRule | None = None,
                        n_points: int | None = None) -> np.ndarray:
    """Score of one cluster's log marginal likelihood w.r.t. theta.

    Entries follow the column-major free positions of the factor; the
    derivative of Lambda w.r.t. each theta entry is the 0/1 selector
    matrix, so the trace form reduces to picking single entries of
    ``Z' D^-1 V^-1 (y - mu) u'``.
    """
    idx = _cluster_position(fit, cluster)
    if adapted is None:
        n_points = n_points or default_points(fit.data.n_random, "derivatives")
        adapted = _default_adapted(fit, idx, n_points)
    return _cluster_ratio_scores(fit, idx, adapted)[1]


def estfun(fit: FittedGlmm, parameterization: str = "var",
           n_points: int | None = None) -> ScoreMatrix:
    """Per-cluster scores for all parameters on the requested scale.

    Parameters
    ----------
    fit : FittedGlmm
    parameterization : {"var", "theta", "sd"}
        "theta" differentiates w.r.t. the free entries of the relative
        covariance factor; "var" w.r.t. the unique entries of G; "sd"
        w.r.t. standard deviations and correlations.
    n_points : int, optional
        Quadrature points per dimension (default 5).

    Raises
    ------
    SingularityError
        If the fit sits on the theta boundary and var/sd scores are
        requested; the chain-rule Jacobian is singular there.
    """
    cov.validate_parameterization(parameterization)
    if fit.boundary and parameterization != "theta":
        raise SingularityError(
            "fit is on the boundary (a relative-covariance diagonal entry is "
            "zero); only theta-scale scores are defined"
        )
    n_points = n_points or default_points(fit.data.n_random, "derivatives")
    _, s_beta, s_theta = _score_pass(fit, n_points)
    if parameterization != "theta":
        s_theta = cov.reparameterize_scores(s_theta, fit.lambda_matrix,
                                            parameterization, fit.structure)
    values = np.hstack([s_beta, s_theta])
    return ScoreMatrix(values=values,
                       labels=tuple(fit.parameter_labels(parameterization)),
                       parameterization=parameterization, m_used=n_points)


def gradient(fit: FittedGlmm, parameterization: str = "var",
             n_points: int | None = None) -> np.ndarray:
    """Total score: column sums of :func:`estfun`."""
    return estfun(fit, parameterization, n_points).values.sum(axis=0)


# ---------------------------------------------------------------------------
# parameter vector mapping for finite differences


def _parameter_vector(fit: FittedGlmm, parameterization: str) -> np.ndarray:
    if parameterization == "theta":
        return np.concatenate([fit.beta, fit.theta])
    G = fit.relcov.G
    positions = cov.var_positions(fit.data.n_random, fit.structure)
    if parameterization == "var":
        tail = [G[i, j] for i, j in positions]
    else:
        sd = np.sqrt(np.diag(G))
        tail = [sd[i] if i == j else G[i, j] / (sd[i] * sd[j])
                for i, j in positions]
    return np.concatenate([fit.beta, tail])


def _theta_from_vector(tail: np.ndarray, q: int, structure: str,
                       parameterization: str) -> np.ndarray | None:
    """Rebuild theta from a var- or sd-scale tail; None when infeasible."""
    positions = cov.var_positions(q, structure)
    G = np.zeros((q, q))
    if parameterization == "var":
        for value, (i, j) in zip(tail, positions):
            G[i, j] = G[j, i] = value
    else:
        sd = np.empty(q)
        for value, (i, j) in zip(tail, positions):
            if i == j:
                sd[i] = value
        if np.any(sd <= 0.0):
            return None
        for value, (i, j) in zip(tail, positions):
            G[i, j] = G[j, i] = sd[i] * sd[j] if i == j else value * sd[i] * sd[j]
    if structure == "diagonal":
        diag = np.diag(G)
        if np.any(diag <= 0.0):
            return None
        return np.sqrt(diag)
    try:
        lam = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return None
    return cov.lambda_to_theta(lam, structure)


def _gradient_at(vector: np.ndarray, fit: FittedGlmm, parameterization: str,
                 n_points: int) -> np.ndarray | None:
    """Total gradient at a perturbed parameter vector, modes re-solved."""
    p = fit.data.n_fixed
    beta = vector[:p]
    if parameterization == "theta":
        theta = vector[p:]
        if np.any(theta[_diag_positions(fit)] < 0.0):
            return None
    else:
        theta = _theta_from_vector(vector[p:], fit.data.n_random,
                                   fit.structure, parameterization)
        if theta is None:
            return None
    lam = cov.theta_to_lambda(theta, fit.data.n_random, fit.structure)
    try:
        modes, chols = conditional_modes(beta, lam, fit.data, fit.family)
    except (EstimationError, np.linalg.LinAlgError):
        return None
    shifted = FittedGlmm(
        beta=np.asarray(beta, dtype=float), theta=np.asarray(theta, dtype=float),
        structure=fit.structure, family=fit.family, data=fit.data,
        modes=modes, cond_chol=chols, loglik=np.nan, m_used=n_points,
        converged=True, boundary=False,
    )
    _, s_beta, s_theta = _score_pass(shifted, n_points)
    if parameterization != "theta":
        s_theta = cov.reparameterize_scores(s_theta, shifted.lambda_matrix,
                                            parameterization, fit.structure)
    return np.hstack([s_beta, s_theta]).sum(axis=0)


def _diag_positions(fit: FittedGlmm) -> list[int]:
    return [idx for idx, (i, j)
            in enumerate(cov.free_positions(fit.data.n_random, fit.structure))
            if i == j]


def hessian(fit: FittedGlmm, parameterization: str = "var",
            n_points: int | None = None) -> HessianResult:
    """Hessian of the total log-likelihood by central finite differences
    of the analytic gradient.

    Each of the 2(p+k) perturbations re-solves the posterior modes before
    evaluating the gradient (step ``max(1e-5, 1e-5 |param|)``).  When a
    perturbation leaves the parameter space (a variance pushed negative, a
    correlation matrix losing positive definiteness) that column falls
    back to a one-sided difference and is flagged in ``one_sided``.  The
    result is symmetrized as ``(H + H') / 2``.
    """
    cov.validate_parameterization(parameterization)
    if fit.boundary and parameterization != "theta":
        raise SingularityError(
            "fit is on the boundary; request the theta parameterization"
        )
    n_points = n_points or default_points(fit.data.n_random, "derivatives")
    x0 = _parameter_vector(fit, parameterization)
    n = x0.size
    matrix = np.empty((n, n))
    center = None
    one_sided: list[int] = []
    for j in range(n):
        h = max(_FD_STEP, _FD_STEP * abs(x0[j]))
        plus = x0.copy()
        plus[j] += h
        minus = x0.copy()
        minus[j] -= h
        g_plus = _gradient_at(plus, fit, parameterization, n_points)
        g_minus = _gradient_at(minus, fit, parameterization, n_points)
        if g_plus is not None and g_minus is not None:
            matrix[:, j] = (g_plus - g_minus) / (2.0 * h)
            continue
        if g_plus is None and g_minus is None:
            raise SingularityError(
                f"both perturbations of parameter {j} left the parameter space"
            )
        if center is None:
            center = _gradient_at(x0, fit, parameterization, n_points)
            if center is None:
                raise SingularityError("gradient undefined at the fitted value")
        one_sided.append(j)
        if g_plus is not None:
            matrix[:, j] = (g_plus - center) / h
        else:
            matrix[:, j] = (center - g_minus) / h
    matrix = 0.5 * (matrix + matrix.T)
    return HessianResult(values=matrix,
                         labels=tuple(fit.parameter_labels(parameterization)),
                         parameterization=parameterization, m_used=n_points,
                         one_sided=tuple(one_sided))
