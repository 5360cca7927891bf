"""Model fitting: penalized conditional modes, the adaptive-quadrature
marginal log-likelihood, and a derivative-free outer optimizer.

The marginal likelihood integrates the conditional density over spherical
random effects ``u ~ N(0, I_q)`` that enter the linear predictor as
``eta = X beta + Z Lambda u``.  Each cluster integral is approximated with
a Gauss-Hermite rule anchored at that cluster's penalized posterior mode
(found by Newton steps with step halving, Fisher-scoring curvature) and
scaled by the conditional Cholesky factor.  The outer maximization over
``(beta, theta)`` is deliberately derivative-free: the analytic scores this
package produces are a post-estimation product, so validating them against
the fit stays an independent check rather than a circular one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import covariance as cov
from .design import GlmmData
from .exceptions import ConfigError, EstimationError, ShapeError
from .families import FamilySpec, as_family_spec
from .quadrature import GhRule, gh_rule

__all__ = ["FitControl", "FittedGlmm", "conditional_modes", "marginal_loglik",
           "fit", "load_fitted", "default_points"]

_MODE_TOL = 1e-10
_MODE_MAX_ITER = 200
_BOUNDARY_TOL = 1e-6


def default_points(q: int, stage: str = "estimation") -> int:
    """Default quadrature points per dimension.

    Estimation uses 7 points for one random effect and the Laplace
    approximation for more; post-estimation derivatives default to 5,
    the point count where log-likelihoods and gradients stabilize.
    """
    if stage == "derivatives":
        return 5
    return 7 if q == 1 else 1


@dataclass(frozen=True)
class FitControl:
    """Optimizer and quadrature controls for :func:`fit`."""

    n_points: int | None = None
    max_fev: int = 10_000
    restarts: int = 3
    xatol: float = 1e-6
    fatol: float = 1e-9
    beta_start: np.ndarray | None = None
    theta_start: np.ndarray | None = None


@dataclass(frozen=True)
class FittedGlmm:
    """A fitted (or externally supplied) model with everything the
    derivative machinery needs: parameters, per-cluster posterior modes on
    the u scale, conditional Cholesky factors, and the marginal
    log-likelihood at those parameters."""

    beta: np.ndarray
    theta: np.ndarray
    structure: str
    family: FamilySpec
    data: GlmmData
    modes: np.ndarray      # (I, q)
    cond_chol: np.ndarray  # (I, q, q), lower triangular
    loglik: float
    m_used: int
    converged: bool
    boundary: bool
    grad_norm: float | None = None
    n_fev: int = 0

    @property
    def relcov(self) -> cov.RelCovFactor:
        return cov.RelCovFactor(self.data.n_random, self.theta, self.structure)

    @property
    def lambda_matrix(self) -> np.ndarray:
        return cov.theta_to_lambda(self.theta, self.data.n_random, self.structure)

    @property
    def n_params(self) -> int:
        return self.beta.size + self.theta.size

    def parameter_labels(self, parameterization: str = "theta") -> list[str]:
        beta_labels = list(self.data.x_names)
        return beta_labels + self.relcov.labels(list(self.data.z_names),
                                                parameterization)


# ---------------------------------------------------------------------------
# conditional modes


def _linear_predictor(xbeta: np.ndarray, lam: np.ndarray, u: np.ndarray,
                      data: GlmmData) -> np.ndarray:
    b = u @ lam.T
    return xbeta + np.einsum("nj,nj->n", data.Z, b[data.cluster_index])


def conditional_modes(beta, relcov, data: GlmmData, family: FamilySpec,
                      start: np.ndarray | None = None):
    """Per-cluster posterior modes of u and conditional Cholesky factors.

    Maximizes ``log f(y_i | u) - 0.5 ||u||^2`` for every cluster at once
    with Fisher-scoring Newton steps and step halving.  The returned
    factors satisfy ``C_i C_i' = H_i^{-1}`` with ``H_i`` the penalized
    negative Hessian at the mode (observed curvature; expected curvature
    is substituted in the rare case the observed one is not positive
    definite).

    Returns
    -------
    modes : ndarray, shape (I, q)
    cond_chol : ndarray, shape (I, q, q)
    """
    family = as_family_spec(family)
    lam = _as_lambda(relcov, data)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != data.n_fixed:
        raise ShapeError(f"beta has length {beta.size}, expected {data.n_fixed}")
    n_cl, q = data.n_clusters, data.n_random
    u = np.zeros((n_cl, q)) if start is None else np.array(start, dtype=float)
    if u.shape != (n_cl, q):
        raise ShapeError("mode start values have the wrong shape")

    xbeta = data.X @ beta
    y = data.y
    eye = np.eye(q)

    def penalized_parts(u_cur):
        eta = _linear_predictor(xbeta, lam, u_cur, data)
        mu = family.inverse_link(eta)
        logf = data.sum_by_cluster(family._log_density(y, mu))
        return eta, mu, logf - 0.5 * np.sum(u_cur * u_cur, axis=1)

    eta, mu, objective = penalized_parts(u)
    grad = np.empty_like(u)
    for _ in range(_MODE_MAX_ITER):
        dmu = family._dmu_deta(eta)
        var = family.variance_function(mu)
        resid = (y - mu) * dmu / var
        weight = dmu * dmu / var
        zt_resid = data.sum_by_cluster(data.Z * resid[:, None])
        grad = zt_resid @ lam - u
        if np.max(np.abs(grad)) <= _MODE_TOL:
            break
        ztwz = data.sum_by_cluster(
            data.Z[:, :, None] * data.Z[:, None, :] * weight[:, None, None]
        )
        hess = np.einsum("ab,ibc,cd->iad", lam.T, ztwz, lam)
        hess[:, np.arange(q), np.arange(q)] += 1.0
        direction = np.linalg.solve(hess, grad[..., None])[..., 0]

        scale = np.ones((n_cl, 1))
        settled = np.zeros(n_cl, dtype=bool)
        floor = objective - 1e-12 * (1.0 + np.abs(objective))
        for _halving in range(30):
            candidate = u + scale * direction
            eta_c, mu_c, objective_c = penalized_parts(candidate)
            improved = objective_c >= floor
            settled |= improved
            if np.all(settled):
                break
            scale[~settled] *= 0.5
        # clusters that never improved keep a vanishing step; the gradient
        # check below decides whether that is acceptable
        scale[~settled] = 0.0
        u = u + scale * direction
        eta, mu, objective = penalized_parts(u)
    else:
        dmu = family._dmu_deta(eta)
        var = family.variance_function(mu)
        resid = (y - mu) * dmu / var
        grad = data.sum_by_cluster(data.Z * resid[:, None]) @ lam - u
        worst = int(np.argmax(np.max(np.abs(grad), axis=1)))
        if np.max(np.abs(grad)) > 1e-8:
            raise EstimationError(
                "conditional mode search did not converge for cluster "
                f"{data.cluster_ids[worst]!r}"
            )

    cond_chol = _conditional_cholesky(eta, mu, lam, data, family)
    return u, cond_chol


def _conditional_cholesky(eta, mu, lam, data: GlmmData, family: FamilySpec):
    """Cholesky factor of the inverse penalized negative Hessian at the mode."""
    q = data.n_random
    dmu = family._dmu_deta(eta)
    d2mu = family._d2mu_deta2(eta)
    var = family.variance_function(mu)
    dvar = family._dvar_dmu(mu)
    # observed curvature of -log f per unit eta^2
    m_obs = (dmu * dmu / var
             - (data.y - mu) * (d2mu / var - dmu * dmu * dvar / var ** 2))
    m_exp = dmu * dmu / var

    def penalized_neg_hessian(m):
        ztmz = data.sum_by_cluster(
            data.Z[:, :, None] * data.Z[:, None, :] * m[:, None, None]
        )
        h = np.einsum("ab,ibc,cd->iad", lam.T, ztmz, lam)
        h[:, np.arange(q), np.arange(q)] += 1.0
        return h

    hess = penalized_neg_hessian(m_obs)
    try:
        chol_h = np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        # non-canonical links can produce an indefinite observed curvature
        # on pathological clusters; fall back to the expected curvature
        chol_h = np.linalg.cholesky(penalized_neg_hessian(m_exp))
    inv = np.linalg.inv(chol_h)
    cov_u = np.einsum("iba,ibc->iac", inv, inv)  # (L^-1)' L^-1 = H^-1
    return np.linalg.cholesky(cov_u)


# ---------------------------------------------------------------------------
# marginal log-likelihood


def _cluster_loglik(beta, lam, data: GlmmData, family: FamilySpec,
                    modes, chols, rule: GhRule) -> np.ndarray:
    """Per-cluster marginal log-likelihood on an adapted grid (log space)."""
    log_w, locations = _adapted_log_weights(modes, chols, rule)
    xbeta = data.X @ np.asarray(beta, dtype=float)
    cond = np.empty_like(log_w)
    for m in range(rule.size):
        eta = _linear_predictor(xbeta, lam, locations[:, m, :], data)
        mu = family.inverse_link(eta)
        cond[:, m] = data.sum_by_cluster(family._log_density(data.y, mu))
    return logsumexp(log_w + cond, axis=1)


def _adapted_log_weights(modes, chols, rule: GhRule):
    """Vectorized adapt_rule across clusters for the identity prior on u.

    log w* = log w + log det C + 0.5 ||a||^2 - 0.5 ||a*||^2
    """
    a = rule.nodes
    locations = modes[:, None, :] + np.einsum("iab,nb->ina", chols, a)
    logdet = np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    half_a = 0.5 * np.sum(a * a, axis=1)
    log_w = (np.log(rule.weights)[None, :] + logdet[:, None]
             + half_a[None, :] - 0.5 * np.sum(locations ** 2, axis=2))
    return log_w, locations


def marginal_loglik(beta, relcov, data: GlmmData, family: FamilySpec,
                    n_points: int) -> float:
    """Sum over clusters of the log marginal density of the responses,
    each cluster integral computed on a freshly adapted rule."""
    if n_points < 1:
        raise ConfigError("n_points must be at least 1")
    family = as_family_spec(family)
    lam = _as_lambda(relcov, data)
    modes, chols = conditional_modes(beta, lam, data, family)
    rule = gh_rule(n_points, data.n_random)
    return float(np.sum(_cluster_loglik(beta, lam, data, family,
                                        modes, chols, rule)))


def _as_lambda(relcov, data: GlmmData) -> np.ndarray:
    if isinstance(relcov, cov.RelCovFactor):
        lam = relcov.matrix
    else:
        lam = np.atleast_2d(np.asarray(relcov, dtype=float))
    if lam.shape != (data.n_random, data.n_random):
        raise ShapeError("relative covariance factor does not match Z")
    return lam


# ---------------------------------------------------------------------------
# outer optimization


def _glm_start(data: GlmmData, family: FamilySpec) -> np.ndarray:
    """Fixed-effect starting values from a no-random-effects IRLS fit."""
    beta = np.zeros(data.n_fixed)
    for _ in range(25):
        eta = np.clip(data.X @ beta, -30.0, 30.0)
        mu = family.inverse_link(eta)
        dmu = family._dmu_deta(eta)
        var = family.variance_function(mu)
        w = dmu * dmu / var
        z = eta + (data.y - mu) / np.maximum(dmu, 1e-10)
        xw = data.X * w[:, None]
        try:
            new = np.linalg.solve(xw.T @ data.X, xw.T @ z)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(new)):
            break
        done = np.max(np.abs(new - beta)) < 1e-8
        beta = new
        if done:
            break
    return beta


def fit(data: GlmmData, family: FamilySpec, structure: str = "unstructured",
        control: FitControl | None = None) -> FittedGlmm:
    """Maximize the marginal log-likelihood over (beta, theta).

    Nelder-Mead with restart-on-stagnation; diagonal theta entries are kept
    nonnegative by reflection at zero.  Raises
    :class:`~glmmkit.exceptions.EstimationError` (with the best-so-far fit
    attached as ``.best``) if the evaluation budget is exhausted first.
    """
    control = control or FitControl()
    family = as_family_spec(family)
    p, q = data.n_fixed, data.n_random
    if data.n_clusters <= q:
        raise ConfigError("need more clusters than random-effect dimensions")
    n_points = control.n_points or default_points(q)
    rule = gh_rule(n_points, q)
    k = cov.theta_length(q, structure)
    diag_pos = [idx for idx, (i, j) in enumerate(cov.free_positions(q, structure))
                if i == j]

    beta0 = (np.asarray(control.beta_start, dtype=float)
             if control.beta_start is not None else _glm_start(data, family))
    if beta0.size != p:
        raise ShapeError("beta_start has the wrong length")
    theta0 = np.zeros(k)
    theta0[diag_pos] = 1.0
    if control.theta_start is not None:
        theta0 = np.asarray(control.theta_start, dtype=float).copy()
        if theta0.size != k:
            raise ShapeError("theta_start has the wrong length")

    warm: dict = {"u": None}
    n_eval = [0]

    def fold(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        beta = x[:p]
        theta = x[p:].copy()
        theta[diag_pos] = np.abs(theta[diag_pos])
        return beta, theta

    def objective(x: np.ndarray) -> float:
        n_eval[0] += 1
        beta, theta = fold(x)
        lam = cov.theta_to_lambda(theta, q, structure)
        try:
            modes, chols = conditional_modes(beta, lam, data, family,
                                             start=warm["u"])
        except EstimationError:
            warm["u"] = None
            return np.inf
        warm["u"] = modes
        ll = float(np.sum(_cluster_loglik(beta, lam, data, family,
                                          modes, chols, rule)))
        return -ll if np.isfinite(ll) else np.inf

    x_best = np.concatenate([beta0, theta0])
    f_best = objective(x_best)
    success = False
    for attempt in range(control.restarts + 1):
        remaining = control.max_fev - n_eval[0]
        if remaining <= 0:
            break
        result = minimize(objective, x_best, method="Nelder-Mead",
                          options={"maxfev": remaining, "xatol": control.xatol,
                                   "fatol": control.fatol, "adaptive": x_best.size > 4})
        improvement = f_best - result.fun
        if result.fun < f_best:
            x_best, f_best = result.x.copy(), float(result.fun)
        success = bool(result.success)
        if success and attempt > 0 and improvement < 1e-6:
            break

    beta_hat, theta_hat = fold(x_best)
    fitted = _finalize(beta_hat, theta_hat, structure, data, family,
                       n_points, converged=success, n_fev=n_eval[0])
    if not success:
        err = EstimationError(
            f"optimizer did not converge within {control.max_fev} evaluations"
        )
        err.best = fitted
        raise err
    return fitted


def load_fitted(beta, theta, data: GlmmData, family: FamilySpec,
                n_points: int | None = None,
                structure: str = "unstructured") -> FittedGlmm:
    """Rehydrate a model at externally supplied estimates.

    Recomputes posterior modes, conditional factors and the marginal
    log-likelihood at ``(beta, theta)`` without optimizing, so externally
    estimated models get the full post-estimation machinery.
    """
    family = as_family_spec(family)
    beta = np.asarray(beta, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    q = data.n_random
    if beta.size != data.n_fixed:
        raise ConfigError(f"beta has length {beta.size}, expected {data.n_fixed}")
    if theta.size != cov.theta_length(q, structure):
        raise ConfigError(
            f"theta has length {theta.size}, expected "
            f"{cov.theta_length(q, structure)} for q={q} {structure}"
        )
    n_points = n_points or default_points(q)
    return _finalize(beta, theta, structure, data, family, n_points,
                     converged=True, n_fev=0)


def _finalize(beta, theta, structure, data, family, n_points, converged,
              n_fev) -> FittedGlmm:
    lam = cov.theta_to_lambda(theta, data.n_random, structure)
    modes, chols = conditional_modes(beta, lam, data, family)
    rule = gh_rule(n_points, data.n_random)
    loglik = float(np.sum(_cluster_loglik(beta, lam, data, family,
                                          modes, chols, rule)))
    diag = np.diag(lam)
    boundary = bool(np.any(diag < _BOUNDARY_TOL))
    fitted = FittedGlmm(
        beta=np.array(beta, dtype=float), theta=np.array(theta, dtype=float),
        structure=structure, family=family, data=data, modes=modes,
        cond_chol=chols, loglik=loglik, m_used=n_points, converged=converged,
        boundary=boundary, grad_norm=None, n_fev=n_fev,
    )
    if converged and n_fev > 0:
        from . import derivatives  # local import: derivatives depends on us

        scores = derivatives.estfun(fitted, parameterization="theta",
                                    n_points=n_points)
        fitted = replace(fitted,
                         grad_norm=float(np.linalg.norm(scores.values.sum(axis=0))))
    return fitted
