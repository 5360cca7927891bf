"""Relative covariance factor and parameterization maps.

Random effects enter the model as ``b = Lambda u`` with ``u ~ N(0, I_q)``,
so ``G = Lambda Lambda'`` is the random-effect covariance matrix and
``Lambda`` (lower triangular, nonnegative diagonal) is its Cholesky-style
relative covariance factor.  Scores are computed natively with respect to
the free entries of ``Lambda`` ("theta" scale) and mapped to the unique
entries of ``G`` ("var" scale) or to standard deviations and correlations
("sd" scale) via the chain-rule Jacobians implemented here.

Orderings are fixed and documented once:

* theta: column-major down the lower triangle, e.g. for q=2 the order is
  (1,1), (2,1), (2,2) in 1-based matrix positions.
* var: variances first (the diagonal of G), then covariances column-major,
  e.g. for q=2: var_1, var_2, cov_21.
* sd: standard deviations first, then correlations in the covariance order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DomainError, ShapeError, SingularityError

__all__ = [
    "RelCovFactor",
    "PARAMETERIZATIONS",
    "theta_length",
    "theta_to_lambda",
    "lambda_to_theta",
    "lambda_to_G",
    "dG_dlambda_entry",
    "reparameterize_scores",
]

PARAMETERIZATIONS = ("theta", "var", "sd")


def validate_parameterization(tag: str) -> str:
    if tag not in PARAMETERIZATIONS:
        raise ConfigError(
            f"unknown parameterization {tag!r}; expected one of {PARAMETERIZATIONS}"
        )
    return tag


def theta_length(q: int, structure: str = "unstructured") -> int:
    """Number of free parameters in the relative covariance factor."""
    if structure == "unstructured":
        return q * (q + 1) // 2
    if structure == "diagonal":
        return q
    raise ConfigError(f"unknown covariance structure {structure!r}")


def free_positions(q: int, structure: str = "unstructured") -> list[tuple[int, int]]:
    """0-based (row, col) positions of the free entries of Lambda,
    column-major down the lower triangle."""
    if structure == "diagonal":
        return [(i, i) for i in range(q)]
    if structure == "unstructured":
        return [(i, j) for j in range(q) for i in range(j, q)]
    raise ConfigError(f"unknown covariance structure {structure!r}")


def var_positions(q: int, structure: str = "unstructured") -> list[tuple[int, int]]:
    """0-based positions of the unique entries of G in var-scale order:
    diagonal first, then below-diagonal column-major."""
    diag = [(i, i) for i in range(q)]
    if structure == "diagonal":
        return diag
    off = [(i, j) for j in range(q) for i in range(j + 1, q)]
    return diag + off


def theta_to_lambda(theta, q: int, structure: str = "unstructured") -> np.ndarray:
    """Materialize the lower-triangular factor from its free parameters."""
    theta = np.asarray(theta, dtype=float).ravel()
    k = theta_length(q, structure)
    if theta.size != k:
        raise ShapeError(
            f"theta has length {theta.size}, expected {k} for q={q} {structure}"
        )
    lam = np.zeros((q, q))
    for value, (i, j) in zip(theta, free_positions(q, structure)):
        lam[i, j] = value
    return lam

def lambda_to_theta(lam: np.ndarray, structure: str = "unstructured") -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return np.array([lam[i, j] for i, j in free_positions(lam.shape[0], structure)])


def lambda_to_G(lam) -> np.ndarray:
    """The covariance matrix G = Lambda Lambda'."""
    lam = np.asarray(lam, dtype=float)
    return lam @ lam.T


def dG_dlambda_entry(lam, i: int, j: int) -> np.ndarray:
    """Derivative of G with respect to a single entry of Lambda.

    Uses the product rule on G = Lambda Lambda':

        dG/dLambda_ij = Lambda J_ji + J_ij Lambda'

    where J_ij is the single-entry matrix.  ``i`` and ``j`` are 0-based;
    only lower-triangular positions (i >= j) are admissible.
    """
    lam = np.asarray(lam, dtype=float)
    q = lam.shape[0]
    if not (0 <= j <= i < q):
        raise DomainError(f"({i},{j}) is not a lower-triangular position for q={q}")
    out = np.zeros((q, q))
    # Lambda J_ji contributes Lambda[:, j] into column i; J_ij Lambda' is its
    # transpose contribution.
    out[:, i] += lam[:, j]
    out[i, :] += lam[:, j]
    return out


def dG_dtheta_jacobian(lam: np.ndarray, structure: str = "unstructured") -> np.ndarray:
    """Jacobian J[r, c] = d(vech G)_r / d theta_c with rows in var-scale
    order and columns in theta order."""
    lam = np.asarray(lam, dtype=float)
    q = lam.shape[0]
    rows = var_positions(q, structure)
    cols = free_positions(q, structure)
    jac = np.empty((len(rows), len(cols)))
    for c, (li, lj) in enumerate(cols):
        dG = dG_dlambda_entry(lam, li, lj)
        for r, (gi, gj) in enumerate(rows):
            jac[r, c] = dG[gi, gj]
    return jac


def _sd_scale_factors(G: np.ndarray, structure: str) -> np.ndarray:
    """Diagonal chain-rule factors taking var-scale scores to sd scale:
    2*sigma_i for variances and sigma_i*sigma_j for covariances."""
    sd = np.sqrt(np.diag(G))
    factors = [2.0 * s for s in sd]
    if structure == "unstructured":
        q = G.shape[0]
        factors += [sd[i] * sd[j] for j in range(q) for i in range(j + 1, q)]
    return np.array(factors)


def reparameterize_scores(scores_theta, lam, target: str,
                          structure: str = "unstructured") -> np.ndarray:
    """Map theta-scale score columns to the requested parameterization.

    Parameters
    ----------
    scores_theta : array, shape (I, k) or (k,)
        Scores with respect to the free entries of Lambda.
    lam : array, shape (q, q)
        The relative covariance factor at which the scores were taken.
    target : {"theta", "var", "sd"}
    structure : {"unstructured", "diagonal"}

    Returns
    -------
    ndarray of the same shape, columns ordered per the module docstring.
    """
    validate_parameterization(target)
    scores = np.asarray(scores_theta, dtype=float)
    if target == "theta":
        return scores.copy()
    lam = np.asarray(lam, dtype=float)
    k = theta_length(lam.shape[0], structure)
    if scores.shape[-1] != k:
        raise ShapeError(f"expected {k} theta columns, got {scores.shape[-1]}")
    bad = np.flatnonzero(np.diag(lam) <= 0.0)
    if bad.size:
        raise SingularityError(
            "relative covariance factor has zero diagonal entry "
            f"Lambda[{bad[0]},{bad[0]}]; var/sd scores are undefined there"
        )
    jac = dG_dtheta_jacobian(lam, structure)
    # Chain rule: d l/d theta = (d vech G / d theta)' d l/d G, so var-scale
    # scores solve jac' x = theta-scale scores.
    try:
        if scores.ndim == 2:
            var_scores = np.linalg.solve(jac.T, scores.T).T
        else:
            var_scores = np.linalg.solve(jac.T, scores)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"singular reparameterization Jacobian: {exc}") from exc
    if target == "var":
        return var_scores
    return var_scores * _sd_scale_factors(lambda_to_G(lam), structure)


@dataclass(frozen=True)
class RelCovFactor:
    """Relative covariance factor: structure, free parameters, materialized
    lower-triangular matrix."""

    q: int
    theta: np.ndarray
    structure: str = "unstructured"
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float).ravel()
        object.__setattr__(self, "theta", theta)
        lam = theta_to_lambda(theta, self.q, self.structure)
        if np.any(np.diag(lam) < 0.0):
            raise DomainError("diagonal entries of the factor must be nonnegative")
        object.__setattr__(self, "matrix", lam)

    @classmethod
    def from_matrix(cls, lam, structure: str = "unstructured") -> "RelCovFactor":
        lam = np.asarray(lam, dtype=float)
        return cls(lam.shape[0], lambda_to_theta(lam, structure), structure)

    @property
    def n_params(self) -> int:
        return theta_length(self.q, self.structure)

    @property
    def G(self) -> np.ndarray:
        return lambda_to_G(self.matrix)

    def labels(self, z_names: list[str], target: str = "theta") -> list[str]:
        """Score column labels on the requested scale."""
        validate_parameterization(target)
        if target == "theta":
            return [f"chol[{z_names[i]},{z_names[j]}]"
                    for i, j in free_positions(self.q, self.structure)]
        out = []
        for i, j in var_positions(self.q, self.structure):
            if i == j:
                out.append((f"var[{z_names[i]}]" if target == "var"
                            else f"sd[{z_names[i]}]"))
            else:
                out.append((f"cov[{z_names[i]},{z_names[j]}]" if target == "var"
                            else f"cor[{z_names[i]},{z_names[j]}]"))
        return out
