"""Synthetic datasets with two covariate-linked covariance components.

Each subject covariance is ``Sigma_i = G_i exp(diag(Bt x_i + u_i)) G_i^T``
where the eigenbasis ``G_i`` shares two columns (the covariate-linked
directions) across subjects and rotates the remaining columns at random per
subject. Random rotations are Haar distributed.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import spd
from .model import TimeSeriesDataset

LINKED_COLUMNS = (1, 2)
B_LINKED = np.array([[1.0, 0.5, -0.5], [1.0, -0.3, 0.3]])
SIGMA_TRUE = 0.5


@dataclass
class SimTruth:
    Gamma: np.ndarray  # p x 2, columns gamma^(1), gamma^(2)
    B: np.ndarray  # 2 x 3
    sigma: float
    X: np.ndarray
    u: np.ndarray  # n x p random effects on the log eigenvalues
    Sigma: np.ndarray  # n x p x p
    Gamma_tilde: np.ndarray  # population eigenbasis, p x p
    B_tilde: np.ndarray  # p x 3

    @property
    def d(self):
        return self.Gamma.shape[1]

    def to_dict(self):
        return {
            "Gamma": self.Gamma.tolist(),
            "B": self.B.tolist(),
            "sigma": self.sigma,
            "Gamma_tilde": self.Gamma_tilde.tolist(),
            "B_tilde": self.B_tilde.tolist(),
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def load_truth(path):
    """Read the parts of a truth JSON needed by the evaluation metrics."""
    with open(path) as fh:
        raw = json.load(fh)
    return SimTruth(
        Gamma=np.array(raw["Gamma"]),
        B=np.array(raw["B"]),
        sigma=float(raw["sigma"]),
        X=None,
        u=None,
        Sigma=None,
        Gamma_tilde=np.array(raw["Gamma_tilde"]),
        B_tilde=np.array(raw["B_tilde"]),
    )


def householder_basis_p5():
    """The 5x5 population eigenbasis with first column ``1/sqrt(5)``.

    Entries are ``1/sqrt(5)`` on the first row and column and ``c - delta_jk``
    elsewhere with ``c = (1 - 1/sqrt(5)) / 4`` (0.447, -0.862, 0.138 to three
    decimals), i.e. the Householder reflection mapping ``e1`` to the constant
    unit vector.
    """
    a = 1.0 / np.sqrt(5.0)
    c = (1.0 - a) / 4.0
    G = np.full((5, 5), c) - np.eye(5)
    G[0, :] = a
    G[:, 0] = a
    # exact up to rounding already; the polar step pins orthonormality to ~1e-16
    return spd.polar_factor(G)[0]


def tilde_coefficients(p):
    """``p x 3`` coefficient matrix: rows 2-3 linked to covariates, all others ``(1, 0, 0)``."""
    Bt = np.zeros((p, 3))
    Bt[:, 0] = 1.0
    Bt[list(LINKED_COLUMNS)] = B_LINKED
    return Bt


def _covariates(n, rng, binary_second=False):
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.binomial(1, 0.5, n).astype(float) if binary_second else rng.standard_normal(n)
    return np.column_stack([np.ones(n), x1, x2])


def _generate(Gamma_tilde, n, T, rng, binary_second=False, ar_coef=0.0):
    p = Gamma_tilde.shape[0]
    linked = list(LINKED_COLUMNS)
    free = [j for j in range(p) if j not in linked]
    Omega = Gamma_tilde[:, free]
    Bt = tilde_coefficients(p)
    X = _covariates(n, rng, binary_second)
    u = rng.normal(0.0, SIGMA_TRUE, size=(n, p))
    log_eig = X @ Bt.T + u

    Y, Sigmas = [], np.empty((n, p, p))
    for i in range(n):
        Gi = Gamma_tilde.copy()
        Gi[:, free] = Omega @ spd.sample_haar_orthonormal(len(free), len(free), rng)
        root = Gi * np.exp(0.5 * log_eig[i])
        Sigmas[i] = root @ root.T
        eps = rng.standard_normal((T, p)) @ root.T
        if ar_coef:
            # stationary AR(1) per coordinate; marginal covariance stays Sigma_i
            y = np.empty_like(eps)
            y[0] = eps[0]
            scale = np.sqrt(1.0 - ar_coef**2)
            for t in range(1, T):
                y[t] = ar_coef * y[t - 1] + scale * eps[t]
            eps = y
        Y.append(eps)
    truth = SimTruth(
        Gamma=Gamma_tilde[:, linked].copy(),
        B=B_LINKED.copy(),
        sigma=SIGMA_TRUE,
        X=X,
        u=u,
        Sigma=Sigmas,
        Gamma_tilde=Gamma_tilde,
        B_tilde=Bt,
    )
    return TimeSeriesDataset(tuple(Y), X), truth


def simulate_p5(n, T, seed):
    """Five-dimensional scenario with the fixed population eigenbasis."""
    rng = np.random.default_rng(seed)
    return _generate(householder_basis_p5(), n, T, rng)


def simulate_general(p, n, T, seed):
    """Scenario for any ``p >= 5`` with a Haar-random population eigenbasis."""
    if p < 5:
        raise ValueError("simulate_general needs p >= 5")
    rng = np.random.default_rng(seed)
    Gamma_tilde = spd.sample_haar_orthonormal(p, p, rng)
    return _generate(Gamma_tilde, n, T, rng)


def simulate_scenario(p, n, T, seed):
    return simulate_p5(n, T, seed) if p == 5 else simulate_general(p, n, T, seed)


def simulate_null(p, n, T, seed):
    """Pure-noise signals ``N(0, I_p)`` with the usual covariate design and no covariate effect."""
    rng = np.random.default_rng(seed)
    X = _covariates(n, rng)
    return TimeSeriesDataset(tuple(rng.standard_normal((T, p)) for _ in range(n)), X)


def simulate_resting_state_like(n, T=1200, p=15, ar_coef=0.94, seed=0):
    """Autocorrelated long series with two binary covariates.

    Mimics a resting-state parcellated recording: ``T`` correlated volumes per
    subject (AR(1) with coefficient ``ar_coef``), covariates (intercept, binary
    group, binary sex). Thinning to the effective sample size brings the
    volumes back to approximate independence.
    """
    rng = np.random.default_rng(seed)
    Gamma_tilde = spd.sample_haar_orthonormal(p, p, rng)
    return _generate(Gamma_tilde, n, T, rng, binary_second=True, ar_coef=ar_coef)


def true_tangent_intercept(truth: SimTruth, Sigma_star):
    """Intercepts of the linked components after whitening by ``Sigma_star``."""
    Sinv = spd.spd_function(Sigma_star, "inverse")
    G = truth.Gamma
    return truth.B[:, 0] + np.log(np.einsum("pk,pq,qk->k", G, Sinv, G))
