"""Data containers, whitening and the parameter-expanded log posterior.

The likelihood depends on the whitened signals only through the per-subject
scatter matrices ``Y*_i^T Y*_i``, so these are cached on :class:`WhitenedDataset`
and the time dimension never enters the inner loop of the sampler.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import spd
from .errors import DegenerateInputError, NumericError, ValidationError

TERM_NAMES = ("likelihood", "lambda_prior", "U_prior", "B_prior", "sigma2_prior")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Per-subject signals ``Y[i]`` (``T_i x p``) and covariate rows ``X[i]`` (length ``q``)."""

    Y: tuple
    X: np.ndarray
    subject_ids: tuple = ()

    def __post_init__(self):
        Y = tuple(_frozen(y) for y in self.Y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1 and len(Y) and X.size % len(Y) == 0:
            X = X.reshape(len(Y), -1)
        X = _frozen(X)
        if X.ndim != 2:
            raise ValidationError("covariates must be a 2-d array")
        ids = tuple(str(s) for s in self.subject_ids) or tuple(str(i + 1) for i in range(len(Y)))
        if len(ids) != len(Y):
            raise ValidationError(f"{len(ids)} subject ids for {len(Y)} subjects")
        if X.shape[0] != len(Y):
            raise ValidationError(f"covariate rows ({X.shape[0]}) != subjects ({len(Y)})")
        if X.shape[1] < 1:
            raise ValidationError("need at least one covariate column")
        if Y:
            p = Y[0].shape[1] if Y[0].ndim == 2 else -1
            for sid, y in zip(ids, Y):
                if y.ndim != 2 or y.shape[1] != p:
                    raise ValidationError(f"subject {sid}: signals must be T x {p}, got {y.shape}")
                if y.shape[0] < 2:
                    raise ValidationError(f"subject {sid}: need T_i >= 2 time points")
            if not np.all(np.isfinite(X)):
                raise ValidationError("covariates contain non-finite values")
            if np.linalg.matrix_rank(X) < X.shape[1]:
                raise DegenerateInputError("covariate matrix is not of full column rank")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self):
        return len(self.Y)

    @property
    def p(self):
        return self.Y[0].shape[1] if self.Y else 0

    @property
    def q(self):
        return self.X.shape[1]

    @property
    def T(self):
        return np.array([y.shape[0] for y in self.Y], dtype=int)

    def demeaned(self):
        """Copy with each subject's temporal mean removed."""
        return TimeSeriesDataset(tuple(y - y.mean(axis=0) for y in self.Y), self.X, self.subject_ids)


@dataclass(frozen=True)
class WhitenedDataset:
    base: TimeSeriesDataset
    Sigma_star: np.ndarray
    Sigma_star_inv_sqrt: np.ndarray
    Ystar: tuple
    Shat: np.ndarray
    scatter: np.ndarray = field(repr=False)

    @classmethod
    def empty(cls, p, q):
        """Dataset with no subjects, for prior-only fits."""
        base = TimeSeriesDataset((), np.zeros((0, q)))
        eye = _frozen(np.eye(p))
        zeros = _frozen(np.zeros((0, p, p)))
        return cls(base, eye, eye, (), zeros, zeros)

    @property
    def n(self):
        return self.Shat.shape[0]

    @property
    def p(self):
        return self.Sigma_star.shape[0]

    @property
    def q(self):
        return self.base.q

    @property
    def X(self):
        return self.base.X

    @property
    def T(self):
        return self.base.T


def whiten(data: TimeSeriesDataset, jitter: float = 0.0) -> WhitenedDataset:
    """Remove subject means and whiten by the pooled second-moment matrix ``Sigma*``."""
    if jitter < 0:
        raise ValidationError("jitter must be nonnegative")
    if data.n == 0:
        raise ValidationError("cannot whiten a dataset with no subjects; use WhitenedDataset.empty")
    base = data.demeaned()
    p = base.p
    moments = np.stack([y.T @ y / y.shape[0] for y in base.Y])
    Sigma_star = spd.symmetrize(moments.mean(axis=0)) + jitter * np.eye(p)
    w, _ = spd.sym_eigen(Sigma_star)
    if not (w[-1] > spd.PD_RTOL * w[0]):
        raise DegenerateInputError(
            f"pooled second-moment matrix is not positive definite (smallest eigenvalue {w[-1]:.3g}); "
            "pass jitter > 0"
        )
    W = spd.spd_function(Sigma_star, "inv_sqrt")
    Ystar = tuple(_frozen(y @ W) for y in base.Y)
    scatter = np.stack([spd.symmetrize(y.T @ y) for y in Ystar])
    Shat = scatter / base.T[:, None, None]
    return WhitenedDataset(base, _frozen(Sigma_star), _frozen(W), Ystar, _frozen(Shat), _frozen(scatter))


@dataclass
class ExpandedState:
    """Unconstrained sampler state: ``U`` (p x d), ``lam`` (n x d), ``B`` (d x q), ``tau = log sigma^2``."""

    U: np.ndarray
    lam: np.ndarray
    B: np.ndarray
    tau: float

    @property
    def dims(self):
        p, d = np.shape(self.U)
        return p, d, np.shape(self.lam)[0], np.shape(self.B)[1]

    def pack(self):
        return np.concatenate([np.ravel(self.U), np.ravel(self.lam), np.ravel(self.B), [self.tau]])

    @classmethod
    def unpack(cls, vec, p, d, n, q):
        vec = np.asarray(vec, dtype=float)
        i1, i2, i3 = p * d, p * d + n * d, p * d + n * d + d * q
        return cls(vec[:i1].reshape(p, d), vec[i1:i2].reshape(n, d), vec[i2:i3].reshape(d, q), float(vec[i3]))


@dataclass(frozen=True)
class Hyperparameters:
    Psi: Optional[np.ndarray] = None  # None means identity
    b_sd: float = 2.5
    sigma2_rate: float = 1.0

    def __post_init__(self):
        if not (self.b_sd > 0 and self.sigma2_rate > 0):
            raise ValidationError("b_sd and sigma2_rate must be positive")
        if self.Psi is not None:
            object.__setattr__(self, "Psi", _frozen(spd.check_spd(self.Psi, "Psi")))

    def psi_inv(self, p):
        if self.Psi is None:
            return np.eye(p)
        if self.Psi.shape != (p, p):
            raise ValidationError(f"Psi must be {p}x{p}, got {self.Psi.shape}")
        return spd.spd_function(self.Psi, "inverse")


def evaluate_batch(U, lam, B, tau, scatter, T, X, Psi_inv, b_sd, sigma2_rate, grad=True):
    """Log-posterior terms and gradients for a batch of ``c`` states.

    Shapes: ``U (c,p,d)``, ``lam (c,n,d)``, ``B (c,d,q)``, ``tau (c,)``. Returns
    ``terms (c,5)`` and, if requested, gradients with the input shapes. States
    whose ``U`` is numerically rank deficient get ``-inf`` and zero gradient.
    """
    n = scatter.shape[0]
    d = U.shape[-1]
    M = np.swapaxes(U, -1, -2) @ U
    finite = np.all(np.isfinite(M), axis=(1, 2))
    M[~finite] = np.eye(d)
    w, Q = spd._eigh_desc(M)
    ok = finite & (w[:, -1] > spd.PD_RTOL * w[:, 0]) & (w[:, 0] > 0)
    s = np.sqrt(np.where(ok[:, None], w, 1.0))
    Qt = np.swapaxes(Q, -1, -2)
    W = (Q / s[:, None, :]) @ Qt
    Gam = U @ W

    c, p = U.shape[0], U.shape[1]
    SG = (scatter.reshape(n * p, p) @ Gam).reshape(c, n, p, d)
    quad = np.einsum("cpk,cnpk->cnk", Gam, SG)  # sum_l c_ilk^2
    e_lam = np.exp(-lam)
    mean = X[None] @ np.swapaxes(B, -1, -2)  # (c,n,d)
    resid = lam - mean
    rss = np.sum(resid**2, axis=(1, 2))
    e_tau = np.exp(-tau)
    PU = Psi_inv[None] @ U

    terms = np.empty((U.shape[0], 5))
    terms[:, 0] = -0.5 * np.sum(T[None, :, None] * lam + quad * e_lam, axis=(1, 2))
    terms[:, 1] = -0.5 * n * d * tau - 0.5 * e_tau * rss
    terms[:, 2] = -0.5 * np.sum(U * PU, axis=(1, 2))
    terms[:, 3] = -np.sum(B**2, axis=(1, 2)) / (2.0 * b_sd**2)
    terms[:, 4] = -sigma2_rate * np.exp(tau) + tau
    terms[~ok, 0] = -np.inf
    if not grad:
        return terms, None

    g_lam = -0.5 * T[None, :, None] + 0.5 * quad * e_lam - e_tau[:, None, None] * resid
    g_B = e_tau[:, None, None] * (np.swapaxes(resid, -1, -2) @ X[None]) - B / b_sd**2
    g_tau = -0.5 * n * d + 0.5 * e_tau * rss - sigma2_rate * np.exp(tau) + 1.0

    # dL/dGamma, then back through Gamma = U (U^T U)^{-1/2}
    G = -np.einsum("cnk,cnpk->cpk", e_lam, SG)
    A = Qt @ (np.swapaxes(U, -1, -2) @ G) @ Q
    K = s[:, :, None] * s[:, None, :] * (s[:, :, None] + s[:, None, :])
    C = Q @ (-A / K) @ Qt
    g_U = G @ W + U @ (C + np.swapaxes(C, -1, -2)) - PU
    g_U[~ok] = 0.0
    return terms, (g_U, g_lam, g_B, g_tau)


def _check_dims(state, data):
    p, d, n, q = state.dims
    if p != data.p or n != data.n or q != data.q:
        raise ValidationError(
            f"state dims (p={p}, n={n}, q={q}) do not match data (p={data.p}, n={data.n}, q={data.q})"
        )
    if d > p:
        raise ValidationError(f"d={d} exceeds p={p}")


def _single(state, data, hyper, grad):
    _check_dims(state, data)
    hyper = hyper or Hyperparameters()
    U = np.asarray(state.U, dtype=float)
    w, _ = spd._eigh_desc(U.T @ U)
    if not w[-1] > spd.PD_RTOL * w[0]:
        raise DegenerateInputError("U is rank deficient")
    with np.errstate(over="ignore", invalid="ignore"):
        terms, grads = evaluate_batch(
            U[None],
            np.asarray(state.lam, dtype=float)[None],
            np.asarray(state.B, dtype=float)[None],
            np.array([state.tau], dtype=float),
            data.scatter,
            data.T.astype(float),
            data.X,
            hyper.psi_inv(data.p),
            hyper.b_sd,
            hyper.sigma2_rate,
            grad=grad,
        )
    for name, v in zip(TERM_NAMES, terms[0]):
        if not np.isfinite(v):
            raise NumericError(f"log posterior term {name!r} is not finite ({v})", term=name)
    return terms[0], grads


def log_posterior_terms(state: ExpandedState, data: WhitenedDataset, hyper: Hyperparameters = None):
    terms, _ = _single(state, data, hyper, grad=False)
    return dict(zip(TERM_NAMES, (float(t) for t in terms)))


def log_posterior(state: ExpandedState, data: WhitenedDataset, hyper: Hyperparameters = None) -> float:
    """Expanded log posterior of ``(U, lambda, B, log sigma^2)`` up to an additive constant."""
    terms, _ = _single(state, data, hyper, grad=False)
    return float(np.sum(terms))


def grad_log_posterior(state: ExpandedState, data: WhitenedDataset, hyper: Hyperparameters = None) -> ExpandedState:
    _, (g_U, g_lam, g_B, g_tau) = _single(state, data, hyper, grad=True)
    grads = ExpandedState(g_U[0], g_lam[0], g_B[0], float(g_tau[0]))
    if not np.all(np.isfinite(grads.pack())):
        raise NumericError("gradient is not finite")
    return grads
