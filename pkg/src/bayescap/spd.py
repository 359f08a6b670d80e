"""Symmetric / SPD matrix primitives.

Every matrix function here goes through :func:`sym_eigen` (LAPACK ``syevd`` via
``numpy.linalg.eigh``), so all tolerances come from one decomposition.
"""

import numpy as np

from .errors import DegenerateInputError, DomainError, ValidationError

# smallest eigenvalue must exceed this fraction of the largest
PD_RTOL = 1e-12
SYM_RTOL = 1e-12

_FUNCS = {
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "inv_sqrt": lambda w: 1.0 / np.sqrt(w),
    "inverse": lambda w: 1.0 / w,
}


def _eigh_desc(A):
    """Unchecked eigendecomposition of a (stack of) symmetric matrices, eigenvalues descending."""
    w, Q = np.linalg.eigh(A)
    return w[..., ::-1], Q[..., ::-1]


def _check_square(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    return A


def is_symmetric(A, rtol=SYM_RTOL):
    A = np.asarray(A, dtype=float)
    scale = max(np.abs(A).max(initial=0.0), np.finfo(float).tiny)
    return bool(np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) <= rtol * scale)


def symmetrize(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def sym_eigen(A):
    """Eigendecomposition ``A = Q diag(w) Q^T`` with ``w`` in descending order.

    Accepts a single matrix or a stack ``(..., n, n)``.
    """
    A = _check_square(A)
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    if not is_symmetric(A):
        raise ValidationError("matrix is not symmetric")
    return _eigh_desc(symmetrize(A))


def _check_pd_eigs(w, what="matrix"):
    wmax = w[..., 0]
    wmin = w[..., -1]
    bad = ~(wmin > PD_RTOL * np.abs(wmax)) | ~(wmax > 0)
    if np.any(bad):
        first = tuple(int(i) for i in np.argwhere(bad)[0]) if np.ndim(bad) else ()
        where = f" (batch index {first})" if first else ""
        raise DomainError(
            f"{what} is not positive definite: offending eigenvalue {float(wmin[first]):.6g}{where}"
        )


def is_spd(A):
    try:
        w, _ = sym_eigen(A)
        _check_pd_eigs(w)
    except (ValidationError, DomainError):
        return False
    return True


def check_spd(A, name="matrix"):
    """Validate and return a symmetrized copy of an SPD matrix."""
    A = _check_square(A, name)
    w, _ = sym_eigen(A)
    _check_pd_eigs(w, name)
    return symmetrize(A)


def spd_function(A, f):
    """Apply a scalar map to the spectrum of a symmetric matrix.

    ``f`` is one of ``"log"``, ``"exp"``, ``"sqrt"``, ``"inv_sqrt"``, ``"inverse"``.
    Only ``exp`` accepts indefinite input.
    """
    try:
        fn = _FUNCS[f]
    except KeyError:
        raise ValidationError(f"unknown matrix function {f!r}; expected one of {sorted(_FUNCS)}") from None
    w, Q = sym_eigen(A)
    if f != "exp":
        _check_pd_eigs(w, f"argument of matrix {f}")
    return symmetrize((Q * fn(w)[..., None, :]) @ np.swapaxes(Q, -1, -2))


def log_det(A):
    """Log-determinant of an SPD matrix (or stack) as the sum of log eigenvalues."""
    w, _ = sym_eigen(A)
    _check_pd_eigs(w, "argument of log_det")
    return np.sum(np.log(w), axis=-1)


def polar_factor(U):
    """Polar decomposition ``U = Gamma S`` of a full-column-rank ``p x d`` matrix.

    Returns ``Gamma = U (U^T U)^{-1/2}`` (orthonormal columns) and ``S = (U^T U)^{1/2}``.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] > U.shape[0]:
        raise ValidationError(f"polar_factor expects a p x d matrix with d <= p, got {U.shape}")
    w, Q = _eigh_desc(U.T @ U)
    if not (w[-1] > PD_RTOL * w[0]) or not (w[0] > 0):
        raise DegenerateInputError(f"U is rank deficient (eigenvalues of U^T U: {w})")
    s = np.sqrt(w)
    S = symmetrize((Q * s) @ Q.T)
    Gamma = U @ ((Q / s) @ Q.T)
    return Gamma, S


def polar_factor_stack(U):
    """Orthonormal polar factors of a stack ``(..., p, d)``; rank-deficient entries raise."""
    U = np.asarray(U, dtype=float)
    w, Q = _eigh_desc(np.swapaxes(U, -1, -2) @ U)
    if np.any(~(w[..., -1] > PD_RTOL * w[..., 0])):
        raise DegenerateInputError("rank-deficient matrix in stack passed to polar_factor_stack")
    return U @ ((Q / np.sqrt(w)[..., None, :]) @ np.swapaxes(Q, -1, -2))


def tangent_map(Sigma_i, Sigma_star_inv_sqrt):
    """Whitening-transport log map ``log(W Sigma_i W)`` with ``W = Sigma*^{-1/2}``."""
    Sigma_i = _check_square(Sigma_i, "Sigma_i")
    W = _check_square(Sigma_star_inv_sqrt, "Sigma_star_inv_sqrt")
    return spd_function(symmetrize(W @ Sigma_i @ W), "log")


def macg_log_density(Gamma, Psi):
    """Unnormalized log density of the matrix angular central Gaussian MACG(Psi)."""
    Gamma = np.asarray(Gamma, dtype=float)
    p, d = Gamma.shape
    Psi = check_spd(Psi, "Psi")
    if Psi.shape != (p, p):
        raise ValidationError(f"Psi must be {p}x{p}, got {Psi.shape}")
    Psi_inv = spd_function(Psi, "inverse")
    inner = symmetrize(Gamma.T @ Psi_inv @ Gamma)
    return float(-0.5 * d * log_det(Psi) - 0.5 * p * log_det(inner))


def sample_haar_orthonormal(p, d, rng):
    """Draw a ``p x d`` orthonormal matrix uniformly (Haar) as the polar factor of a Gaussian matrix."""
    if not 1 <= d <= p:
        raise ValidationError(f"need 1 <= d <= p, got p={p}, d={d}")
    while True:
        try:
            return polar_factor(rng.standard_normal((p, d)))[0]
        except DegenerateInputError:  # pragma: no cover - probability zero
            continue
