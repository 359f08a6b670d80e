"""Choosing the number of components by deviation from diagonality (DfD)."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import spd
from .errors import BayesCapError, CandidateFitError, DomainError, ValidationError
from .model import WhitenedDataset
from .sampler import HmcConfig, PosteriorDraws, fit

DEFAULT_CUTOFF = 1.5


def _diag_gaps(L, label="subject"):
    """``log|Diag(L_i)| - log|L_i|`` for a stack, computed as ``-log|corr(L_i)|``."""
    L = spd.symmetrize(np.asarray(L, dtype=float))
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if np.any(~(diag > 0)):
        i = int(np.argwhere(~(diag > 0))[0][-2])
        raise DomainError(f"{label} {i + 1}: projected covariance has a nonpositive diagonal")
    scale = np.sqrt(diag)
    R = L / (scale[..., :, None] * scale[..., None, :])
    idx = np.arange(L.shape[-1])
    R[..., idx, idx] = 1.0
    w, _ = spd._eigh_desc(R)
    bad = ~(w[..., -1] > spd.PD_RTOL * w[..., 0])
    if np.any(bad):
        i = int(np.argwhere(bad)[0][-1])
        raise DomainError(f"{label} {i + 1}: projected covariance is not positive definite")
    return -np.sum(np.log(w), axis=-1)


def log_dfd(Lambda_hats, T):
    """``(1/n) sum_i T_i (log|Diag(L_i)| - log|L_i|)``; zero iff every ``L_i`` is diagonal."""
    L = np.asarray(Lambda_hats, dtype=float)
    T = np.asarray(T, dtype=float)
    if L.ndim != 3 or L.shape[1] != L.shape[2]:
        raise ValidationError(f"expected a stack of square matrices, got shape {L.shape}")
    if L.shape[0] != T.shape[0] or L.shape[0] == 0:
        raise ValidationError("need one count per matrix and at least one matrix")
    return float(np.mean(T * _diag_gaps(L)))


def posterior_mean_dfd(draws: PosteriorDraws, data: WhitenedDataset, chunk=256):
    """Average of ``log_dfd`` over draws, with ``L_i = Gamma' Shat_i Gamma`` on whitened data."""
    if draws.p != data.p or draws.n != data.n:
        raise ValidationError("draws and data dimensions differ")
    if draws.d == 1:
        return 0.0
    G = draws.flat("Gamma")
    T = data.T.astype(float)
    total = 0.0
    for start in range(0, len(G), chunk):
        g = G[start : start + chunk]
        L = np.einsum("spk,ipq,sql->sikl", g, data.Shat, g, optimize=True)
        total += float(np.sum(np.mean(T * _diag_gaps(L), axis=1)))
    return total / len(G)


@dataclass
class DfdReport:
    candidates: list = field(default_factory=list)  # [{"d": int, "dfd_mean": float}]
    cutoff: float = DEFAULT_CUTOFF
    chosen_d: int = 1

    def to_dict(self):
        return asdict(self)


def choose_d(values, cutoff):
    """Largest candidate whose DfD is at most ``cutoff`` (ties accepted); 1 if none."""
    ok = [d for d, v in values if v <= cutoff]
    return max(ok) if ok else 1


def _candidate_dfd(data, d, hyper, config, fit_fn):
    try:
        return posterior_mean_dfd(fit_fn(data, d, hyper, config), data)
    except BayesCapError as exc:
        raise CandidateFitError(f"candidate d={d}: {exc}", d=d) from exc


def select_d(data: WhitenedDataset, d_max, cutoff=DEFAULT_CUTOFF, hyper=None, config=None, fit_fn=fit, jobs=1):
    """Fit ``d = 1..d_max`` and pick the largest ``d`` with posterior-mean DfD ``<= cutoff``.

    ``d = 1`` is not fitted: its DfD is identically zero. With ``jobs > 1`` the
    candidate fits run in separate processes.
    """
    if not 1 <= d_max <= data.p:
        raise ValidationError(f"need 1 <= d_max <= p, got d_max={d_max}, p={data.p}")
    config = config or HmcConfig()
    ds = list(range(2, d_max + 1))
    if jobs > 1 and len(ds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(ds))) as pool:
            futures = [pool.submit(_candidate_dfd, data, d, hyper, config, fit_fn) for d in ds]
            dfds = [f.result() for f in futures]
    else:
        dfds = [_candidate_dfd(data, d, hyper, config, fit_fn) for d in ds]
    values = [(1, 0.0)] + list(zip(ds, dfds))
    return DfdReport(
        candidates=[{"d": d, "dfd_mean": v} for d, v in values],
        cutoff=float(cutoff),
        chosen_d=choose_d(values, cutoff),
    )
