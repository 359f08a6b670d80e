"""Multi-chain HMC over the expanded state and posterior post-processing.

Chains advance in lockstep as one vectorized batch: each chain keeps its own
position, step size and random stream (seeded from ``(seed, chain)``), and the
batch is only a way of amortizing interpreter overhead on a single core.
"""

import csv
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from . import spd
from .errors import DivergenceError, InitializationError, ParseError, ValidationError
from .ingest import autocorrelation
from .model import Hyperparameters, WhitenedDataset, evaluate_batch

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
LAMBDA_CLAMP = 10.0


@dataclass(frozen=True)
class HmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    steps: int = 32
    target_accept: float = 0.8
    seed: int = 0
    # relative half-width of the uniform step-size jitter used after warmup
    step_jitter: float = 0.1
    max_divergent_frac: float = 0.1
    # local optimizations used to pick the starting mode
    init_starts: int = 32

    def __post_init__(self):
        for name in ("chains", "warmup", "draws", "steps"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not 0 < self.target_accept < 1:
            raise ValidationError("target_accept must lie in (0, 1)")
        if not 0 <= self.step_jitter < 1:
            raise ValidationError("step_jitter must lie in [0, 1)")


# ---------------------------------------------------------------------------
# Generic batched HMC
# ---------------------------------------------------------------------------


def leapfrog(x, r, grad, eps, steps, logp_grad):
    """``steps`` leapfrog steps for a batch; ``eps`` has one entry per row of ``x``."""
    e = eps[:, None]
    r = r + 0.5 * e * grad
    for i in range(steps):
        x = x + e * r
        lp, grad = logp_grad(x)
        r = r + (e if i < steps - 1 else 0.5 * e) * grad
    return x, r, lp, grad


def _hamiltonian(lp, r):
    return -lp + 0.5 * np.sum(r * r, axis=1)


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014), vectorized over chains."""

    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.m = 0
        self.h_bar = np.zeros_like(eps0)
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.zeros_like(eps0)

    def update(self, accept_prob):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def final(self):
        return np.exp(self.log_eps_bar)


def find_reasonable_step(x, lp, grad, logp_grad, rngs, max_iter=60):
    """Per-chain initial step size: double or halve until a one-step acceptance ratio crosses 1/2."""
    c = x.shape[0]
    eps = np.ones(c)
    r = np.stack([g.standard_normal(x.shape[1]) for g in rngs])
    h0 = _hamiltonian(lp, r)

    def log_ratio(eps):
        _, r1, lp1, _ = leapfrog(x, r, grad, eps, 1, logp_grad)
        out = h0 - _hamiltonian(lp1, r1)
        return np.where(np.isfinite(out), out, -np.inf)

    a = log_ratio(eps)
    direction = np.where(a > np.log(0.5), 1.0, -1.0)
    active = np.ones(c, bool)
    for _ in range(max_iter):
        crossing = direction * a > direction * np.log(0.5)
        active &= crossing
        if not active.any():
            break
        eps = np.where(active, eps * 2.0**direction, eps)
        a = np.where(active, log_ratio(eps), a)
    return eps


def run_hmc(logp_grad, x0, config: HmcConfig, rngs=None):
    """Sample a batch of chains with fixed-length HMC and dual-averaging warmup.

    ``logp_grad`` maps a ``(chains, D)`` array to ``(log densities, gradients)``.
    Returns a dict of post-warmup arrays: ``samples (C,S,D)``, ``logp``,
    ``accept_stat``, ``divergent`` (each ``(C,S)``) and ``step_size (C,)``.
    """
    x = np.array(x0, dtype=float)
    c, dim = x.shape
    if rngs is None:
        rngs = [np.random.default_rng([config.seed, k]) for k in range(c)]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lp, grad = logp_grad(x)
        if not np.all(np.isfinite(lp)):
            raise InitializationError(f"log posterior is not finite at the initial state: {lp}")

        def transition(x, lp, grad, eps):
            r = np.stack([g.standard_normal(dim) for g in rngs])
            h0 = _hamiltonian(lp, r)
            x1, r1, lp1, g1 = leapfrog(x, r, grad, eps, config.steps, logp_grad)
            dh = _hamiltonian(lp1, r1) - h0
            finite = np.isfinite(dh) & np.all(np.isfinite(x1), axis=1) & np.all(np.isfinite(g1), axis=1)
            dh = np.where(finite, dh, np.inf)
            accept_prob = np.exp(-np.maximum(dh, 0.0))
            divergent = ~finite | (np.abs(dh) > DIVERGENCE_THRESHOLD)
            u = np.array([g.uniform() for g in rngs])
            take = (u < accept_prob) & finite
            x = np.where(take[:, None], x1, x)
            lp = np.where(take, lp1, lp)
            grad = np.where(take[:, None], g1, grad)
            return x, lp, grad, accept_prob, divergent

        eps = find_reasonable_step(x, lp, grad, logp_grad, rngs)
        adapt = DualAveraging(eps, config.target_accept)
        warm_div = 0
        for _ in range(config.warmup):
            x, lp, grad, acc, div = transition(x, lp, grad, eps)
            warm_div += int(div.sum())
            eps = adapt.update(acc)
        eps = adapt.final
        log.debug("adapted step sizes %s (warmup divergences %d)", eps, warm_div)

        S = config.draws
        samples = np.empty((c, S, dim))
        logps = np.empty((c, S))
        accept = np.empty((c, S))
        divergent = np.zeros((c, S), bool)
        j = config.step_jitter
        for t in range(S):
            jitter = np.array([g.uniform(1 - j, 1 + j) for g in rngs]) if j > 0 else 1.0
            x, lp, grad, acc, div = transition(x, lp, grad, eps * jitter)
            samples[:, t] = x
            logps[:, t] = lp
            accept[:, t] = acc
            divergent[:, t] = div
    return {"samples": samples, "logp": logps, "accept_stat": accept, "divergent": divergent, "step_size": eps}


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Draws with a leading ``(chain, draw)`` axis pair.

    ``Gamma`` is the polar factor of ``U``. ``component_order[k]`` is the
    index the ``k``-th stored component had in the raw sampler output.
    """

    U: np.ndarray
    Gamma: np.ndarray
    lam: np.ndarray
    B: np.ndarray
    tau: np.ndarray
    logp: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    component_order: np.ndarray = None
    reference: Optional[tuple] = None
    reference_Gamma: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.component_order is None:
            self.component_order = np.arange(self.d)

    @property
    def chains(self):
        return self.U.shape[0]

    @property
    def n_draws(self):
        return self.U.shape[1]

    @property
    def p(self):
        return self.U.shape[2]

    @property
    def d(self):
        return self.U.shape[3]

    @property
    def n(self):
        return self.lam.shape[2]

    @property
    def q(self):
        return self.B.shape[3]

    @property
    def sigma(self):
        return np.exp(0.5 * self.tau)

    @property
    def sigma2(self):
        return np.exp(self.tau)

    @property
    def n_divergent(self):
        return int(self.divergent.sum())

    def flat(self, name):
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])

    def _map_components(self, perm, signs):
        """Apply per-draw column permutation ``perm (C,S,d)`` and signs ``(C,S,d)``."""
        U = np.take_along_axis(self.U, perm[:, :, None, :], axis=3) * signs[:, :, None, :]
        Gamma = np.take_along_axis(self.Gamma, perm[:, :, None, :], axis=3) * signs[:, :, None, :]
        lam = np.take_along_axis(self.lam, perm[:, :, None, :], axis=3)
        B = np.take_along_axis(self.B, perm[:, :, :, None], axis=2)
        return U, Gamma, lam, B


def _heuristic_start(data: WhitenedDataset, Gamma0):
    """``lambda0``, ``B0``, ``tau0`` implied by a fixed orientation ``Gamma0``."""
    d = Gamma0.shape[1]
    if data.n == 0:
        return np.zeros((0, d)), np.zeros((d, data.q)), 0.0
    variances = np.einsum("pk,ipq,qk->ik", Gamma0, data.Shat, Gamma0)
    with np.errstate(divide="ignore"):
        lam0 = np.clip(np.log(variances), -LAMBDA_CLAMP, LAMBDA_CLAMP)
    X = data.X
    B0 = np.linalg.lstsq(X, lam0, rcond=None)[0].T
    resid = lam0 - X @ B0.T
    tau0 = float(np.log(max(np.mean(resid**2), 1e-2)))
    return lam0, B0, tau0


def spread_directions(data: WhitenedDataset, d):
    """Top-``d`` eigenvectors of the between-subject spread ``mean_i (Shat_i - mean Shat)^2``."""
    if data.n == 0:
        return np.eye(data.p)[:, :d]
    dev = data.Shat - data.Shat.mean(axis=0)
    _, Q = spd.sym_eigen(spd.symmetrize(np.mean(dev @ dev, axis=0)))
    return Q[:, :d]


def find_start(data: WhitenedDataset, d, hyper: Hyperparameters, n_starts=32, seed=0, maxiter=500):
    """Highest-posterior local mode over several orientations.

    The orientation posterior is multimodal (weak components can lock onto a
    noise direction), so L-BFGS is run from the spread directions and from
    ``n_starts - 1`` Haar-random orientations; the ``U`` prior is left out
    of the objective because it only shrinks the radius of ``U``, and ``tau``
    is fixed at its heuristic value. Returns the
    packed state of the best mode with ``U`` set to its polar factor.
    """
    p, n, q = data.p, data.n, data.q
    starts = [spread_directions(data, d)]
    rng = np.random.default_rng([seed, 7919])
    starts += [spd.sample_haar_orthonormal(p, d, rng) for _ in range(max(n_starts, 1) - 1)]
    if n == 0:
        lam0, B0, tau0 = _heuristic_start(data, starts[0])
        return np.concatenate([starts[0].ravel(), lam0.ravel(), B0.ravel(), [tau0]])

    logp_grad, (i1, _, _) = _model_logp_grad(data, hyper, p, d, q, 1)
    Psi_inv = hyper.psi_inv(p)

    def objective(x):
        with np.errstate(over="ignore", invalid="ignore"):
            lp, g = logp_grad(x[None])
        U = x[:i1].reshape(p, d)
        lp = lp[0] + 0.5 * np.sum(U * (Psi_inv @ U))
        g = g[0].copy()
        g[:i1] += (Psi_inv @ U).ravel()
        if not np.isfinite(lp):
            return np.inf, np.zeros_like(x)
        return -lp, -g

    best_x, best_val = None, np.inf
    for G0 in starts:
        lam0, B0, tau0 = _heuristic_start(data, G0)
        x = np.concatenate([G0.ravel(), lam0.ravel(), B0.ravel(), [tau0]])
        # tau is held at its heuristic value: the joint density is unbounded as
        # sigma^2 -> 0 with lambda = XB, so a free tau runs into the funnel neck
        bounds = [(None, None)] * (len(x) - 1) + [(tau0, tau0)]
        res = minimize(objective, x, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_x, best_val = res.x, res.fun
    if best_x is None:
        raise InitializationError("no finite starting point found")
    U = best_x[:i1].reshape(p, d)
    best_x = best_x.copy()
    best_x[:i1] = spd.polar_factor(U)[0].ravel()
    return best_x


def _model_logp_grad(data, hyper, p, d, q, c):
    n = data.n
    scatter = np.asarray(data.scatter)
    T = data.T.astype(float)
    X = np.asarray(data.X)
    Psi_inv = hyper.psi_inv(p)
    i1, i2, i3 = p * d, p * d + n * d, p * d + n * d + d * q

    def logp_grad(x):
        U = x[:, :i1].reshape(c, p, d)
        lam = x[:, i1:i2].reshape(c, n, d)
        B = x[:, i2:i3].reshape(c, d, q)
        tau = x[:, i3]
        terms, (gU, glam, gB, gtau) = evaluate_batch(
            U, lam, B, tau, scatter, T, X, Psi_inv, hyper.b_sd, hyper.sigma2_rate
        )
        g = np.concatenate([gU.reshape(c, -1), glam.reshape(c, -1), gB.reshape(c, -1), gtau[:, None]], axis=1)
        return terms.sum(axis=1), g

    return logp_grad, (i1, i2, i3)


def fit(data: WhitenedDataset, d: int, hyper: Hyperparameters = None, config: HmcConfig = None) -> PosteriorDraws:
    """Sample the expanded posterior and return polar-projected, aligned draws.

    All chains start from the mode returned by :func:`find_start`. Each
    local search starts from an orientation ``Gamma0`` with
    ``lambda0 = log(gamma0' Shat_i gamma0)`` clamped to ``[-10, 10]``, ``B0``
    the least-squares fit of ``lambda0`` on ``X`` and ``tau0`` the log residual
    variance.
    """
    hyper = hyper or Hyperparameters()
    config = config or HmcConfig()
    p, n, q = data.p, data.n, data.q
    if not 1 <= d <= p:
        raise ValidationError(f"need 1 <= d <= p, got d={d}, p={p}")
    c = config.chains
    x0 = np.tile(find_start(data, d, hyper, config.init_starts, config.seed), (c, 1))
    logp_grad, (i1, i2, i3) = _model_logp_grad(data, hyper, p, d, q, c)
    out = run_hmc(logp_grad, x0, config)

    s = out["samples"]
    S = config.draws
    U = s[:, :, :i1].reshape(c, S, p, d)
    draws = PosteriorDraws(
        U=U,
        Gamma=spd.polar_factor_stack(U),
        lam=s[:, :, i1:i2].reshape(c, S, n, d),
        B=s[:, :, i2:i3].reshape(c, S, d, q),
        tau=s[:, :, i3].copy(),
        logp=out["logp"],
        accept_stat=out["accept_stat"],
        divergent=out["divergent"],
        step_size=out["step_size"],
        meta={"seed": config.seed, "warmup": config.warmup, "steps": config.steps},
    )
    frac = draws.n_divergent / draws.divergent.size
    if frac > config.max_divergent_frac:
        raise DivergenceError(
            f"{100 * frac:.1f}% of post-warmup transitions diverged; "
            "raise target_accept (smaller step size) or check the data scaling"
        )
    return align(draws)


# ---------------------------------------------------------------------------
# Alignment, ordering, summaries
# ---------------------------------------------------------------------------


def greedy_signed_permutation(Gamma, reference):
    """Greedy matching of columns of ``Gamma (..., p, d)`` to ``reference (p, d)``.

    Returns ``perm (..., d)`` with ``perm[..., k]`` the column of ``Gamma``
    matched to reference column ``k``, and ``signs (..., d)`` in ``{-1, +1}``.
    """
    d = Gamma.shape[-1]
    lead = Gamma.shape[:-2]
    ip = np.einsum("...pj,pk->...jk", Gamma, reference).reshape(-1, d, d)
    m = ip.shape[0]
    score = np.abs(ip).reshape(m, d * d).copy()
    perm = np.zeros((m, d), dtype=int)
    rows = np.arange(m)
    for _ in range(d):
        best = np.argmax(score, axis=1)
        j, k = np.divmod(best, d)
        perm[rows, k] = j
        s3 = score.reshape(m, d, d)
        s3[rows, j, :] = -1.0
        s3[rows, :, k] = -1.0
    matched = ip[rows[:, None], perm, np.arange(d)[None, :]]
    signs = np.where(matched < 0, -1.0, 1.0)
    return perm.reshape(lead + (d,)), signs.reshape(lead + (d,))


def align(draws: PosteriorDraws, reference=None) -> PosteriorDraws:
    """Undo sign flips and column permutations relative to a reference ``Gamma``.

    The default reference is the draw with the highest log posterior.
    """
    ref_index = draws.reference
    if reference is None:
        if draws.reference_Gamma is not None:
            reference = draws.reference_Gamma
        else:
            ci, ti = np.unravel_index(np.argmax(draws.logp), draws.logp.shape)
            ref_index = (int(ci), int(ti))
            reference = draws.Gamma[ci, ti].copy()
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (draws.p, draws.d):
        raise ValidationError(f"reference must be {draws.p}x{draws.d}, got {reference.shape}")
    perm, signs = greedy_signed_permutation(draws.Gamma, reference)
    U, Gamma, lam, B = draws._map_components(perm, signs)
    return replace(draws, U=U, Gamma=Gamma, lam=lam, B=B, reference=ref_index, reference_Gamma=reference)


def component_variability(draws: PosteriorDraws):
    """``V[k]``: between-subject sum of squares of the posterior-mean log-variances."""
    if draws.n == 0:
        return np.zeros(draws.d)
    m = draws.flat("lam").mean(axis=0)  # (n, d)
    return np.sum((m - m.mean(axis=0)) ** 2, axis=0)


def order_components(draws: PosteriorDraws) -> PosteriorDraws:
    """Reorder components by decreasing ``V``; ties keep the original order."""
    V = component_variability(draws)
    order = np.argsort(-V, kind="stable")
    ref = None if draws.reference_Gamma is None else draws.reference_Gamma[:, order]
    return replace(
        draws,
        U=draws.U[..., order],
        Gamma=draws.Gamma[..., order],
        lam=draws.lam[..., order],
        B=draws.B[:, :, order, :],
        component_order=np.asarray(draws.component_order)[order],
        reference_Gamma=ref,
        V=V[order],
    )


def mcmc_ess(x):
    """Multi-chain effective sample size of ``x (chains, draws)`` (Geyer initial monotone sequence)."""
    x = np.asarray(x, dtype=float)
    c, s = x.shape
    if s < 4 or np.allclose(x, x.flat[0]):
        return float(c * s)
    rho_chain = autocorrelation(x, axis=1)
    var_chain = x.var(axis=1, ddof=1)
    w = var_chain.mean()
    b_over_s = x.mean(axis=1).var(ddof=1) if c > 1 else 0.0
    var_plus = (s - 1) / s * w + b_over_s
    if var_plus <= 0:
        return float(c * s)
    rho = 1.0 - (w - (var_chain[:, None] * rho_chain).mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    prev = np.inf
    for t in range(0, s - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = -1.0 + 2.0 * total
    return float(c * s / max(tau, 1.0 / np.log10(c * s + 10)))


def split_rhat(x):
    x = np.asarray(x, dtype=float)
    c, s = x.shape
    h = s // 2
    if h < 2:
        return float("nan")
    parts = np.concatenate([x[:, :h], x[:, s - h :]], axis=0)
    w = parts.var(axis=1, ddof=1).mean()
    b = h * parts.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0
    return float(np.sqrt(((h - 1) / h * w + b / h) / w))


@dataclass
class PosteriorSummary:
    level: float
    bonferroni: bool
    params: dict
    component_order: list
    V: list
    n_divergent: int = 0
    step_size: list = field(default_factory=list)
    reference: Optional[tuple] = None

    def __getitem__(self, name):
        return self.params[name]

    def point(self, prefix, shape, stat="mean"):
        """Collect ``prefix_r_c`` entries into an array of the given shape."""
        out = np.empty(shape)
        for idx in np.ndindex(*shape):
            out[idx] = self.params[prefix + "_" + "_".join(str(i + 1) for i in idx)][stat]
        return out

    def to_dict(self):
        return {
            "level": self.level,
            "bonferroni": self.bonferroni,
            "component_order": list(map(int, self.component_order)),
            "V": [float(v) for v in self.V],
            "n_divergent": self.n_divergent,
            "step_size": [float(e) for e in self.step_size],
            "alignment_reference": None if self.reference is None else list(self.reference),
            "parameters": self.params,
        }


def scalar_draws(draws: PosteriorDraws):
    """Yield ``(name, kind, (chains, draws) array)`` for every summarized scalar."""
    p, d, n, q = draws.p, draws.d, draws.n, draws.q
    for k in range(d):
        for j in range(p):
            yield f"gamma_{j + 1}_{k + 1}", "loading", draws.Gamma[:, :, j, k]
    for k in range(d):
        for j in range(q):
            yield f"B_{k + 1}_{j + 1}", "coefficient", draws.B[:, :, k, j]
    yield "sigma", "scale", draws.sigma
    for i in range(n):
        for k in range(d):
            yield f"lambda_{i + 1}_{k + 1}", "log_variance", draws.lam[:, :, i, k]


def summarize(draws: PosteriorDraws, level: float = 0.95, bonferroni: bool = False) -> PosteriorSummary:
    """Means, medians and equal-tailed intervals for every scalar parameter.

    With ``bonferroni`` the loading intervals use the ``alpha/2/p`` and
    ``1 - alpha/2/p`` quantiles; all other intervals stay at ``level``.
    """
    if draws.n_draws == 0:
        raise ValidationError("no draws to summarize")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    params = {}
    for name, kind, x in scalar_draws(draws):
        t = tail / draws.p if (bonferroni and kind == "loading") else tail
        flat = x.ravel()
        lo, med, hi = np.quantile(flat, [t, 0.5, 1.0 - t])
        params[name] = {
            "mean": float(flat.mean()),
            "median": float(med),
            "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
            "lower": float(min(lo, med)),
            "upper": float(max(hi, med)),
            "lower_q": t,
            "upper_q": 1.0 - t,
        }
        if kind != "log_variance":
            params[name]["ess"] = mcmc_ess(x)
            params[name]["rhat"] = split_rhat(x)
    V = draws.V if draws.V is not None else component_variability(draws)
    return PosteriorSummary(
        level=level,
        bonferroni=bonferroni,
        params=params,
        component_order=[int(k) for k in draws.component_order],
        V=[float(v) for v in V],
        n_divergent=draws.n_divergent,
        step_size=[float(e) for e in draws.step_size],
        reference=draws.reference,
    )


# ---------------------------------------------------------------------------
# Draw storage
# ---------------------------------------------------------------------------

_DIAG_COLS = ("lp__", "accept_stat__", "divergent__")


def draw_header(p, d, n, q):
    cols = [f"U_{r + 1}_{k + 1}" for r in range(p) for k in range(d)]
    cols += [f"lambda_{i + 1}_{k + 1}" for i in range(n) for k in range(d)]
    cols += [f"B_{k + 1}_{j + 1}" for k in range(d) for j in range(q)]
    return cols + ["tau"]


def write_draws(draws: PosteriorDraws, out_dir):
    """One CSV per chain, one row per draw, every float with 17 significant digits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = draw_header(draws.p, draws.d, draws.n, draws.q) + list(_DIAG_COLS)
    paths = []
    for ci in range(draws.chains):
        S = draws.n_draws
        block = np.column_stack(
            [
                draws.U[ci].reshape(S, -1),
                draws.lam[ci].reshape(S, -1),
                draws.B[ci].reshape(S, -1),
                draws.tau[ci],
                draws.logp[ci],
                draws.accept_stat[ci],
                draws.divergent[ci].astype(float),
            ]
        )
        path = out_dir / f"draws_chain{ci + 1}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in block:
                w.writerow([format(v, ".17g") for v in row])
        paths.append(path)
    return paths


def read_draws(paths, step_size=None) -> PosteriorDraws:
    """Inverse of :func:`write_draws`; dimensions are recovered from the header."""
    chains = []
    header = None
    for path in paths:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError(f"{path}: empty draws file")
        if header is None:
            header = rows[0]
        elif rows[0] != header:
            raise ParseError(f"{path}:1: header differs from {paths[0]}")
        try:
            chains.append(np.array(rows[1:], dtype=float))
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric cell ({exc})") from None
    dims = {}
    for prefix in ("U", "lambda", "B"):
        idx = [tuple(map(int, m.groups())) for m in (re.fullmatch(prefix + r"_(\d+)_(\d+)", h) for h in header) if m]
        dims[prefix] = tuple(max(v) for v in zip(*idx)) if idx else (0, 0)
    p, d = dims["U"]
    q = dims["B"][1]
    n = dims["lambda"][0]
    S = min(len(c) for c in chains)
    A = np.stack([c[:S] for c in chains])
    col = {h: i for i, h in enumerate(header)}

    def cols(names):
        return A[:, :, [col[h] for h in names]]

    hdr = draw_header(p, d, n, q)
    U = cols(hdr[: p * d]).reshape(len(chains), S, p, d)
    lam = cols(hdr[p * d : p * d + n * d]).reshape(len(chains), S, n, d)
    B = cols(hdr[p * d + n * d : -1]).reshape(len(chains), S, d, q)
    opt = lambda h, default: A[:, :, col[h]] if h in col else np.full((len(chains), S), default)
    return PosteriorDraws(
        U=U,
        Gamma=spd.polar_factor_stack(U),
        lam=lam,
        B=B,
        tau=A[:, :, col["tau"]],
        logp=opt("lp__", np.nan),
        accept_stat=opt("accept_stat__", np.nan),
        divergent=opt("divergent__", 0.0).astype(bool),
        step_size=np.asarray(step_size if step_size is not None else np.full(len(chains), np.nan)),
    )
