"""Recovery metrics and the replication harnesses (coverage, DfD selection accuracy)."""

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .model import whiten
from .sampler import HmcConfig, PosteriorDraws, PosteriorSummary, fit, greedy_signed_permutation, order_components
from .selection import DEFAULT_CUTOFF, select_d
from .simulate import SimTruth, simulate_scenario, true_tangent_intercept

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    p: int = 5
    n: int = 100
    T: int = 20
    replications: int = 100
    level: float = 0.95
    d: int = 2

    @property
    def label(self):
        return f"p{self.p}_n{self.n}_T{self.T}"


def replication_seed(base_seed, index):
    """Independent integer seed for replication ``index``."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def match_to_truth(Gamma_hat, Gamma_true):
    """Greedy signed matching of estimated to true components (estimate ``p x d``, truth ``p x d``)."""
    Gamma_hat = np.asarray(Gamma_hat, dtype=float)
    if Gamma_hat.shape != Gamma_true.shape:
        raise ValidationError(f"estimate {Gamma_hat.shape} and truth {Gamma_true.shape} differ in shape")
    perm, signs = greedy_signed_permutation(Gamma_hat[None], Gamma_true)
    return perm[0], signs[0]


def point_metrics(Gamma_hat, B_hat, sigma_hat, truth: SimTruth, Sigma_star):
    """Recovery metrics for one replication from point estimates.

    ``inner_k = |<gamma_hat_k, gamma_k>|``, ``mse_beta_k`` is the mean squared
    slope error, ``mse_intercept_k`` compares to the whitened-scale intercept
    and ``sigma_abs_err = |sigma_hat - sigma|``.
    """
    perm, signs = match_to_truth(Gamma_hat, truth.Gamma)
    G = np.asarray(Gamma_hat)[:, perm] * signs
    B = np.asarray(B_hat)[perm]
    b0 = true_tangent_intercept(truth, Sigma_star)
    out = {}
    for k in range(truth.d):
        out[f"inner_{k + 1}"] = float(min(abs(G[:, k] @ truth.Gamma[:, k]), 1.0))
        out[f"mse_beta_{k + 1}"] = float(np.mean((B[k, 1:] - truth.B[k, 1:]) ** 2))
        out[f"mse_intercept_{k + 1}"] = float((B[k, 0] - b0[k]) ** 2)
    out["sigma_abs_err"] = float(abs(sigma_hat - truth.sigma))
    return out


def component_metrics(summary: PosteriorSummary, truth: SimTruth, Sigma_star, stat="mean"):
    """:func:`point_metrics` on the posterior means (or medians) held in a summary."""
    p, d = truth.Gamma.shape
    q = truth.B.shape[1]
    return point_metrics(
        summary.point("gamma", (p, d), stat), summary.point("B", (d, q), stat), summary["sigma"][stat], truth, Sigma_star
    )


def draws_metrics(draws: PosteriorDraws, truth, Sigma_star):
    """Metrics from posterior means, plus the same metrics from posterior medians."""
    G, B = draws.flat("Gamma"), draws.flat("B")
    out = point_metrics(G.mean(axis=0), B.mean(axis=0), float(draws.sigma.mean()), truth, Sigma_star)
    med = point_metrics(np.median(G, axis=0), np.median(B, axis=0), float(np.median(draws.sigma)), truth, Sigma_star)
    out.update({k + "_median": v for k, v in med.items()})
    return out


def interval_hits(draws: PosteriorDraws, truth: SimTruth, Sigma_star, level=0.95):
    """Whether each equal-tailed interval contains its true value.

    Loadings are sign-aligned to the truth before the intervals are formed.
    """
    tail = (1.0 - level) / 2.0
    Gamma_hat = draws.flat("Gamma").mean(axis=0)
    perm, signs = match_to_truth(Gamma_hat, truth.Gamma)
    G = draws.flat("Gamma")[:, :, perm] * signs
    B = draws.flat("B")[:, perm, :]
    b0 = true_tangent_intercept(truth, Sigma_star)

    def inside(x, value):
        lo, hi = np.quantile(x, [tail, 1.0 - tail])
        return bool(lo <= value <= hi)

    hits = {}
    p, d = truth.Gamma.shape
    for k in range(d):
        for j in range(p):
            hits[f"gamma_{j + 1}_{k + 1}"] = inside(G[:, j, k], truth.Gamma[j, k])
    for k in range(d):
        hits[f"B_{k + 1}_1"] = inside(B[:, k, 0], b0[k])
        for j in range(1, truth.B.shape[1]):
            hits[f"B_{k + 1}_{j + 1}"] = inside(B[:, k, j], truth.B[k, j])
    hits["sigma"] = inside(draws.sigma.ravel(), truth.sigma)
    return hits


def run_replication(scenario: Scenario, seed, config: HmcConfig, hyper=None):
    """Simulate, fit and score one replication; returns ``(metrics, hits)``."""
    data, truth = simulate_scenario(scenario.p, scenario.n, scenario.T, seed)
    wd = whiten(data)
    draws = order_components(fit(wd, scenario.d, hyper, replace(config, seed=seed)))
    return draws_metrics(draws, truth, wd.Sigma_star), interval_hits(draws, truth, wd.Sigma_star, scenario.level)


def _guarded(fn, *args):
    try:
        return True, fn(*args)
    except Exception as exc:  # recorded, never fatal for the experiment
        return False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def _map(fn, arg_list, jobs):
    if jobs is None or jobs <= 1 or len(arg_list) <= 1:
        return [_guarded(fn, *a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_guarded, fn, *a) for a in arg_list]
        return [f.result() for f in futures]


@dataclass
class CoverageResult:
    scenario: Scenario
    coverage: dict  # parameter -> proportion
    metrics: list  # long format rows (scenario, replication, metric, value)
    seeds: list
    failed: list = field(default_factory=list)  # [{"replication", "seed", "error"}]

    @property
    def completed(self):
        return len(self.seeds) - len(self.failed)

    def table_rows(self):
        return [
            {"n": self.scenario.n, "T": self.scenario.T, "parameter": k, "coverage": v, "replications": self.completed}
            for k, v in self.coverage.items()
        ]

    def aggregate(self):
        means = {}
        for row in self.metrics:
            means.setdefault(row["metric"], []).append(row["value"])
        return {
            "scenario": asdict(self.scenario),
            "completed": self.completed,
            "failed": self.failed,
            "coverage": self.coverage,
            "metric_means": {k: float(np.mean(v)) for k, v in means.items()},
        }


def coverage_experiment(scenario: Scenario, base_seed=0, config: HmcConfig = None, hyper=None, jobs=1):
    """Frequentist coverage of the posterior intervals over simulated replications.

    Failed replications are excluded from the proportions and listed in ``failed``.
    """
    if scenario.replications < 2:
        raise ValidationError("coverage needs at least 2 replications")
    config = config or HmcConfig()
    seeds = [replication_seed(base_seed, r) for r in range(scenario.replications)]
    results = _map(run_replication, [(scenario, s, config, hyper) for s in seeds], jobs)

    metrics, failed, hits = [], [], {}
    for r, (seed, (ok, res)) in enumerate(zip(seeds, results)):
        if not ok:
            log.warning("replication %d (seed %d) failed: %s", r, seed, res.splitlines()[0])
            failed.append({"replication": r, "seed": seed, "error": res.splitlines()[0]})
            continue
        m, h = res
        metrics += [{"scenario": scenario.label, "replication": r, "metric": k, "value": v} for k, v in m.items()]
        for k, v in h.items():
            hits.setdefault(k, []).append(v)
    coverage = {k: float(np.mean(v)) for k, v in hits.items()}
    return CoverageResult(scenario, coverage, metrics, seeds, failed)


def _selection_replication(scenario: Scenario, seed, d_max, cutoff, config, hyper):
    data, _ = simulate_scenario(scenario.p, scenario.n, scenario.T, seed)
    return select_d(whiten(data), d_max, cutoff, hyper, replace(config, seed=seed)).to_dict()


@dataclass
class SelectionAccuracy:
    scenario: Scenario
    cutoff: float
    true_d: int
    reports: list
    seeds: list
    failed: list = field(default_factory=list)

    @property
    def proportion(self):
        if not self.reports:
            return float("nan")
        return float(np.mean([r["chosen_d"] == self.true_d for r in self.reports]))

    def to_dict(self):
        return {
            "scenario": asdict(self.scenario),
            "cutoff": self.cutoff,
            "true_d": self.true_d,
            "proportion_correct": self.proportion,
            "completed": len(self.reports),
            "failed": self.failed,
            "reports": self.reports,
        }


def dfd_accuracy_experiment(
    scenario: Scenario, base_seed=0, d_max=3, cutoff=DEFAULT_CUTOFF, config: HmcConfig = None, hyper=None, jobs=1
):
    """Proportion of replications in which the DfD rule recovers the true ``d``."""
    config = config or HmcConfig()
    seeds = [replication_seed(base_seed, r) for r in range(scenario.replications)]
    results = _map(_selection_replication, [(scenario, s, d_max, cutoff, config, hyper) for s in seeds], jobs)
    reports, failed = [], []
    for r, (seed, (ok, res)) in enumerate(zip(seeds, results)):
        if ok:
            reports.append(dict(res, replication=r, seed=seed))
        else:
            failed.append({"replication": r, "seed": seed, "error": res.splitlines()[0]})
    return SelectionAccuracy(scenario, float(cutoff), scenario.d, reports, seeds, failed)
