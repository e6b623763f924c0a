"""Monte Carlo harness comparing OLS, standard IV and TSIV.

DGP: (X, D) standard bivariate normal with correlation gamma, Z = s(D),
V = X - gamma s^{-1}(Z), eps = rho_eps V + zeta, Y = sum_{j<=p} H_j(X) + eps,
with rho = rho_eps (1 - gamma^2). The OLIVA slope is 1 for every design.

    dgp 1: p = 1, s(D) = D
    dgp 2: p = 2, s(D) = D^3
    dgp 3: p = 3, s(D) = logistic(D)
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit, logit
from scipy.stats import norm

from ..estimation.exogeneity import robust_hausman, standard_hausman
from ..estimation.selection import DEFAULT_LAMBDAS, GcvGrid, select
from ..estimation.tsiv import estimate_tsiv, linear_iv
from ..models.dataset import Dataset
from ..utils.config import Config
from ..utils.errors import (InsufficientSamplesError, InvalidDgpError,
                            UnsupportedDegreeError)
from ..utils.failure import failure_tolerant
from ..utils.logger import Logger

TRUE_SLOPE = 1.0
TEST_LEVEL = 0.05
MAX_FAILURE_SHARE = 0.01

_LINKS = {
    1: (lambda d: d, lambda z: z),
    2: (lambda d: d ** 3, np.cbrt),
    3: (expit, logit),
}


class Estimator(Enum):
    OLS = 'ols'
    IV = 'iv'
    TSIV = 'tsiv'
    HAUSMAN = 'hausman'


ALL_ESTIMATORS = frozenset(Estimator)


def hermite(j: int, x):
    """Probabilists' Hermite polynomial H_j, j <= 3."""
    x = np.asarray(x, dtype=float)
    match j:
        case 0:
            value = np.ones_like(x)
        case 1:
            value = x
        case 2:
            value = x ** 2 - 1.0
        case 3:
            value = x ** 3 - 3.0 * x
        case _:
            raise UnsupportedDegreeError('Hermite degree must be in 0..3', j=j)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class DgpConfig:
    dgp: int
    rho: float
    gamma: float
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.dgp not in _LINKS:
            raise InvalidDgpError('dgp must be 1, 2 or 3', dgp=self.dgp)
        if not (abs(self.gamma) < 1.0 and self.gamma != 0.0):
            raise InvalidDgpError('gamma must lie in (-1, 1) without 0',
                                  gamma=self.gamma)
        if not 0.0 <= self.rho < 1.0:
            raise InvalidDgpError('rho must lie in [0, 1)', rho=self.rho)
        if self.n < 2:
            raise InvalidDgpError('n must be at least 2', n=self.n)
        if self.seed < 0:
            raise InvalidDgpError('seed must be nonnegative', seed=self.seed)

    @property
    def rho_epsilon(self) -> float:
        return self.rho / (1.0 - self.gamma ** 2)

    def with_seed(self, seed: int) -> 'DgpConfig':
        return replace(self, seed=seed)


def derive_seed(base_seed: int, replication: int, dgp: int) -> int:
    """Positional stream key, so results do not depend on the worker count."""
    state = np.random.SeedSequence([base_seed, replication, dgp])
    return int(state.generate_state(1, np.uint64)[0])


def _standard_normals(seed: int, n: int, k: int) -> np.ndarray:
    """Inverse-CDF normals from the counter-based Philox generator."""
    generator = np.random.Generator(np.random.Philox(seed))
    u = np.clip(generator.random((n, k)), 2.0 ** -53, 1.0 - 2.0 ** -53)
    return norm.ppf(u)


def draw_latent(cfg: DgpConfig) -> dict[str, np.ndarray]:
    e = _standard_normals(cfg.seed, cfg.n, 3)
    x = e[:, 0]
    d = cfg.gamma * e[:, 0] + math.sqrt(1.0 - cfg.gamma ** 2) * e[:, 1]
    s, s_inv = _LINKS[cfg.dgp]
    z = s(d)
    v = x - cfg.gamma * s_inv(z)
    eps = cfg.rho_epsilon * v + e[:, 2]
    y = sum(hermite(j, x) for j in range(1, cfg.dgp + 1)) + eps
    return {'x': x, 'd': d, 'z': z, 'v': v, 'eps': eps, 'y': y}


def gen_dgp(cfg: DgpConfig) -> Dataset:
    latent = draw_latent(cfg)
    data = Dataset.simple(latent['y'], latent['x'], latent['z'])
    return Dataset(data.y, data.controls, data.endogenous, data.instruments,
                   names={'outcome': 'y', 'controls': ['const'],
                          'endogenous': ['x'], 'instruments': ['z']})


@dataclass(frozen=True)
class ReplicationResult:
    slopes: dict
    covered: bool | None = None
    hausman_t: dict = field(default_factory=dict)
    hausman_reject: dict = field(default_factory=dict)


@failure_tolerant(None)
def run_replication(cfg: DgpConfig, estimators=ALL_ESTIMATORS,
                    lambda_multiplier: float = 1.0,
                    lambda_values=DEFAULT_LAMBDAS,
                    level: float = 0.95) -> ReplicationResult:
    data = gen_dgp(cfg)
    x, y = data.x, data.y
    slopes, covered, hausman_t, hausman_reject = {}, None, {}, {}
    if Estimator.OLS in estimators:
        slopes['ols'] = float(linear_iv(x, x, y)[1])
    if Estimator.IV in estimators:
        slopes['iv'] = float(linear_iv(x, data.z, y)[1])
    if Estimator.TSIV in estimators or Estimator.HAUSMAN in estimators:
        chosen = select(data, GcvGrid.shortcut(lambda_values), n_jobs=1).chosen
        tuning = chosen.with_lambda(chosen.lam * lambda_multiplier)
        fit = estimate_tsiv(data, tuning, level=level)
        if Estimator.TSIV in estimators:
            slopes['tsiv'] = float(fit.beta[1])
            covered = bool(fit.ci[1, 0] <= TRUE_SLOPE <= fit.ci[1, 1])
        if Estimator.HAUSMAN in estimators:
            for result in (standard_hausman(data), robust_hausman(data, fit.instrument)):
                hausman_t[result.variant.value] = result.t_stat
                hausman_reject[result.variant.value] = result.rejects(TEST_LEVEL)
    return ReplicationResult(slopes, covered, hausman_t, hausman_reject)


@dataclass(frozen=True)
class EstimatorSummary:
    bias: float
    mse: float
    bias_se: float
    mse_se: float


def _mc_se(values: np.ndarray) -> float:
    if values.size < 2:
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def _summarize_errors(errors: np.ndarray) -> EstimatorSummary:
    count = errors.size
    squares = errors ** 2
    return EstimatorSummary(
        bias=math.fsum(errors) / count,
        mse=math.fsum(squares) / count,
        bias_se=_mc_se(errors),
        mse_se=_mc_se(squares),
    )


def _rate(flags: list[bool]) -> tuple[float, float]:
    if not flags:
        return math.nan, math.nan
    rate = math.fsum(1.0 for f in flags if f) / len(flags)
    return rate, math.sqrt(rate * (1.0 - rate) / len(flags))


@dataclass(frozen=True)
class McSummary:
    cfg: DgpConfig
    replications: int
    failures: int
    estimators: dict
    coverage: float = math.nan
    coverage_se: float = math.nan
    rejection: dict = field(default_factory=dict)
    rejection_se: dict = field(default_factory=dict)
    hausman_stats: dict = field(default_factory=dict, repr=False)
    lambda_multiplier: float = 1.0

    @property
    def valid(self) -> bool:
        return self.failures <= MAX_FAILURE_SHARE * self.replications

    def to_row(self) -> dict:
        row = {'dgp': self.cfg.dgp, 'rho': self.cfg.rho, 'gamma': self.cfg.gamma,
               'n': self.cfg.n, 'reps': self.replications,
               'failures': self.failures, 'lambda_mult': self.lambda_multiplier}
        for name in ('ols', 'iv', 'tsiv'):
            summary = self.estimators.get(name)
            row[f'BIAS_{name.upper()}'] = summary.bias if summary else math.nan
        for name in ('ols', 'iv', 'tsiv'):
            summary = self.estimators.get(name)
            row[f'MSE_{name.upper()}'] = summary.mse if summary else math.nan
        row['COV_TSIV'] = self.coverage
        row['REJ_S'] = self.rejection.get('standard', math.nan)
        row['REJ_R'] = self.rejection.get('robust', math.nan)
        for name in ('ols', 'iv', 'tsiv'):
            summary = self.estimators.get(name)
            row[f'BIAS_{name.upper()}_SE'] = summary.bias_se if summary else math.nan
            row[f'MSE_{name.upper()}_SE'] = summary.mse_se if summary else math.nan
        row['COV_TSIV_SE'] = self.coverage_se
        row['REJ_S_SE'] = self.rejection_se.get('standard', math.nan)
        row['REJ_R_SE'] = self.rejection_se.get('robust', math.nan)
        return row


def run_cell(cfg: DgpConfig, replications: int, estimators=ALL_ESTIMATORS,
             base_seed: int = 0, n_jobs: int | None = None,
             lambda_multiplier: float = 1.0, lambda_values=DEFAULT_LAMBDAS,
             level: float = 0.95) -> McSummary:
    """Replicate one (dgp, rho, gamma, n) cell and aggregate the results."""
    if replications < 1:
        raise InsufficientSamplesError('at least one replication is required',
                                       replications=replications)
    estimators = frozenset(Estimator(e) for e in estimators)
    seeds = [derive_seed(base_seed, r, cfg.dgp) for r in range(replications)]
    results = Parallel(n_jobs=n_jobs or Config.get_thread_count(),
                       backend='threading')(
        delayed(run_replication)(cfg.with_seed(seed), estimators,
                                 lambda_multiplier, lambda_values, level)
        for seed in seeds)

    logger = Logger().get_logger()
    failed = [r for r, result in enumerate(results) if result is None]
    for r in failed:
        logger.warning(f'replication {r} of {cfg} failed (seed {seeds[r]})')
    done = [result for result in results if result is not None]

    summaries = {}
    for name in ('ols', 'iv', 'tsiv'):
        slopes = [result.slopes[name] for result in done if name in result.slopes]
        if slopes:
            summaries[name] = _summarize_errors(np.asarray(slopes) - TRUE_SLOPE)
    coverage, coverage_se = _rate([result.covered for result in done
                                   if result.covered is not None])
    rejection, rejection_se, stats = {}, {}, {}
    for variant in ('standard', 'robust'):
        flags = [result.hausman_reject[variant] for result in done
                 if variant in result.hausman_reject]
        if flags:
            rejection[variant], rejection_se[variant] = _rate(flags)
            stats[variant] = np.array([result.hausman_t[variant] for result in done
                                       if variant in result.hausman_t])

    summary = McSummary(cfg.with_seed(base_seed), replications, len(failed),
                        summaries, coverage, coverage_se, rejection, rejection_se,
                        stats, lambda_multiplier)
    if not summary.valid:
        logger.warning(f'cell {cfg} is invalid: {len(failed)} of {replications} '
                       'replications failed')
    return summary


def size_corrected_power(null_stats, alt_stats, level: float = TEST_LEVEL) -> float:
    """Share of |alternative| statistics above the (1 - level) quantile of |null|."""
    null_stats = np.abs(np.asarray(null_stats, dtype=float))
    alt_stats = np.abs(np.asarray(alt_stats, dtype=float))
    if null_stats.size == 0 or alt_stats.size == 0:
        raise InsufficientSamplesError('both statistic samples must be nonempty',
                                       null=int(null_stats.size),
                                       alternative=int(alt_stats.size))
    critical = np.quantile(null_stats, 1.0 - level)
    return float(np.mean(alt_stats > critical))


def summary_table(summaries: list[McSummary], level: float = TEST_LEVEL) -> pd.DataFrame:
    """One row per cell; size-corrected power where a matching rho = 0 cell exists."""
    table = pd.DataFrame([summary.to_row() for summary in summaries])
    nulls = {(s.cfg.dgp, s.cfg.gamma, s.cfg.n): s for s in summaries
             if s.cfg.rho == 0.0}
    for column, variant in (('POW_S', 'standard'), ('POW_R', 'robust')):
        powers = []
        for summary in summaries:
            null = nulls.get((summary.cfg.dgp, summary.cfg.gamma, summary.cfg.n))
            if summary.cfg.rho > 0.0 and null is not None and \
                    variant in summary.hausman_stats and variant in null.hausman_stats:
                powers.append(size_corrected_power(null.hausman_stats[variant],
                                                   summary.hausman_stats[variant],
                                                   level))
            else:
                powers.append(math.nan)
        table[column] = powers
    return table
