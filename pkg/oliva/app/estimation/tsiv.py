"""Two-step IV: linear IV of Y on X with the estimated instrument, and its variance.

    beta = (Hn'X)^{-1} Hn'Y
    m(W) = (Y - X'beta) h(Z) - (g(X) - X'beta) (h(Z) - X)
    Sigma = En[h X']^{-1} En[m m'] En[X h']^{-1},   se = sqrt(diag(Sigma) / n)

The second term of m accounts for estimating h; it vanishes when g is linear
or when h(Z) = X.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve
from scipy.stats import norm

from ..models.dataset import Dataset
from ..utils.errors import (InstrumentRankDeficientError, InvalidLevelError,
                            ShapeMismatchError)
from ..utils.logger import Logger
from .design import sieve_design
from .first_stage import (InstrumentFit, TuningTriple, estimate_instrument,
                          first_stage_diagnostics)
from .structural import StructuralFit, estimate_g

MAX_CONDITION = 1e10


def _instrument_values(instrument) -> np.ndarray:
    if isinstance(instrument, InstrumentFit):
        return instrument.fitted
    return np.asarray(instrument, dtype=float)


def linear_iv(x: np.ndarray, h: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Just-identified linear IV, raising when h'x is numerically singular."""
    if h.shape != x.shape:
        raise ShapeMismatchError('instrument and regressors differ in shape',
                                 instrument=list(h.shape), regressors=list(x.shape))
    cross = h.T @ x
    condition = float(np.linalg.cond(cross))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise InstrumentRankDeficientError("Hn'X is singular", condition=condition)
    return solve(cross, h.T @ y)


def fit_tsiv(data: Dataset, instrument) -> np.ndarray:
    return linear_iv(data.x, _instrument_values(instrument), data.y)


@dataclass(frozen=True)
class InfluenceMatrix:
    values: np.ndarray

    @property
    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)


def _weighted_regressors(data: Dataset, instrument) -> np.ndarray:
    """X, with the endogenous block scaled by w(X) for a weighted instrument."""
    x = data.x
    weights = getattr(instrument, 'target_weights', None)
    if weights is None:
        return x
    x = x.copy()
    x[:, data.p1:] *= weights[:, None]
    return x


def influence(data: Dataset, beta: np.ndarray, instrument,
              structural_fit: StructuralFit | np.ndarray) -> InfluenceMatrix:
    """Row-wise influence function m(W_i, beta, h, g)."""
    h = _instrument_values(instrument)
    g = structural_fit.fitted if isinstance(structural_fit, StructuralFit) \
        else np.asarray(structural_fit, dtype=float).reshape(-1)
    if h.shape != (data.n, data.p) or g.shape != (data.n,):
        raise ShapeMismatchError('fits were not computed on this sample',
                                 n=data.n, h=list(h.shape), g=list(g.shape))
    linear = data.x @ beta
    residual = data.y - linear
    values = residual[:, None] * h \
        - (g - linear)[:, None] * (h - _weighted_regressors(data, instrument))
    return InfluenceMatrix(values)


def covariance(data: Dataset, instrument, infl: InfluenceMatrix) -> np.ndarray:
    """Sandwich En[h X']^{-1} En[m m'] En[X h']^{-1}, symmetrized."""
    h = _instrument_values(instrument)
    bread = h.T @ data.x / data.n
    condition = float(np.linalg.cond(bread))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise InstrumentRankDeficientError('En[h X\'] is singular',
                                           condition=condition)
    meat = infl.values.T @ infl.values / data.n
    half = solve(bread, meat)
    sigma = solve(bread, half.T).T
    return (sigma + sigma.T) / 2.0


def standard_errors(sigma: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(sigma), 0.0, None) / n)


@dataclass(frozen=True)
class TsivFit:
    beta: np.ndarray
    sigma: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    level: float
    n: int
    tuning: TuningTriple | None = None
    condition: float = math.nan
    names: list[str] = field(default_factory=list)
    instrument: InstrumentFit | None = field(default=None, repr=False)
    structural: StructuralFit | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        names = self.names or [f'b{i}' for i in range(self.beta.size)]
        return {
            name: {'estimate': float(b), 'se': float(s),
                   'ci': [float(lo), float(hi)]}
            for name, b, s, (lo, hi) in zip(names, self.beta, self.se, self.ci)
        }


def confidence_intervals(fit: TsivFit, level: float) -> np.ndarray:
    """beta_i -/+ z_{(1+level)/2} se_i, one row per coefficient."""
    return _intervals(fit.beta, fit.se, level)


def _intervals(beta: np.ndarray, se: np.ndarray, level: float) -> np.ndarray:
    if not 0.0 <= level < 1.0:
        raise InvalidLevelError('confidence level must lie in [0, 1)', level=level)
    half = norm.ppf((1.0 + level) / 2.0) * se
    return np.column_stack([beta - half, beta + half])


def _assemble_fit(data: Dataset, beta, h, g, level, tuning=None,
                  instrument=None, structural=None) -> TsivFit:
    infl = influence(data, beta, instrument if instrument is not None else h, g)
    sigma = covariance(data, h, infl)
    se = standard_errors(sigma, data.n)
    return TsivFit(beta=beta, sigma=sigma, se=se, ci=_intervals(beta, se, level),
                   level=level, n=data.n, tuning=tuning,
                   condition=float(np.linalg.cond(h.T @ data.x)),
                   names=data.regressor_names, instrument=instrument,
                   structural=structural)


def instrument_designs(data: Dataset, tuning: TuningTriple, degree=None,
                       discrete_levels=None):
    """(P, Q) for the instrument: j columns per instrument, floor(c j) per regressor."""
    q_design = sieve_design(data.controls, data.instruments, tuning.j,
                            degree, discrete_levels)
    p_design = sieve_design(data.controls, data.endogenous, tuning.k,
                            degree, discrete_levels)
    return p_design, q_design


def structural_designs(data: Dataset, tuning: TuningTriple, degree=None,
                       discrete_levels=None):
    """(P, Q) for g with the block sizes of the instrument fit switched."""
    p_design = sieve_design(data.controls, data.endogenous, tuning.j,
                            degree, discrete_levels)
    q_design = sieve_design(data.controls, data.instruments, tuning.k,
                            degree, discrete_levels)
    return p_design, q_design


def estimate_tsiv(data: Dataset, tuning: TuningTriple,
                  structural_tuning: TuningTriple | None = None,
                  level: float = 0.95, weights=None,
                  degree=None, discrete_levels=None) -> TsivFit:
    """Run steps 2-4: instrument, beta, g and the sandwich variance.

    Without `structural_tuning`, g reuses lambda with the block sizes switched.
    """
    p_design, q_design = instrument_designs(data, tuning, degree, discrete_levels)
    instrument = estimate_instrument(data, p_design, q_design, tuning.lam, weights)
    beta = fit_tsiv(data, instrument)

    g_tuning = structural_tuning or tuning
    g_p, g_q = structural_designs(data, g_tuning, degree, discrete_levels)
    structural = estimate_g(data, g_p, g_q, g_tuning.lam)

    diagnostics = first_stage_diagnostics(instrument, data)
    Logger().get_logger().debug(
        f'TSIV fit with {tuning}: smallest singular value of En[hX\'] = '
        f'{diagnostics.smallest_singular_value:.4g}')
    return _assemble_fit(data, beta, instrument.fitted, structural, level,
                         tuning=tuning, instrument=instrument,
                         structural=structural)


def ols_fit(data: Dataset, level: float = 0.95) -> TsivFit:
    """Least squares with heteroskedasticity-robust (HC0) standard errors."""
    x = data.x
    beta = linear_iv(x, x, data.y)
    return _assemble_fit(data, beta, x, x @ beta, level)


def tsls_fit(data: Dataset, level: float = 0.95) -> TsivFit:
    """Linear two-stage least squares with instruments (X1, Z2), robust errors."""
    z = data.z
    coef, *_ = np.linalg.lstsq(z, data.x, rcond=None)
    h = z @ coef
    beta = linear_iv(data.x, h, data.y)
    return _assemble_fit(data, beta, h, data.x @ beta, level)
