"""Generalized cross-validation over tau = {j, c, lam}.

For a linear smoother L (fitted values L Y) the criterion is

    GCV(tau) = (1/n) sum_i ((Y_i - (L Y)_i) / (1 - trace(L)/n))^2.

For the TSIV smoother L = X (Hn'X)^{-1} Hn', trace(L) = p for every tau, so
the ranking is a ranking of residual sums of squares: the chosen point is the
one whose beta lies closest to least squares in the X'X metric, which
usually sits at an end of the lambda grid. For the structural
smoother L = P B^{-1} P' Pi_Q the trace varies with tau.
"""
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import solve

from ..models.dataset import Dataset
from ..utils.config import Config
from ..utils.errors import (AllScoresInfiniteError, DegenerateTraceError,
                            InvalidTuningError)
from ..utils.failure import failure_tolerant, infinite_on_failure
from ..utils.logger import Logger
from .design import Projector
from .first_stage import TuningTriple, estimate_instrument, tikhonov_effective_df
from .structural import estimate_g
from .tsiv import fit_tsiv, instrument_designs, structural_designs

DEFAULT_J_VALUES = (4, 5, 6, 7)
DEFAULT_C_VALUES = (1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_LAMBDAS = tuple(float(v) for v in np.logspace(-8, -1, 10))

# Simulation shortcut: Jn = 6 and Kn = 2 Jn, intercept included.
SHORTCUT_J = 5
SHORTCUT_C = 2.2


class GcvTarget(Enum):
    TSIV = 'tsiv'
    STRUCTURAL = 'structural'


@dataclass(frozen=True)
class GcvGrid:
    j_values: tuple = DEFAULT_J_VALUES
    c_values: tuple = DEFAULT_C_VALUES
    lambda_values: tuple = DEFAULT_LAMBDAS
    target: GcvTarget = GcvTarget.TSIV

    def __post_init__(self):
        object.__setattr__(self, 'j_values', tuple(int(j) for j in self.j_values))
        object.__setattr__(self, 'c_values', tuple(float(c) for c in self.c_values))
        object.__setattr__(self, 'lambda_values',
                           tuple(float(lam) for lam in self.lambda_values))
        object.__setattr__(self, 'target', GcvTarget(self.target))
        if not (self.j_values and self.c_values and self.lambda_values):
            raise InvalidTuningError('GCV grid lists must be nonempty')
        # Validates every combination eagerly.
        self.points()

    @classmethod
    def shortcut(cls, lambda_values=DEFAULT_LAMBDAS,
                 target: GcvTarget = GcvTarget.TSIV) -> 'GcvGrid':
        """Fixed block sizes, search over lambda only."""
        return cls((SHORTCUT_J,), (SHORTCUT_C,), lambda_values, target)

    def points(self) -> list[TuningTriple]:
        return [TuningTriple(j, c, lam) for j, c, lam in
                itertools.product(self.j_values, self.c_values, self.lambda_values)]


@dataclass(frozen=True)
class GcvScore:
    tuning: TuningTriple
    score: float
    effective_df: float


@dataclass(frozen=True)
class GcvResult:
    chosen: TuningTriple
    score_table: tuple[GcvScore, ...] = field(repr=False)

    @property
    def score(self) -> float:
        return next(s.score for s in self.score_table if s.tuning == self.chosen)

    @property
    def effective_df(self) -> dict[TuningTriple, float]:
        return {s.tuning: s.effective_df for s in self.score_table}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {'j': s.tuning.j, 'c': s.tuning.c, 'lambda': s.tuning.lam,
             'gcv': s.score, 'df': s.effective_df}
            for s in self.score_table
        ])


def gcv_from_smoother(y: np.ndarray, fitted: np.ndarray, trace: float) -> float:
    n = y.shape[0]
    if trace / n >= 1.0:
        raise DegenerateTraceError('trace(L)/n >= 1', trace=trace, n=n)
    return float(np.mean(((y - fitted) / (1.0 - trace / n)) ** 2))


def tsiv_smoother_trace(h: np.ndarray, x: np.ndarray) -> float:
    """trace(X (H'X)^{-1} H') = trace((H'X)^{-1} H'X)."""
    cross = h.T @ x
    return float(np.trace(solve(cross, cross)))


def _designs(data: Dataset, tau: TuningTriple, target: GcvTarget,
             degree=None, discrete_levels=None):
    if target is GcvTarget.TSIV:
        return instrument_designs(data, tau, degree, discrete_levels)
    return structural_designs(data, tau, degree, discrete_levels)


@failure_tolerant((math.inf, math.nan))
def _tsiv_components(data: Dataset, designs, lam: float) -> tuple[float, float]:
    instrument = estimate_instrument(data, *designs, lam)
    beta = fit_tsiv(data, instrument)
    trace = tsiv_smoother_trace(instrument.fitted, data.x)
    return gcv_from_smoother(data.y, data.x @ beta, trace), trace


@failure_tolerant((math.inf, math.nan))
def _structural_components(data: Dataset, designs, lam: float) -> tuple[float, float]:
    p_design, q_design = designs
    fit = estimate_g(data, p_design, q_design, lam)
    trace = tikhonov_effective_df(p_design.values, Projector.of(q_design), lam)
    return gcv_from_smoother(data.y, fit.fitted, trace), trace


_COMPONENTS = {
    GcvTarget.TSIV: _tsiv_components,
    GcvTarget.STRUCTURAL: _structural_components,
}


@infinite_on_failure
def gcv_score_tsiv(data: Dataset, tau: TuningTriple, degree=None,
                   discrete_levels=None) -> float:
    designs = _designs(data, tau, GcvTarget.TSIV, degree, discrete_levels)
    return _tsiv_components(data, designs, tau.lam)[0]


@infinite_on_failure
def gcv_score_structural(data: Dataset, tau: TuningTriple, degree=None,
                         discrete_levels=None) -> float:
    designs = _designs(data, tau, GcvTarget.STRUCTURAL, degree, discrete_levels)
    return _structural_components(data, designs, tau.lam)[0]


def _score_block(data: Dataset, j: int, c: float, lambdas: tuple,
                 target: GcvTarget, degree, discrete_levels) -> list[GcvScore]:
    """Score every lambda for one (j, c); the designs are shared."""
    taus = [TuningTriple(j, c, lam) for lam in lambdas]
    designs = failure_tolerant(None)(_designs)(data, taus[0], target,
                                               degree, discrete_levels)
    if designs is None:
        return [GcvScore(tau, math.inf, math.nan) for tau in taus]
    components = _COMPONENTS[target]
    return [GcvScore(tau, *components(data, designs, tau.lam)) for tau in taus]


def _selection_key(entry: GcvScore):
    # Ties go to larger lambda, then smaller j, then smaller c.
    return entry.score, -entry.tuning.lam, entry.tuning.j, entry.tuning.c


def select(data: Dataset, grid: GcvGrid | None = None, degree=None,
           discrete_levels=None, n_jobs: int | None = None) -> GcvResult:
    """Exhaustive GCV search; the full score table is kept for reporting."""
    grid = grid or GcvGrid()
    n_jobs = n_jobs or Config.get_thread_count()
    blocks = list(itertools.product(grid.j_values, grid.c_values))
    scored = Parallel(n_jobs=n_jobs, backend='threading')(
        delayed(_score_block)(data, j, c, grid.lambda_values, grid.target,
                              degree, discrete_levels)
        for j, c in blocks)
    table = tuple(entry for block in scored for entry in block)

    finite = [entry for entry in table if math.isfinite(entry.score)]
    if not finite:
        raise AllScoresInfiniteError('no grid point produced a valid fit',
                                     target=grid.target.value,
                                     points=len(table))
    chosen = min(finite, key=_selection_key)
    Logger().get_logger().debug(
        f'GCV ({grid.target.value}) chose j={chosen.tuning.j}, '
        f'c={chosen.tuning.c}, lambda={chosen.tuning.lam:.3g} '
        f'({len(finite)}/{len(table)} finite scores)')
    return GcvResult(chosen.tuning, table)
