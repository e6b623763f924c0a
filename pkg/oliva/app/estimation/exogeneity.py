"""Regression-based Hausman tests of exogeneity.

Residuals V of a first-stage regression of X2 are added to the outcome
equation, Y = X'beta + V'rho + xi, and rho = 0 is tested with plain OLS
standard errors. The robust variant builds V from the estimated optimal
instrument, so OLS and IV estimate the same object under exogeneity even when
the linear model is misspecified; the standard variant uses the raw
instruments.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
import statsmodels.api as sm
from scipy.stats import chi2, norm

from ..models.dataset import Dataset
from ..utils.errors import CollinearAugmentationError
from .design import Projector, annihilate

COLLINEARITY_TOL = 1e-8


class HausmanVariant(Enum):
    ROBUST = 'robust'
    STANDARD = 'standard'


@dataclass(frozen=True)
class HausmanResult:
    """t statistic (Wald statistic when df > 1) for rho = 0."""

    t_stat: float
    p_value: float
    rho_hat: np.ndarray
    se_rho: np.ndarray
    variant: HausmanVariant
    n: int
    df: int = 1

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level

    def to_dict(self) -> dict:
        return {
            'variant': self.variant.value,
            'statistic': self.t_stat,
            'df': self.df,
            'p_value': self.p_value,
            'rho': self.rho_hat.tolist(),
            'se_rho': self.se_rho.tolist(),
            'n': self.n,
        }


def first_stage_residuals(x2: np.ndarray, regressors: np.ndarray) -> np.ndarray:
    """OLS residuals of every column of X2 on the first-stage regressors."""
    return np.column_stack([sm.OLS(x2[:, i], regressors).fit().resid
                            for i in range(x2.shape[1])])


def augmented_regression_test(data: Dataset, v_hat: np.ndarray,
                              variant: HausmanVariant,
                              robust_se: bool = False) -> HausmanResult:
    x = data.x
    v_hat = v_hat.reshape(data.n, -1)
    residual = annihilate(Projector.of(x), v_hat)
    scale = max(float(np.linalg.norm(v_hat)), np.finfo(float).tiny)
    augmented = np.hstack([x, v_hat])
    if np.linalg.norm(residual) <= COLLINEARITY_TOL * scale or \
            Projector.of(augmented).rank < augmented.shape[1]:
        raise CollinearAugmentationError(
            'first-stage residuals lie in the span of X; the instrument is '
            'close to linear in X', variant=variant.value)

    fit = sm.OLS(data.y, augmented).fit(cov_type='HC0' if robust_se else 'nonrobust')
    k = v_hat.shape[1]
    rho = np.asarray(fit.params)[-k:]
    cov = np.asarray(fit.cov_params())[-k:, -k:]
    se = np.sqrt(np.diag(cov))
    if k == 1:
        statistic = float(rho[0] / se[0])
        p_value = float(2.0 * norm.sf(abs(statistic)))
    else:
        statistic = float(rho @ np.linalg.solve(cov, rho))
        p_value = float(chi2.sf(statistic, k))
    return HausmanResult(statistic, p_value, rho, se, variant, data.n, df=k)


def robust_hausman(data: Dataset, instrument, robust_se: bool = False) -> HausmanResult:
    """V from regressing X2 on (X1, h2_n(Z))."""
    h = getattr(instrument, 'fitted', instrument)
    h2 = np.asarray(h, dtype=float)[:, data.p1:]
    v_hat = first_stage_residuals(data.endogenous, np.hstack([data.controls, h2]))
    return augmented_regression_test(data, v_hat, HausmanVariant.ROBUST, robust_se)


def standard_hausman(data: Dataset, robust_se: bool = False) -> HausmanResult:
    """V from regressing X2 on (X1, Z2): the classical regression-based test."""
    v_hat = first_stage_residuals(data.endogenous, data.z)
    return augmented_regression_test(data, v_hat, HausmanVariant.STANDARD, robust_se)
