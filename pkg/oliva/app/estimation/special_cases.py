"""Closed-form minimum-norm instruments for discrete endogenous regressors.

Binary X2 with X = (1, X2): h0(z) = alpha + gamma pi(z), with
gamma = pi_bar (1 - pi_bar) / var(pi(Z)) and alpha = pi_bar (1 - gamma). The
OLIVA slope is then the IV estimand with the propensity score as instrument.

Discrete X2 with support {x_1, ..., x_d}: h0(z) = gamma' Pi(z), with
gamma = E[Pi Pi']^{-1} S and S = (pi_1 x_1, ..., pi_d x_d)'.
"""
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve

from ..models.dataset import Dataset
from ..utils.errors import (ConstantPropensityError, DegenerateTreatmentError,
                            SchemaMismatchError, WeakPropensityError)
from ..utils.logger import Logger
from .design import DesignMatrix, Projector, assemble, build_indicator, project, sieve_design
from .first_stage import estimate_instrument

PROPENSITY_CLIP = 1e-6
MAX_CONDITION = 1e12


def _single_endogenous(data: Dataset) -> np.ndarray:
    if data.p2 != 1:
        raise SchemaMismatchError('exactly one endogenous column is required',
                                  endogenous=data.p2)
    return data.endogenous[:, 0]


@dataclass(frozen=True)
class PropensityModel:
    """Sieve estimate of pi(z) = Pr(X2 = 1 | Z = z), clipped into (0, 1)."""

    coef: np.ndarray
    q_design: DesignMatrix | None
    pi: np.ndarray

    @property
    def pi_bar(self) -> float:
        return float(np.mean(self.pi))

    @property
    def var_pi(self) -> float:
        return float(np.var(self.pi))

    def pi_hat(self, z) -> np.ndarray:
        """Evaluate the propensity at new instrument rows `[Z1 | Z2]`."""
        raw = self.q_design.evaluate(np.atleast_2d(np.asarray(z, dtype=float)))
        return np.clip(raw @ self.coef, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)

    @classmethod
    def from_values(cls, pi) -> 'PropensityModel':
        """A propensity given directly by its sample values (no evaluation support)."""
        pi = np.clip(np.asarray(pi, dtype=float).reshape(-1),
                     PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
        return cls(np.empty(0), None, pi)


def fit_propensity(data: Dataset, q_design: DesignMatrix) -> PropensityModel:
    """Least-squares regression of the binary X2 on the instrument design."""
    x2 = _single_endogenous(data)
    if not np.all(np.isin(x2, (0.0, 1.0))):
        raise SchemaMismatchError('endogenous column must be binary (0/1)')
    coef, *_ = np.linalg.lstsq(q_design.values, x2, rcond=None)
    pi = np.clip(q_design.values @ coef, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    return PropensityModel(coef, q_design, pi)


def binary_h0(pm: PropensityModel) -> tuple[float, float]:
    """(alpha, gamma) of the minimum-norm instrument alpha + gamma pi(z)."""
    pi_bar, var_pi = pm.pi_bar, pm.var_pi
    if not 0.0 < pi_bar < 1.0:
        raise DegenerateTreatmentError('treatment probability must lie in (0, 1)',
                                       pi_bar=pi_bar)
    if var_pi <= 1e-12:
        raise ConstantPropensityError('propensity score does not vary with Z',
                                      var_pi=var_pi)
    gamma = pi_bar * (1.0 - pi_bar) / var_pi
    return pi_bar * (1.0 - gamma), gamma


def binary_oliva(data: Dataset, pm: PropensityModel) -> tuple[float, float]:
    """(intercept, slope) of the OLIVA: IV with instrument (1, pi_hat(Z))."""
    x2 = _single_endogenous(data)
    pi = pm.pi
    pi_centered = pi - pi.mean()
    cov_x = float(np.mean((x2 - x2.mean()) * pi_centered))
    if abs(cov_x) <= 1e-10:
        raise WeakPropensityError('Cov(X2, pi_hat) is numerically zero', cov=cov_x)
    slope = float(np.mean((data.y - data.y.mean()) * pi_centered)) / cov_x
    return float(data.y.mean() - slope * x2.mean()), slope


def _to_simplex(pi: np.ndarray) -> np.ndarray:
    pi = np.clip(np.asarray(pi, dtype=float), 0.0, None)
    totals = pi.sum(axis=1, keepdims=True)
    uniform = np.full_like(pi, 1.0 / pi.shape[1])
    return np.where(totals > 0.0, pi / np.where(totals > 0.0, totals, 1.0), uniform)


@dataclass(frozen=True)
class GeneralizedPropensity:
    """Sieve estimate of Pi(z) = (Pr(X2 = x_k | Z = z))_k, renormalized to the simplex."""

    coef: np.ndarray
    q_design: DesignMatrix
    support: tuple

    def __call__(self, z) -> np.ndarray:
        raw = self.q_design.evaluate(np.atleast_2d(np.asarray(z, dtype=float)))
        return _to_simplex(raw @ self.coef)


def fit_generalized_propensity(data: Dataset, q_design: DesignMatrix,
                               support=None) -> GeneralizedPropensity:
    x2 = _single_endogenous(data)
    support = tuple(np.unique(x2).tolist()) if support is None else tuple(support)
    indicators = (x2[:, None] == np.asarray(support)[None, :]).astype(float)
    coef, *_ = np.linalg.lstsq(q_design.values, indicators, rcond=None)
    return GeneralizedPropensity(coef, q_design, support)


@dataclass(frozen=True)
class DiscreteInstrument:
    support: tuple
    gamma: np.ndarray | None
    S: np.ndarray
    values: np.ndarray
    fallback: bool = False
    Pi_hat: Callable | None = None

    def evaluate(self, pi_rows) -> np.ndarray:
        """h0 at generalized propensity rows (closed-form path only)."""
        if self.gamma is None:
            raise SchemaMismatchError('instrument was estimated by the Tikhonov fallback')
        return _to_simplex(np.atleast_2d(pi_rows)) @ self.gamma


def discrete_h0(data: Dataset, support, Pi_hat, q_design: DesignMatrix | None = None,
                fallback_lambda: float = 1e-6) -> DiscreteInstrument:
    """Minimum-norm instrument for a discrete X2 on the given support.

    `Pi_hat` is either a callable evaluated at `data.z` or the n x d matrix of
    generalized propensities. When the sample E[Pi Pi'] is singular the
    instrument is estimated by the Tikhonov route with indicator regressors.
    """
    x2 = _single_endogenous(data)
    support = tuple(float(s) for s in support)
    pi_rows = Pi_hat(data.z) if callable(Pi_hat) else Pi_hat
    pi_rows = _to_simplex(np.asarray(pi_rows, dtype=float))
    if pi_rows.shape != (data.n, len(support)):
        raise SchemaMismatchError('propensity rows do not match the support',
                                  shape=list(pi_rows.shape), support=len(support))

    frequencies = np.array([np.mean(x2 == s) for s in support])
    targets = frequencies * np.asarray(support)
    second_moment = pi_rows.T @ pi_rows / data.n
    condition = float(np.linalg.cond(second_moment))
    callable_pi = Pi_hat if callable(Pi_hat) else None

    if math.isfinite(condition) and condition <= MAX_CONDITION:
        gamma = solve(second_moment, targets, assume_a='pos')
        return DiscreteInstrument(support, gamma, targets, pi_rows @ gamma,
                                  Pi_hat=callable_pi)

    Logger().get_logger().info(f'E[Pi Pi\'] is singular (cond={condition:.3g}); '
                               'using the Tikhonov estimator')
    if q_design is None:
        q_design = sieve_design(data.controls, data.instruments, 5)
    p_design = assemble(data.controls, build_indicator(x2))
    fit = estimate_instrument(data, p_design, q_design, fallback_lambda)
    return DiscreteInstrument(support, None, targets, fit.h2[:, 0], fallback=True,
                              Pi_hat=callable_pi)


def saturated_propensity(data: Dataset) -> np.ndarray:
    """Within-cell frequencies of X2 levels for a discrete Z2 (exact projection)."""
    x2 = _single_endogenous(data)
    q = assemble(data.controls, *(build_indicator(data.instruments[:, i])
                                  for i in range(data.instruments.shape[1])))
    support = np.unique(x2)
    indicators = (x2[:, None] == support[None, :]).astype(float)
    return project(Projector.of(q), indicators)
