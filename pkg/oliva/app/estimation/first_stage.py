"""Tikhonov-regularized estimation of the optimal instrument.

The instrument h solves E[h(Z)|X] = X. On a sieve this becomes

    H2 = Q A^{-1} Q' Pi_P X2,    A = Q'(Pi_P + lam I) Q,

in the n-scaled form (no 1/n factors). The same solver, with the roles of
the two designs swapped, estimates the structural function (see
`structural.py`).
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, lstsq, solve

from ..models.dataset import Dataset
from ..utils.errors import (DegenerateInputError, InvalidTuningError,
                            SchemaMismatchError, ShapeMismatchError,
                            SingularSystemError)
from ..utils.logger import Logger
from .design import DesignMatrix, Projector, project, standardize

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class TuningTriple:
    """tau = {j, c, lam}: block size j, ratio c (k = floor(c j)) and penalty lam."""

    j: int
    c: float = 2.0
    lam: float = 1e-4

    def __post_init__(self):
        if self.j < 1:
            raise InvalidTuningError('j must be at least 1', j=self.j)
        if not 1.0 <= self.c <= 3.0:
            raise InvalidTuningError('c must lie in [1, 3]', c=self.c)
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise InvalidTuningError('lambda must be positive', lam=self.lam)

    @property
    def k(self) -> int:
        return math.floor(self.c * self.j + 1e-9)

    def with_lambda(self, lam: float) -> 'TuningTriple':
        return TuningTriple(self.j, self.c, lam)


@dataclass(frozen=True)
class TikhonovSolution:
    coef: np.ndarray
    fitted: np.ndarray
    condition: float


def tikhonov_solve(basis: np.ndarray, projector: Projector, target: np.ndarray,
                   lam: float) -> TikhonovSolution:
    """Minimize ||Pi (target - B c)||^2 + lam ||B c||^2 over c.

    The normal equations (B' Pi B + lam B'B) c = B' Pi target are solved by a
    symmetric factorization after a condition check; lam = 0 is accepted only
    when the unpenalized system passes that check.
    """
    if lam < 0.0 or not math.isfinite(lam):
        raise InvalidTuningError('lambda must be nonnegative', lam=lam)
    if basis.shape[0] != projector.n or target.shape[0] != projector.n:
        raise ShapeMismatchError('basis, target and projector row counts differ',
                                 basis=basis.shape[0], target=target.shape[0],
                                 projector=projector.n)
    ub = projector.basis.T @ basis
    a = ub.T @ ub + lam * (basis.T @ basis)
    a = (a + a.T) / 2.0
    rhs = ub.T @ (projector.basis.T @ target)

    condition = float(np.linalg.cond(a))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSystemError('regularized normal equations are singular',
                                  condition=condition, lam=lam)
    coef = solve(a, rhs, assume_a='sym')
    return TikhonovSolution(coef, basis @ coef, condition)


def tikhonov_effective_df(basis: np.ndarray, projector: Projector,
                          lam: float) -> float:
    """trace(B (B' Pi B + lam B'B)^{-1} B' Pi), computed as a trace of a small matrix."""
    ub = projector.basis.T @ basis
    inner = ub.T @ ub
    a = inner + lam * (basis.T @ basis)
    return float(np.trace(solve((a + a.T) / 2.0, inner, assume_a='sym')))


@dataclass(frozen=True)
class InstrumentFit:
    """Fitted instrument Hn = [Z1 H2n] with H2n = Q coef."""

    coef: np.ndarray
    fitted: np.ndarray
    lam: float
    p_design: DesignMatrix
    q_design: DesignMatrix
    control_width: int
    condition: float
    target_weights: np.ndarray | None = None

    @property
    def bases(self) -> tuple[DesignMatrix, DesignMatrix]:
        return self.p_design, self.q_design

    @property
    def h2(self) -> np.ndarray:
        return self.fitted[:, self.control_width:]


def _check_inputs(data: Dataset, p_design: DesignMatrix, q_design: DesignMatrix,
                  weights) -> np.ndarray:
    if p_design.n != data.n or q_design.n != data.n:
        raise ShapeMismatchError('designs and data have different row counts',
                                 n=data.n, p_rows=p_design.n, q_rows=q_design.n)
    target = data.endogenous
    if weights is not None:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.shape[0] != data.n:
            raise ShapeMismatchError('weights must have one entry per row',
                                     n=data.n, weights=weights.shape[0])
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise DegenerateInputError('weights must be positive and finite')
        target = target * weights[:, None]
    return target


def estimate_instrument(data: Dataset, p_design: DesignMatrix,
                        q_design: DesignMatrix, lam: float,
                        weights=None) -> InstrumentFit:
    """Estimate the instrument by the closed-form Tikhonov solution.

    With `weights` w the target X2 is replaced by X2 * w, which estimates the
    instrument of the w-weighted linear approximation.
    """
    target = _check_inputs(data, p_design, q_design, weights)
    solution = tikhonov_solve(q_design.values, Projector.of(p_design), target, lam)
    fitted = np.hstack([data.controls, solution.fitted])
    Logger().get_logger().debug(f'instrument fit: lam={lam:.3g}, '
                                f'cond(A)={solution.condition:.3g}')
    return InstrumentFit(
        coef=solution.coef, fitted=fitted, lam=lam,
        p_design=p_design, q_design=q_design,
        control_width=data.p1, condition=solution.condition,
        target_weights=None if weights is None else
        np.asarray(weights, dtype=float).reshape(-1))


def ridge_penalty(q_design: DesignMatrix, lam: float) -> np.ndarray:
    """Per-observation penalty matrix lam Q'Q / n of the ridge step."""
    q = q_design.values
    return lam * (q.T @ q) / q_design.n


def two_stage_form(data: Dataset, p_design: DesignMatrix, q_design: DesignMatrix,
                   lam: float, weights=None) -> InstrumentFit:
    """The same instrument computed as a least-squares fit followed by a ridge.

    (i) standardize q, (ii) regress every q column on P to get q_hat(X),
    (iii) ridge-regress X2 on q_hat with penalty lam ||Q c||^2, solved as an
    augmented least-squares problem.
    """
    target = _check_inputs(data, p_design, q_design, weights)
    if lam < 0.0:
        raise InvalidTuningError('lambda must be nonnegative', lam=lam)

    standardized = q_design if q_design.standardizer is not None \
        else standardize(q_design)
    q = standardized.values
    q_hat = project(Projector.of(p_design), q)

    if lam > 0.0:
        root = cholesky(q.T @ q, lower=False)
        design = np.vstack([q_hat, math.sqrt(lam) * root])
        response = np.vstack([target, np.zeros((q.shape[1], target.shape[1]))])
    else:
        design, response = q_hat, target
    coef, _, rank, singular_values = lstsq(design, response)
    if rank < q.shape[1]:
        raise SingularSystemError('ridge design is rank deficient', rank=int(rank),
                                  columns=q.shape[1])
    condition = float((singular_values[0] / singular_values[-1]) ** 2)

    # Map coefficients back to the caller's basis when we standardized here.
    if standardized is not q_design:
        cw = q_design.control_width
        coef = np.vstack([coef[:cw], standardized.standardizer @ coef[cw:]])
    fitted = np.hstack([data.controls, q_design.values @ coef])
    return InstrumentFit(
        coef=coef, fitted=fitted, lam=lam,
        p_design=p_design, q_design=q_design,
        control_width=data.p1, condition=condition,
        target_weights=None if weights is None else
        np.asarray(weights, dtype=float).reshape(-1))


def evaluate_instrument(fit: InstrumentFit, z_new) -> np.ndarray:
    """Evaluate h_n at new instrument rows `[Z1 | Z2]`."""
    z_new = np.asarray(z_new, dtype=float)
    if z_new.ndim == 1:
        z_new = z_new.reshape(1, -1)
    expected = fit.q_design.control_width + fit.q_design.source_count
    if z_new.shape[1] != expected:
        raise SchemaMismatchError(f'expected {expected} instrument columns',
                                  got=z_new.shape[1], expected=expected)
    basis = fit.q_design.evaluate(z_new)
    return np.hstack([z_new[:, :fit.control_width], basis @ fit.coef])


@dataclass(frozen=True)
class FirstStageDiagnostics:
    moment: np.ndarray
    smallest_singular_value: float
    discrepancy: float
    residual: float
    condition: float

    def to_dict(self) -> dict:
        return {
            'moment': self.moment.tolist(),
            'smallest_singular_value': self.smallest_singular_value,
            'discrepancy': self.discrepancy,
            'residual': self.residual,
            'condition': self.condition,
        }


def first_stage_diagnostics(fit: InstrumentFit, data: Dataset) -> FirstStageDiagnostics:
    """Instrument strength: En[h X'] against En[X X'] and the fit of Pi_P h to X.

    In population En[h X'] = En[X X']; a small singular value of the sample
    moment signals a weak first stage.
    """
    x, h, n = data.x, fit.fitted, data.n
    moment = h.T @ x / n
    singular_values = np.linalg.svd(moment, compute_uv=False)
    smallest = float(singular_values[-1])
    condition = float(singular_values[0] / smallest) if smallest > 0 else math.inf
    discrepancy = float(np.linalg.norm(moment - x.T @ x / n))
    gap = x - project(Projector.of(fit.p_design), h)
    residual = float(math.sqrt(np.sum(gap ** 2) / n))
    return FirstStageDiagnostics(moment, smallest, discrepancy, residual, condition)
