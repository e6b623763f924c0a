"""Penalized sieve minimum distance estimate of the structural function g.

    Gn = P B^{-1} P' Pi_Q Y,    B = P'(Pi_Q + lam I) P.

This is the first-stage solver with the roles of P and Q swapped and Y as the
target. The fit only enters the variance of the TSIV estimator.
"""
from dataclasses import dataclass

import numpy as np

from ..models.dataset import Dataset
from ..utils.errors import SchemaMismatchError, ShapeMismatchError
from .design import DesignMatrix, Projector
from .first_stage import tikhonov_solve


@dataclass(frozen=True)
class StructuralFit:
    coef: np.ndarray
    fitted: np.ndarray
    lam: float
    p_design: DesignMatrix
    q_design: DesignMatrix
    condition: float

    @property
    def bases(self) -> tuple[DesignMatrix, DesignMatrix]:
        return self.p_design, self.q_design


def estimate_g(data: Dataset, p_design: DesignMatrix, q_design: DesignMatrix,
               lam: float) -> StructuralFit:
    if p_design.n != data.n or q_design.n != data.n:
        raise ShapeMismatchError('designs and data have different row counts',
                                 n=data.n, p_rows=p_design.n, q_rows=q_design.n)
    solution = tikhonov_solve(p_design.values, Projector.of(q_design),
                              data.y[:, None], lam)
    return StructuralFit(solution.coef[:, 0], solution.fitted[:, 0], lam,
                         p_design, q_design, solution.condition)


def evaluate_g(fit: StructuralFit, x_new) -> np.ndarray:
    """Evaluate g_n at new regressor rows `[X1 | X2]`."""
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        x_new = x_new.reshape(1, -1)
    expected = fit.p_design.control_width + fit.p_design.source_count
    if x_new.shape[1] != expected:
        raise SchemaMismatchError(f'expected {expected} regressor columns',
                                  got=x_new.shape[1], expected=expected)
    return fit.p_design.evaluate(x_new) @ fit.coef
