"""Sieve design matrices.

A design is a horizontal concatenation of exogenous controls (passed through
untouched) and nonparametric blocks built from single raw columns: B-splines
for continuous variables, indicators for discrete ones. Blocks remember how
they were built, so the same design can be evaluated at new points.
"""
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import block_diag, eigh, qr

from ..utils.config import Config
from ..utils.errors import (DegenerateInputError, ExtrapolationWarning,
                            InsufficientDataError, RankDeficientError,
                            SchemaMismatchError, ShapeMismatchError)

RANK_TOL = 1e-12


class BasisKind(Enum):
    BSPLINE = 'bspline'
    INDICATOR = 'indicator'
    LINEAR = 'linear'


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind
    degree: int = 0
    interior_knot_count: int = 0
    levels: tuple = ()
    drop_first: bool = True

    def __post_init__(self):
        if self.kind is BasisKind.BSPLINE:
            if self.degree < 1 or self.interior_knot_count < 0:
                raise ShapeMismatchError('invalid B-spline spec',
                                         degree=self.degree,
                                         interior_knots=self.interior_knot_count)
        if self.kind is BasisKind.INDICATOR:
            if len(set(self.levels)) != len(self.levels) or len(self.levels) < 2:
                raise DegenerateInputError('indicator levels must be distinct',
                                           levels=list(self.levels))

    @property
    def column_count(self) -> int:
        dropped = 1 if self.drop_first else 0
        if self.kind is BasisKind.BSPLINE:
            return self.degree + self.interior_knot_count + 1 - dropped
        if self.kind is BasisKind.INDICATOR:
            return len(self.levels) - dropped
        return 1


@dataclass(frozen=True)
class RangeMap:
    """Affine map of a variable onto [0, 1]."""

    lo: float
    hi: float

    @classmethod
    def fit(cls, x: np.ndarray) -> 'RangeMap':
        return cls(float(np.min(x)), float(np.max(x)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)


@dataclass(frozen=True)
class BasisBlock:
    """One nonparametric block: a basis built on raw column `source`."""

    spec: BasisSpec
    source: int = 0
    knots: np.ndarray | None = None
    range_map: RangeMap | None = None

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.spec.kind is BasisKind.BSPLINE:
            u = self.range_map(x)
            outside = (u < 0.0) | (u > 1.0)
            if outside.any():
                warnings.warn(f'{int(outside.sum())} points outside the training '
                              'range; the spline basis is extended linearly',
                              ExtrapolationWarning, stacklevel=3)
            basis = bspline_basis(u, self.knots, self.spec.degree)
        elif self.spec.kind is BasisKind.INDICATOR:
            levels = np.asarray(self.spec.levels, dtype=float)
            unseen = ~np.isin(x, levels)
            if unseen.any():
                raise SchemaMismatchError('indicator evaluated at unseen level',
                                          value=float(x[unseen][0]))
            basis = (x[:, None] == levels[None, :]).astype(float)
        else:
            basis = x[:, None]
        return basis[:, 1:] if self.spec.drop_first and \
            self.spec.kind is not BasisKind.LINEAR else basis


@dataclass(frozen=True)
class DesignMatrix:
    """An evaluated sieve design `[controls | blocks]`.

    `standardizer` multiplies the nonparametric part; `None` stands for the
    identity.
    """

    values: np.ndarray
    blocks: tuple[BasisBlock, ...] = ()
    control_width: int = 0
    standardizer: np.ndarray | None = None
    source_count: int = field(default=0)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise DegenerateInputError('design matrix has non-finite entries')

    @property
    def includes_controls(self) -> bool:
        return self.control_width > 0

    @property
    def spec(self) -> tuple[BasisSpec, ...]:
        return tuple(block.spec for block in self.blocks)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def controls(self) -> np.ndarray:
        return self.values[:, :self.control_width]

    @property
    def block_values(self) -> np.ndarray:
        return self.values[:, self.control_width:]

    def evaluate(self, raw: np.ndarray) -> np.ndarray:
        """Evaluate the design at new raw inputs `[controls | sources]`."""
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw.reshape(-1, 1) if self.control_width + self.source_count == 1 \
                else raw.reshape(1, -1)
        expected = self.control_width + self.source_count
        if raw.shape[1] != expected:
            raise SchemaMismatchError(f'expected {expected} raw columns',
                                      got=raw.shape[1], expected=expected)
        sources = raw[:, self.control_width:]
        parts = [block.evaluate(sources[:, block.source]) for block in self.blocks]
        nonparametric = np.hstack(parts) if parts else np.empty((raw.shape[0], 0))
        if self.standardizer is not None:
            nonparametric = nonparametric @ self.standardizer
        return np.hstack([raw[:, :self.control_width], nonparametric])


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector onto the column span of a matrix.

    Only the thin orthonormal factor is kept; the n x n matrix is never formed.
    """

    basis: np.ndarray

    @classmethod
    def of(cls, a: np.ndarray | DesignMatrix) -> 'Projector':
        a = a.values if isinstance(a, DesignMatrix) else np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        q, r, _ = qr(a, mode='economic', pivoting=True)
        diag = np.abs(np.diag(r))
        if diag.size == 0 or diag[0] == 0.0:
            return cls(np.empty((a.shape[0], 0)))
        rank = int(np.sum(diag > RANK_TOL * diag[0]))
        return cls(q[:, :rank])

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def n(self) -> int:
        return self.basis.shape[0]


def project(pi: Projector, v: np.ndarray) -> np.ndarray:
    """Apply the projector to a vector or to every column of a matrix."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != pi.n:
        raise ShapeMismatchError('row count does not match the projector',
                                 rows=v.shape[0], expected=pi.n)
    return pi.basis @ (pi.basis.T @ v)


def annihilate(pi: Projector, v: np.ndarray) -> np.ndarray:
    """Residual of `v` after projection, (I - Pi) v."""
    v = np.asarray(v, dtype=float)
    return v - project(pi, v)


def bspline_basis(u: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """All B-spline basis functions at points `u` of the unit interval.

    Points outside [0, 1] are extended linearly from the boundary.
    """
    count = len(knots) - degree - 1
    spline = BSpline(knots, np.eye(count), degree, extrapolate=True)
    basis = spline(np.clip(u, 0.0, 1.0))
    below, above = u < 0.0, u > 1.0
    if below.any() or above.any():
        slope = spline.derivative()
        basis[below] += np.outer(u[below], slope(0.0))
        basis[above] += np.outer(u[above] - 1.0, slope(1.0))
    return basis


def _single_block(values: np.ndarray, block: BasisBlock) -> DesignMatrix:
    return DesignMatrix(values, blocks=(block,), control_width=0, source_count=1)


def build_bspline(x, degree: int = 3, interior_knots: int = 0,
                  drop_first: bool = True) -> DesignMatrix:
    """B-spline basis with interior knots at empirical quantiles of `x`.

    The first basis function is dropped by default because the intercept
    lives in the controls.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if np.unique(x).size < 2:
        raise DegenerateInputError('cannot build a spline on a constant column')
    if x.size <= degree + interior_knots + 1:
        raise InsufficientDataError('too few observations for the spline basis',
                                    n=x.size, degree=degree,
                                    interior_knots=interior_knots)

    range_map = RangeMap.fit(x)
    u = range_map(x)
    probs = np.arange(1, interior_knots + 1) / (interior_knots + 1)
    interior = np.quantile(u, probs, method='inverted_cdf') if interior_knots \
        else np.empty(0)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])

    block = BasisBlock(BasisSpec(BasisKind.BSPLINE, degree=degree,
                                 interior_knot_count=interior_knots,
                                 drop_first=drop_first),
                       source=0, knots=knots, range_map=range_map)
    return _single_block(block.evaluate(x), block)


def build_indicator(x, drop_first: bool = True) -> DesignMatrix:
    """Indicators of the sorted distinct values of `x`, first level dropped."""
    x = np.asarray(x, dtype=float).reshape(-1)
    levels = tuple(np.unique(x).tolist())
    if len(levels) < 2:
        raise DegenerateInputError('cannot build indicators on a constant column')
    block = BasisBlock(BasisSpec(BasisKind.INDICATOR, levels=levels,
                                 drop_first=drop_first), source=0)
    return _single_block(block.evaluate(x), block)


def build_linear(x) -> DesignMatrix:
    x = np.asarray(x, dtype=float).reshape(-1)
    block = BasisBlock(BasisSpec(BasisKind.LINEAR), source=0)
    return _single_block(block.evaluate(x), block)


def build_sieve_block(x, columns: int, degree: int | None = None,
                      discrete_levels: int | None = None) -> DesignMatrix:
    """Pick the basis for one raw column.

    Columns with few distinct values get indicators (their size is fixed by
    the support); others get a B-spline basis with `columns` columns.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    degree = Config.get_spline_degree() if degree is None else degree
    discrete_levels = Config.get_discrete_levels() if discrete_levels is None \
        else discrete_levels
    if np.unique(x).size <= discrete_levels:
        return build_indicator(x)
    degree = max(1, min(degree, columns))
    return build_bspline(x, degree=degree, interior_knots=columns - degree)


def assemble(controls, block: DesignMatrix, *more: DesignMatrix) -> DesignMatrix:
    """Concatenate `[controls | block | more...]`, recording block boundaries.

    Raw sources of the blocks are renumbered in argument order, so the
    assembled design evaluates raw input laid out as `[controls | x_1 | x_2 ...]`.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls.reshape(-1, 1)
    designs = (block, *more)
    for design in designs:
        if design.n != controls.shape[0]:
            raise ShapeMismatchError('controls and block row counts differ',
                                     controls=controls.shape[0], block=design.n)
        if design.includes_controls:
            raise ShapeMismatchError('block already contains controls')
    if not np.any(np.all(np.abs(controls - 1.0) < 1e-12, axis=0)):
        raise ShapeMismatchError('controls must contain an intercept column')

    blocks, standardizers, offset = [], [], 0
    for design in designs:
        blocks.extend(replace(b, source=b.source + offset) for b in design.blocks)
        standardizers.append(design.standardizer if design.standardizer is not None
                             else np.eye(design.width))
        offset += design.source_count

    standardizer = None
    if any(d.standardizer is not None for d in designs):
        standardizer = block_diag(*standardizers)
    values = np.hstack([controls, *(d.values for d in designs)])
    return DesignMatrix(values, blocks=tuple(blocks),
                        control_width=controls.shape[1],
                        standardizer=standardizer, source_count=offset)


def standardize(design: DesignMatrix) -> DesignMatrix:
    """Rescale the nonparametric block so its sample second moment is the identity.

    The block B becomes B M with M = (B'B/n)^{-1/2}; M is kept for evaluating
    the design out of sample.
    """
    b = design.block_values
    if b.shape[1] == 0:
        return design
    gram = b.T @ b / design.n
    eigenvalues, eigenvectors = eigh(gram)
    if eigenvalues[-1] <= 0.0 or eigenvalues[0] < RANK_TOL * eigenvalues[-1]:
        raise RankDeficientError('block second-moment matrix is singular',
                                 smallest=float(eigenvalues[0]),
                                 largest=float(eigenvalues[-1]))
    m = (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T
    m = (m + m.T) / 2.0
    standardizer = m if design.standardizer is None else design.standardizer @ m
    values = np.hstack([design.controls, b @ m])
    return replace(design, values=values, standardizer=standardizer)


def sieve_design(controls, raw: np.ndarray, columns: int,
                 degree: int | None = None,
                 discrete_levels: int | None = None) -> DesignMatrix:
    """Standardized `[controls | q(raw_1) | ... | q(raw_m)]`, one additive block per column."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw.reshape(-1, 1)
    blocks = [build_sieve_block(raw[:, i], columns, degree, discrete_levels)
              for i in range(raw.shape[1])]
    return standardize(assemble(controls, *blocks))
