from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..utils.errors import ParseError, RoleError, ShapeMismatchError

INTERCEPT = 'const'


def _as_matrix(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != n:
        raise ShapeMismatchError(f'{name} must have {n} rows', name=name,
                                 shape=list(arr.shape))
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observations split by role.

    `controls` are the exogenous regressors X1 (they include the intercept and
    double as the included instruments Z1), `endogenous` is X2 and
    `instruments` is the excluded instrument block Z2.
    """

    y: np.ndarray
    controls: np.ndarray
    endogenous: np.ndarray
    instruments: np.ndarray
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'controls',
                           _as_matrix(self.controls, n, 'controls'))
        object.__setattr__(self, 'endogenous',
                           _as_matrix(self.endogenous, n, 'endogenous'))
        object.__setattr__(self, 'instruments',
                           _as_matrix(self.instruments, n, 'instruments'))
        names = {
            'outcome': 'y',
            'controls': [f'x1_{i}' for i in range(self.controls.shape[1])],
            'endogenous': [f'x2_{i}' for i in range(self.endogenous.shape[1])],
            'instruments': [f'z2_{i}' for i in range(self.instruments.shape[1])],
            **self.names,
        }
        object.__setattr__(self, 'names', names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p1(self) -> int:
        return self.controls.shape[1]

    @property
    def p2(self) -> int:
        return self.endogenous.shape[1]

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def x(self) -> np.ndarray:
        """Regressors X = [X1 X2]."""
        return np.hstack([self.controls, self.endogenous])

    @property
    def z(self) -> np.ndarray:
        """Instruments Z = [Z1 Z2] with Z1 = X1."""
        return np.hstack([self.controls, self.instruments])

    @property
    def regressor_names(self) -> list[str]:
        return [*self.names['controls'], *self.names['endogenous']]

    def with_outcome(self, y) -> 'Dataset':
        return Dataset(y, self.controls, self.endogenous, self.instruments,
                       dict(self.names))

    @classmethod
    def simple(cls, y, endogenous, instruments, controls=None) -> 'Dataset':
        """Build a dataset with an intercept prepended to the controls."""
        y = np.asarray(y, dtype=float).reshape(-1)
        ones = np.ones((y.shape[0], 1))
        if controls is None:
            controls = ones
        else:
            controls = np.hstack([ones, _as_matrix(controls, y.shape[0],
                                                   'controls')])
        return cls(y, controls, endogenous, instruments)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, outcome: str,
                   endogenous: list[str], instruments: list[str],
                   controls: list[str] | None = None) -> 'Dataset':
        """Select columns by role; an intercept column is prepended to controls."""
        controls = list(controls or [])
        roles = {'outcome': [outcome], 'endogenous': list(endogenous),
                 'instruments': list(instruments), 'controls': controls}
        if not endogenous:
            raise RoleError('at least one endogenous column is required')
        if not instruments:
            raise RoleError('at least one instrument column is required')

        seen = {}
        for role, columns in roles.items():
            for column in columns:
                if column not in frame.columns:
                    raise RoleError(f'column {column!r} not found in header',
                                    column=column, role=role)
                if column in seen:
                    raise RoleError(f'column {column!r} has two roles',
                                    column=column, roles=[seen[column], role])
                seen[column] = role

        numeric = frame[list(seen)].apply(pd.to_numeric, errors='coerce')
        bad = numeric.isna() | ~np.isfinite(numeric.to_numpy(dtype=float))
        if bad.to_numpy().any():
            row, col = np.argwhere(bad.to_numpy())[0]
            column = numeric.columns[col]
            raise ParseError(f'non-numeric or missing value in column {column!r}',
                             row=int(row) + 2, column=column,
                             value=str(frame[column].iloc[row]))

        n = len(frame)
        control_block = np.hstack([np.ones((n, 1)),
                                   numeric[controls].to_numpy(dtype=float)])
        return cls(
            numeric[outcome].to_numpy(dtype=float),
            control_block,
            numeric[list(endogenous)].to_numpy(dtype=float),
            numeric[list(instruments)].to_numpy(dtype=float),
            names={'outcome': outcome,
                   'controls': [INTERCEPT, *controls],
                   'endogenous': list(endogenous),
                   'instruments': list(instruments)},
        )
