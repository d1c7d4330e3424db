#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd

from ..lib.errors import DatasetException
from ..lib.helpers import fingerprint_arrays

log = logging.getLogger(__name__)

ID_COLUMNS = ['individual', 'occasion', 'alternative', 'chosen']


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """
    Choices and covariates for N individuals, each observed on T occasions choosing
    among K alternatives.

    ``choices`` holds 0-based alternative indices; CSV files use 1-based labels.
    ``x_fixed`` has shape (N, T, K, p_beta) and ``x_random`` (N, T, K, p_alpha).
    """

    choices: np.ndarray
    x_fixed: np.ndarray
    x_random: np.ndarray

    def __post_init__(self):
        choices = np.array(self.choices, dtype=np.intp)
        x_fixed = np.array(self.x_fixed, dtype=float)
        x_random = np.array(self.x_random, dtype=float)
        errors = {}
        if choices.ndim != 2:
            errors['choices'] = f'expected an N x T array, got shape {choices.shape}'
        elif choices.shape[1] < 2:
            errors['occasions'] = 'pairwise likelihood needs at least two occasions'
        if x_fixed.ndim != 4 or x_random.ndim != 4:
            errors['covariates'] = 'covariate tensors must be N x T x K x p'
        elif x_fixed.shape[:3] != x_random.shape[:3]:
            errors['covariates'] = (
                f'fixed {x_fixed.shape[:3]} and random {x_random.shape[:3]} covariate '
                f'shapes disagree'
            )
        elif choices.ndim == 2 and x_fixed.shape[:2] != choices.shape:
            errors['choices'] = 'choices do not match the covariate tensors'
        if not errors:
            if x_fixed.shape[2] < 2:
                errors['alternatives'] = 'at least two alternatives are needed'
            elif choices.min() < 0 or choices.max() >= x_fixed.shape[2]:
                errors['choices'] = 'choices must index an alternative'
            if not (np.isfinite(x_fixed).all() and np.isfinite(x_random).all()):
                errors['covariates'] = 'covariates must be finite'
        if errors:
            raise DatasetException(f'Invalid panel dataset: {errors}')
        for name, value in (
            ('choices', choices),
            ('x_fixed', x_fixed),
            ('x_random', x_random),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_individuals(self):
        return self.choices.shape[0]

    @property
    def n_occasions(self):
        return self.choices.shape[1]

    @property
    def n_alternatives(self):
        return self.x_fixed.shape[2]

    @property
    def p_beta(self):
        return self.x_fixed.shape[3]

    @property
    def p_alpha(self):
        return self.x_random.shape[3]

    @cached_property
    def fingerprint(self):
        return fingerprint_arrays(self.choices, self.x_fixed, self.x_random)

    def subset(self, individuals):
        """
        A new dataset holding only the given individuals, in the given order.

        :param individuals: index array
        :return: PanelDataset
        """
        individuals = np.asarray(individuals, dtype=np.intp)
        return PanelDataset(
            self.choices[individuals],
            self.x_fixed[individuals],
            self.x_random[individuals],
        )

    def to_frame(self):
        """
        Long-format frame with one row per (individual, occasion, alternative).

        :return: pandas.DataFrame
        """
        n, t, k = self.choices.shape + (self.n_alternatives,)
        ind, occ, alt = np.meshgrid(
            np.arange(n), np.arange(t), np.arange(k), indexing='ij'
        )
        frame = pd.DataFrame(
            {
                'individual': ind.ravel() + 1,
                'occasion': occ.ravel() + 1,
                'alternative': alt.ravel() + 1,
                'chosen': (alt == self.choices[:, :, None]).ravel().astype(int),
            }
        )
        for j in range(self.p_beta):
            frame[f'x{j + 1}'] = self.x_fixed[..., j].ravel()
        for j in range(self.p_alpha):
            frame[f'z{j + 1}'] = self.x_random[..., j].ravel()
        return frame


def write_dataset(data, path):
    """
    Write a dataset to long-format CSV.
    """
    data.to_frame().to_csv(path, index=False, float_format='%.17g')
    log.debug(f'Wrote {data.n_individuals} individuals to {path}')


def read_dataset(path):
    """
    Read a long-format dataset CSV with header
    ``individual,occasion,alternative,chosen,x1..xp,z1..zq``.

    :param path: CSV path
    :return: PanelDataset
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise DatasetException(f'Could not read dataset {path}: {e}') from e
    return dataset_from_frame(frame)


def dataset_from_frame(frame):
    """
    Build a PanelDataset from a long-format frame.

    :param frame: pandas.DataFrame in the dataset CSV layout
    :return: PanelDataset
    """
    missing = [c for c in ID_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetException(f'Dataset is missing columns: {", ".join(missing)}')
    fixed_cols = _numbered_columns(frame, 'x')
    random_cols = _numbered_columns(frame, 'z')

    keys = ['individual', 'occasion', 'alternative']
    duplicated = frame.duplicated(keys, keep=False)
    if duplicated.any():
        key = frame.loc[duplicated, keys].iloc[0]
        raise DatasetException(
            f'Duplicate row for individual {key["individual"]}, occasion '
            f'{key["occasion"]}, alternative {key["alternative"]}'
        )
    alternatives = set(frame['alternative'].unique())
    sizes = frame.groupby(['individual', 'occasion']).size()
    short = sizes[sizes != len(alternatives)]
    if not short.empty:
        individual, occasion = short.index[0]
        rows = (frame['individual'] == individual) & (frame['occasion'] == occasion)
        absent = sorted(alternatives - set(frame.loc[rows, 'alternative']))
        raise DatasetException(
            f'Individual {individual}, occasion {occasion} does not offer the full '
            f'alternative set; missing {", ".join(map(str, absent))}'
        )
    frame = frame.sort_values(keys)
    n = frame['individual'].nunique()
    t = frame['occasion'].nunique()
    k = frame['alternative'].nunique()
    if len(frame) != n * t * k:
        raise DatasetException(
            f'Dataset is not a balanced panel: {len(frame)} rows for '
            f'N={n}, T={t}, K={k}'
        )
    chosen = frame['chosen'].to_numpy().reshape(n, t, k)
    if not np.all(chosen.sum(axis=2) == 1):
        raise DatasetException(
            'Each (individual, occasion) needs exactly one chosen row'
        )

    def _tensor(columns):
        if not columns:
            return np.zeros((n, t, k, 0))
        return frame[columns].to_numpy(dtype=float).reshape(n, t, k, len(columns))

    return PanelDataset(
        chosen.argmax(axis=2), _tensor(fixed_cols), _tensor(random_cols)
    )


def _numbered_columns(frame, prefix):
    columns = [
        c for c in frame.columns if c.startswith(prefix) and c[len(prefix):].isdigit()
    ]
    return sorted(columns, key=lambda c: int(c[len(prefix):]))
