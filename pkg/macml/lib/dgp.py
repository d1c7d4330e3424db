#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Data-generating processes of the simulation study.

VARSEL adds a fixed effect to four uncorrelated random coefficients; COVSTRUCT makes all
five coefficients random with a Toeplitz-like covariance over the first four. GENERIC is
a diagonal-covariance family with any number of alternatives and covariates.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from ..model.data import PanelDataset
from ..model.spec import ModelSpec, apply_restriction, omega_pattern, pack
from .errors import ConfigException

log = logging.getLogger(__name__)

BASE_BETA = (1.5, -1.0, 2.0, 1.0)
VARSEL_OMEGA_DIAG = (2.0, 1.5, 1.0, 1.2)
COVSTRUCT_BETA = 2.0


class DgpFamily(enum.Enum):
    VARSEL = 'varsel'
    COVSTRUCT = 'covstruct'
    GENERIC = 'generic'


@dataclass(frozen=True)
class DgpConfig:
    """
    :param family: DgpFamily
    :param n_individuals: N
    :param n_occasions: T
    :param n_alternatives: K
    :param beta: the fifth mean coefficient (VARSEL, GENERIC)
    :param alpha: the Toeplitz parameter of the random-coefficient covariance
        (COVSTRUCT)
    :param sigma_diag: error variance
    :param seed: simulation seed
    :param n_covariates: number of covariates (GENERIC)
    """

    family: DgpFamily = DgpFamily.VARSEL
    n_individuals: int = 300
    n_occasions: int = 5
    n_alternatives: int = 5
    beta: float = 0.0
    alpha: float = 0.0
    sigma_diag: float = 0.5
    seed: int = 0
    n_covariates: int = 5

    def __post_init__(self):
        object.__setattr__(self, 'family', DgpFamily(self.family))
        errors = {}
        if self.n_individuals < 1:
            errors['n_individuals'] = 'need at least one individual'
        if self.n_occasions < 2:
            errors['n_occasions'] = 'need at least two occasions'
        if self.n_alternatives < 2:
            errors['n_alternatives'] = 'need at least two alternatives'
        if not self.sigma_diag > 0:
            errors['sigma_diag'] = 'error variance must be positive'
        if self.family is DgpFamily.COVSTRUCT and not abs(self.alpha) < 1:
            errors['alpha'] = 'the Toeplitz covariance needs |alpha| < 1'
        if self.family is DgpFamily.GENERIC and self.n_covariates < 1:
            errors['n_covariates'] = 'need at least one covariate'
        if errors:
            raise ConfigException(f'Invalid data-generating process: {errors}', errors)


def toeplitz_omega(alpha):
    """
    alpha^|i-j| over the first four coefficients, the fifth uncorrelated with unit
    variance.
    """
    omega = np.eye(5)
    omega[:4, :4] = toeplitz(float(alpha) ** np.arange(4))
    return omega


def _n_covariates(cfg):
    return cfg.n_covariates if cfg.family is DgpFamily.GENERIC else 5


def true_beta(cfg):
    if cfg.family is DgpFamily.COVSTRUCT:
        return np.array([*BASE_BETA, COVSTRUCT_BETA])
    if cfg.family is DgpFamily.VARSEL:
        return np.array([*BASE_BETA, cfg.beta])
    beta = np.resize(np.array(BASE_BETA), _n_covariates(cfg))
    beta[-1] = cfg.beta
    return beta


def true_omega(cfg):
    if cfg.family is DgpFamily.COVSTRUCT:
        return toeplitz_omega(cfg.alpha)
    if cfg.family is DgpFamily.VARSEL:
        return np.diag(VARSEL_OMEGA_DIAG)
    return np.diag(np.resize(np.array(VARSEL_OMEGA_DIAG), _n_covariates(cfg)))


def random_columns(cfg):
    """
    Indices of the covariates that carry a random coefficient.
    """
    if cfg.family is DgpFamily.VARSEL:
        return np.arange(4)
    return np.arange(_n_covariates(cfg))


def wide_spec(cfg):
    """
    The unrestricted model of a family, with its tested block declared as gamma.

    VARSEL tests the fifth fixed coefficient, COVSTRUCT the off-diagonal entries of L.
    GENERIC has no tested block.
    """
    p_beta = _n_covariates(cfg)
    p_alpha = random_columns(cfg).size
    kind = 'full' if cfg.family is DgpFamily.COVSTRUCT else 'diagonal'
    spec = ModelSpec(p_beta, p_alpha, omega_pattern(p_alpha, kind), cfg.sigma_diag)
    if cfg.family is DgpFamily.COVSTRUCT:
        gamma = tuple(
            spec.index_of(f'L_{i + 1}{j + 1}') for i, j in spec.free_positions if i != j
        )
    elif cfg.family is DgpFamily.VARSEL:
        gamma = (p_beta - 1,)
    else:
        gamma = ()
    return ModelSpec(
        p_beta,
        p_alpha,
        spec.omega_pattern,
        cfg.sigma_diag,
        gamma_indices=gamma,
        gamma0=(0.0,) * len(gamma),
        name='wide',
    )


def narrow_spec(cfg):
    """
    The restricted model: the wide parameterisation with every gamma coordinate pinned.
    """
    return wide_spec(cfg).with_pinned('all', name='narrow')


def true_theta(cfg, spec=None):
    """
    The data-generating parameter in the coordinates of ``spec`` (default the wide
    model). For a restricted spec the pinned coordinates are set to gamma0.

    :param cfg: DgpConfig
    :param spec: ModelSpec sharing the wide parameterisation
    :return: Theta
    """
    spec = spec or wide_spec(cfg)
    L = np.linalg.cholesky(true_omega(cfg))
    true_l = np.where(np.isnan(spec.omega_pattern), L, spec.fixed_cholesky())
    theta = pack(true_beta(cfg), true_l, spec)
    if spec.restriction is not None:
        theta = apply_restriction(theta, *spec.restriction)
    return theta


def simulate_dataset(cfg):
    """
    Draw a panel: covariates iid N(0, 1), b_n ~ N(b, Omega), errors iid
    N(0, sigma_diag), each choice the alternative with the highest utility.

    :param cfg: DgpConfig
    :return: PanelDataset
    """
    rng = np.random.default_rng(cfg.seed)
    n, t, k = cfg.n_individuals, cfg.n_occasions, cfg.n_alternatives
    columns = random_columns(cfg)
    L = np.linalg.cholesky(true_omega(cfg))

    x = rng.standard_normal((n, t, k, _n_covariates(cfg)))
    deviations = rng.standard_normal((n, columns.size)) @ L.T
    coefficients = np.broadcast_to(true_beta(cfg), (n, x.shape[-1])).copy()
    coefficients[:, columns] += deviations
    errors = np.sqrt(cfg.sigma_diag) * rng.standard_normal((n, t, k))
    utility = np.einsum('ntkp,np->ntk', x, coefficients) + errors
    choices = np.argmax(utility, axis=2)
    log.debug(f'Simulated {cfg.family.value} panel N={n} T={t} K={k} seed={cfg.seed}')
    return PanelDataset(choices, x, x[..., columns])
