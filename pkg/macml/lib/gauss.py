#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Gaussian special functions: univariate and bivariate normal CDFs, the Solow-Joe
approximation of the multivariate normal CDF, a Monte Carlo oracle and chi-square
tail probabilities.
"""

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .errors import NotPositiveDefiniteException, SingularProjectionException

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
PROJECTION_JITTER = 1e-12

# 10 point Gauss-Legendre rule on (-1, 0); the mirror nodes are used as well
_GL_X = np.array(
    [
        -0.9931285991850949,
        -0.9639719272779138,
        -0.9122344282513259,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.6360536807265150,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ]
)
_GL_W = np.array(
    [
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ]
)


class PermutationMode(enum.Enum):
    FIXED_RANDOM = 'fixed_random'
    ALL = 'all'
    GIVEN = 'given'


@dataclass(frozen=True)
class SJConfig:
    """
    How the Solow-Joe approximation orders the coordinates it conditions on.

    :param n_permutations: number of random orderings averaged in FIXED_RANDOM mode
    :param mode: a PermutationMode
    :param clamp_epsilon: conditional factors are clamped to [eps, 1 - eps]
    :param orderings: explicit orderings for GIVEN mode
    """

    n_permutations: int = 1
    mode: PermutationMode = PermutationMode.FIXED_RANDOM
    clamp_epsilon: float = 1e-10
    orderings: tuple = field(default=None)

    def __post_init__(self):
        if not isinstance(self.mode, PermutationMode):
            object.__setattr__(self, 'mode', PermutationMode(self.mode))
        if self.n_permutations < 1:
            raise ValueError('n_permutations must be at least 1')
        if not 0 < self.clamp_epsilon < 0.5:
            raise ValueError('clamp_epsilon must lie in (0, 0.5)')
        if self.mode is PermutationMode.GIVEN:
            if not self.orderings:
                raise ValueError('GIVEN permutation mode needs explicit orderings')
            object.__setattr__(
                self,
                'orderings',
                tuple(tuple(int(i) for i in o) for o in self.orderings),
            )

    def orderings_for(self, dim, rng=None):
        """
        The coordinate orderings to average over for one dim-dimensional probability.

        :param dim: dimension of the probability
        :param rng: a numpy Generator (FIXED_RANDOM mode only)
        :return: int array of shape (n_orderings, dim)
        """
        if self.mode is PermutationMode.ALL:
            if dim > 7:
                log.warning(f'Averaging all {dim}! orderings; this will be slow')
            return np.array(list(itertools.permutations(range(dim))), dtype=np.intp)
        if self.mode is PermutationMode.GIVEN:
            orders = np.array(self.orderings, dtype=np.intp)
            if orders.shape[1] != dim or any(
                sorted(order) != list(range(dim)) for order in orders.tolist()
            ):
                raise ValueError(f'Given orderings are not permutations of {dim} items')
            return orders
        rng = np.random.default_rng(rng)
        return np.array(
            [rng.permutation(dim) for _ in range(self.n_permutations)], dtype=np.intp
        )


@dataclass(frozen=True)
class MixtureSpec:
    """
    Weights of a weighted sum of independent squared standard normals.
    """

    lambdas: tuple
    draws: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'lambdas', tuple(float(v) for v in self.lambdas))
        if not self.lambdas or min(self.lambdas) <= 0:
            raise ValueError('Mixture weights must all be positive')
        if self.draws < 1:
            raise ValueError('draws must be at least 1')


def std_normal_cdf(x):
    """
    Standard normal CDF; accepts scalars or arrays.
    """
    return ndtr(x)


def bvn_cdf(b1, b2, rho):
    """
    Bivariate standard normal CDF P(X1 <= b1, X2 <= b2) with correlation rho.

    Vectorised over broadcastable inputs. Uses Genz's (2004) method: Drezner-Wesolowsky
    integration of Plackett's identity for |rho| < 0.925 and an asymptotic expansion
    otherwise, both with a 20 point Gauss-Legendre rule.

    :param b1: upper limit(s) of the first coordinate
    :param b2: upper limit(s) of the second coordinate
    :param rho: correlation(s), clipped to [-1, 1]
    :return: float or array of probabilities
    """
    b1, b2, rho = np.broadcast_arrays(
        np.asarray(b1, dtype=float),
        np.asarray(b2, dtype=float),
        np.asarray(rho, dtype=float),
    )
    rho = np.clip(rho, -1.0, 1.0)
    out = np.zeros(b1.shape)

    lower = (b1 == -np.inf) | (b2 == -np.inf)
    upper1 = (b1 == np.inf) & ~lower
    upper2 = (b2 == np.inf) & ~lower & ~upper1
    out[upper1] = ndtr(b2[upper1])
    out[upper2] = ndtr(b1[upper2])

    finite = ~(lower | upper1 | upper2)
    moderate = finite & (np.abs(rho) < 0.925)
    strong = finite & ~moderate
    if moderate.any():
        out[moderate] = _bvn_moderate(-b1[moderate], -b2[moderate], rho[moderate])
    if strong.any():
        out[strong] = _bvn_strong(-b1[strong], -b2[strong], rho[strong])

    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _bvn_moderate(h, k, r):
    hk = (h * k)[:, None]
    hs = ((h * h + k * k) / 2)[:, None]
    asr = np.arcsin(r)
    sn_lo = np.sin(asr[:, None] * (_GL_X + 1) / 2)
    sn_hi = np.sin(asr[:, None] * (1 - _GL_X) / 2)
    terms = _GL_W * (
        np.exp((sn_lo * hk - hs) / (1 - sn_lo**2))
        + np.exp((sn_hi * hk - hs) / (1 - sn_hi**2))
    )
    return terms.sum(axis=-1) * asr / (2 * TWO_PI) + ndtr(-h) * ndtr(-k)


def _bvn_strong(h, k, r):
    k = np.where(r < 0, -k, k)
    hk = h * k
    bvn = np.zeros(h.shape)

    inner = np.abs(r) < 1
    if inner.any():
        hh, kk, hki, rr = h[inner], k[inner], hk[inner], r[inner]
        a_s = (1 - rr) * (1 + rr)
        a = np.sqrt(a_s)
        bs = (hh - kk) ** 2
        c = (4 - hki) / 8
        d = (12 - hki) / 16
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            value = (
                a
                * np.exp(-(bs / a_s + hki) / 2)
                * (1 - c * (bs - a_s) * (1 - d * bs / 5) / 3 + c * d * a_s * a_s / 5)
            )
            b = np.sqrt(bs)
            tail = (
                np.exp(-hki / 2)
                * np.sqrt(TWO_PI)
                * ndtr(-b / a)
                * b
                * (1 - c * bs * (1 - d * bs / 5) / 3)
            )
            value = value - np.where(hki > -160, tail, 0.0)

            a = (a / 2)[:, None]
            bs, hki, c, d = bs[:, None], hki[:, None], c[:, None], d[:, None]
            xs = (a * (_GL_X + 1)) ** 2
            rs = np.sqrt(1 - xs)
            first = (
                a
                * _GL_W
                * (
                    np.exp(-bs / (2 * xs) - hki / (1 + rs)) / rs
                    - np.exp(-(bs / xs + hki) / 2) * (1 + c * xs * (1 + d * xs))
                )
            )
            xs = a_s[:, None] * (1 - _GL_X) ** 2 / 4
            rs = np.sqrt(1 - xs)
            second = (
                a
                * _GL_W
                * np.exp(-(bs / xs + hki) / 2)
                * (
                    np.exp(-hki * (1 - rs) / (2 * (1 + rs))) / rs
                    - (1 + c * xs * (1 + d * xs))
                )
            )
        value = value + first.sum(axis=-1) + second.sum(axis=-1)
        bvn[inner] = -value / TWO_PI

    bvn = np.where(r > 0, bvn + ndtr(-np.maximum(h, k)), bvn)
    bvn = np.where(r < 0, -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k)), bvn)
    return bvn


def _solve_projection(cov, rhs):
    """
    Solve the batched indicator-covariance systems Q x = rhs by Cholesky, jittering the
    diagonal of any system that is not numerically positive definite.
    """
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.empty_like(cov)
        eye = np.eye(cov.shape[-1])
        for i in range(cov.shape[0]):
            try:
                chol[i] = np.linalg.cholesky(cov[i])
            except np.linalg.LinAlgError:
                try:
                    chol[i] = np.linalg.cholesky(cov[i] + PROJECTION_JITTER * eye)
                except np.linalg.LinAlgError as e:
                    raise SingularProjectionException(
                        'Indicator covariance matrix is singular even after jitter'
                    ) from e
    lower = np.linalg.solve(chol, rhs[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), lower)[..., 0]


def _sj_ordered(b, R, eps):
    """
    Solow-Joe approximation for coordinates already in conditioning order.

    :param b: (B, m) upper limits
    :param R: (B, m, m) correlation matrices
    :param eps: clamp for the conditional factors
    :return: (B,) probabilities
    """
    n_batch, dim = b.shape
    phi = ndtr(b)
    if dim == 1:
        return phi[:, 0]

    iu, ju = np.triu_indices(dim, 1)
    phi2 = bvn_cdf(b[:, iu], b[:, ju], R[:, iu, ju])
    # triu ordering puts the (0, 1) pair first
    prob = phi2[:, 0]
    if dim == 2:
        return prob

    cov = np.empty((n_batch, dim, dim))
    cov[:, iu, ju] = phi2 - phi[:, iu] * phi[:, ju]
    cov[:, ju, iu] = cov[:, iu, ju]
    diag = np.arange(dim)
    cov[:, diag, diag] = phi * (1 - phi)

    for k in range(2, dim):
        x = _solve_projection(cov[:, :k, :k], 1 - phi[:, :k])
        p_hat = phi[:, k] + np.einsum('bi,bi->b', cov[:, :k, k], x)
        prob = prob * np.clip(p_hat, eps, 1 - eps)
    return prob


def sj_mvncdf_batch(b, R, orderings, clamp_epsilon=1e-10):
    """
    Solow-Joe approximation for a batch of orthant probabilities, averaged over
    orderings.

    :param b: (B, m) upper limits
    :param R: (B, m, m) correlation matrices
    :param orderings: (n_orderings, m) shared orderings or (B, n_orderings, m) per-entry
        orderings
    :param clamp_epsilon: clamp for the conditional factors
    :return: (B,) probabilities
    """
    b = np.asarray(b, dtype=float)
    R = np.asarray(R, dtype=float)
    n_batch, dim = b.shape
    orderings = np.asarray(orderings, dtype=np.intp)
    if orderings.ndim == 2:
        orderings = np.broadcast_to(orderings, (n_batch, *orderings.shape))
    n_orderings = orderings.shape[1]

    rows = np.arange(n_batch)[:, None, None]
    b_ordered = np.take_along_axis(b[:, None, :], orderings, axis=-1)
    R_ordered = R[rows[..., None], orderings[..., :, None], orderings[..., None, :]]
    probs = _sj_ordered(
        b_ordered.reshape(-1, dim), R_ordered.reshape(-1, dim, dim), clamp_epsilon
    )
    return probs.reshape(n_batch, n_orderings).mean(axis=1)


def sj_mvncdf(b, R, cfg=None, rng=None):
    """
    Solow-Joe approximation of P(X <= b) for X ~ N(0, R).

    Each coordinate is conditioned on all previous ones through the linear projection of
    its indicator on the earlier indicators; the result is averaged over the orderings
    the config asks for.

    :param b: upper limits, length m >= 1
    :param R: m x m correlation matrix
    :param cfg: SJConfig (defaults to one random ordering)
    :param rng: seed or numpy Generator used for FIXED_RANDOM orderings
    :return: probability in (0, 1]
    """
    cfg = cfg or SJConfig()
    b = np.atleast_1d(np.asarray(b, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (b.size, b.size):
        raise ValueError(f'Correlation matrix shape {R.shape} does not match {b.size}')
    orderings = cfg.orderings_for(b.size, rng)
    return float(sj_mvncdf_batch(b[None], R[None], orderings, cfg.clamp_epsilon)[0])


def mvncdf_oracle(b, R, n_draws=1_000_000, seed=0):
    """
    Monte Carlo estimate of P(X <= b) for X ~ N(0, R), with antithetic pairs.

    :param b: upper limits
    :param R: positive semidefinite covariance matrix
    :param n_draws: total number of draws (split into antithetic pairs)
    :param seed: RNG seed
    :return: tuple of (estimate, Monte Carlo standard error)
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    eigvals, eigvecs = np.linalg.eigh((R + R.T) / 2)
    if eigvals.min() < -1e-10:
        raise NotPositiveDefiniteException(
            'Covariance is not positive semidefinite '
            f'(min eigenvalue {eigvals.min():.3g})'
        )
    factor = eigvecs * np.sqrt(np.clip(eigvals, 0, None))

    rng = np.random.default_rng(seed)
    n_pairs = max(n_draws // 2, 2)
    pair_means = np.empty(n_pairs)
    chunk = 100_000
    for start in range(0, n_pairs, chunk):
        stop = min(start + chunk, n_pairs)
        draws = rng.standard_normal((stop - start, b.size)) @ factor.T
        plus = np.all(draws <= b, axis=1)
        minus = np.all(-draws <= b, axis=1)
        pair_means[start:stop] = (plus.astype(float) + minus) / 2
    return float(pair_means.mean()), float(pair_means.std(ddof=1) / np.sqrt(n_pairs))


def chisq_sf(x, p):
    """
    Upper tail of the chi-square distribution; p may be fractional.
    """
    return stats.chi2.sf(x, p)


def chisq_quantile(q, p):
    """
    The q-quantile of the chi-square distribution with p degrees of freedom.
    """
    return stats.chi2.ppf(q, p)


def weighted_chisq_sf(x, spec):
    """
    Monte Carlo upper tail of sum_j lambda_j K_j^2 with K_j iid standard normal.

    :param x: the observed statistic
    :param spec: MixtureSpec
    :return: probability
    """
    rng = np.random.default_rng(spec.seed)
    lambdas = np.asarray(spec.lambdas)
    draws = rng.standard_normal((spec.draws, lambdas.size)) ** 2 @ lambdas
    return float(np.mean(draws >= x))
