"""Marginal log-densities for the two-component clone trajectory model.

A clone's template-read counts across its observed follow-up times are
Poisson draws around a latent per-read proportion scaled by each sample's
total reads.  The proportion is Gamma(alpha, beta) distributed and is
marginalized out analytically: once per clone for the static component
(a negative multinomial over the whole series) and once per time point
for the dynamic component (a product of negative binomials).  All
arithmetic is in natural-log space; counts can reach 1e4 and offsets 1e7
without overflow or underflow.

Every operation here is a pure function of its arguments and safe to map
over clones in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import digamma, expit, gammaln

from .errors import ValidationError


@dataclass(frozen=True)
class CloneSeries:
    """One clone's observed counts with the matching per-sample read totals.

    counts[k] is the clone's template reads at its k-th observed time and
    offsets[k] the total template reads of that person-time.  times[k]
    is the integer follow-up index of the observation; it defaults to
    0..T-1 and is used only for trend classification, never by the
    likelihood.
    """

    clone_id: str
    person_id: str
    counts: np.ndarray
    offsets: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise ValidationError("counts must be a non-empty 1-d sequence")
        if offsets.shape != counts.shape:
            raise ValidationError(
                f"counts and offsets lengths differ: {counts.size} vs {offsets.size}"
            )
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")
        if np.any(offsets <= 0):
            raise ValidationError("offsets must be positive")
        if np.any(offsets < counts):
            raise ValidationError("each offset must be >= the matching count")
        if self.times is None:
            times = np.arange(counts.size, dtype=np.int64)
        else:
            times = np.asarray(self.times, dtype=np.int64)
            if times.shape != counts.shape:
                raise ValidationError("times must align with counts")
            if np.any(times < 0) or np.any(np.diff(times) <= 0):
                raise ValidationError("times must be non-negative and strictly increasing")
        for name, arr in (("counts", counts), ("offsets", offsets), ("times", times)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def key(self) -> tuple[str, str]:
        return (self.person_id, self.clone_id)

    @property
    def n_times(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class Hyperparams:
    """Gamma prior (shape alpha, rate beta on the proportion scale) and
    mixing weight pi = P(clone is dynamic)."""

    alpha: float
    beta: float
    pi: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be positive and finite, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValidationError(f"beta must be positive and finite, got {self.beta}")
        if not (math.isfinite(self.pi) and 0.0 < self.pi < 1.0):
            raise ValidationError(f"pi must lie strictly inside (0, 1), got {self.pi}")


@dataclass(frozen=True)
class PosteriorGamma:
    """Conjugate posterior over a clone's shared proportion."""

    alpha_post: float
    beta_post: float


def _log_per_value(values: np.ndarray) -> np.ndarray:
    # libm log once per distinct value; keeps results identical no matter
    # how many series are packed together (array-level np.log may take a
    # SIMD path whose tail handling differs between batch sizes)
    return np.array([math.log(v) for v in values], dtype=np.float64)


class SeriesBatch:
    """Column-packed view of many clone series for vectorized evaluation.

    Transcendentals are evaluated once per distinct input value and
    gathered, and per-series reductions run left to right, so each
    series' log-densities come out bit-identical whether it is evaluated
    alone or inside a larger batch.
    """

    def __init__(self, series: Sequence[CloneSeries]):
        series = list(series)
        if not series:
            raise ValidationError("need at least one clone series")
        self.series = series
        self.keys = [s.key for s in series]
        self.n = len(series)

        t = np.array([s.n_times for s in series], dtype=np.int64)
        self.t = t.astype(np.float64)
        self._starts = np.zeros(self.n, dtype=np.int64)
        np.cumsum(t[:-1], out=self._starts[1:])

        flat_c = np.concatenate([s.counts for s in series]).astype(np.float64)
        flat_o = np.concatenate([s.offsets for s in series]).astype(np.float64)
        self._flat_c = flat_c

        self.csum = np.add.reduceat(flat_c, self._starts)
        self.osum = np.add.reduceat(flat_o, self._starts)
        self._sum_lgamma_c1 = np.add.reduceat(gammaln(flat_c + 1.0), self._starts)

        # distinct-value tables for the (alpha, beta)-dependent terms
        self._uniq_c, self._inv_c = np.unique(flat_c, return_inverse=True)
        self._uniq_o, self._inv_o = np.unique(flat_o, return_inverse=True)
        self._uniq_csum, self._inv_csum = np.unique(self.csum, return_inverse=True)
        self._uniq_osum, self._inv_osum = np.unique(self.osum, return_inverse=True)

        # sum_k c_k * log(o_k), with 0 * log(o) pinned to zero for zero counts
        log_o = _log_per_value(self._uniq_o)[self._inv_o]
        self._sum_c_log_o = np.add.reduceat(
            np.where(flat_c > 0.0, flat_c * log_o, 0.0), self._starts
        )

    def _segment_sum(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values, self._starts)

    def log_pmfs(self, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-series static and dynamic marginal log-densities at (alpha, beta)."""
        if not (alpha > 0 and beta > 0):
            raise ValidationError(f"alpha and beta must be positive, got {alpha}, {beta}")
        log_beta = math.log(beta)
        gl_alpha = float(gammaln(alpha))

        log_b_osum = _log_per_value(self._uniq_osum + beta)[self._inv_osum]
        ls = (
            gammaln(self._uniq_csum + alpha)[self._inv_csum]
            - gl_alpha
            - self._sum_lgamma_c1
            + alpha * (log_beta - log_b_osum)
            + self._sum_c_log_o
            - self.csum * log_b_osum
        )

        log_b_o = _log_per_value(self._uniq_o + beta)[self._inv_o]
        ld = (
            self._segment_sum(gammaln(self._uniq_c + alpha)[self._inv_c])
            - self.t * gl_alpha
            - self._sum_lgamma_c1
            + alpha * (self.t * log_beta - self._segment_sum(log_b_o))
            + self._sum_c_log_o
            - self._segment_sum(self._flat_c * log_b_o)
        )
        return ls, ld

    def log_pmf_grads(
        self, alpha: float, beta: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-series d/d alpha and d/d beta of both marginal log-densities.

        Returns (dls_da, dls_db, dld_da, dld_db).
        """
        if not (alpha > 0 and beta > 0):
            raise ValidationError(f"alpha and beta must be positive, got {alpha}, {beta}")
        log_beta = math.log(beta)
        dg_alpha = float(digamma(alpha))
        a_over_b = alpha / beta

        b_osum = self._uniq_osum + beta
        log_b_osum = _log_per_value(b_osum)[self._inv_osum]
        dls_da = digamma(self._uniq_csum + alpha)[self._inv_csum] - dg_alpha + log_beta - log_b_osum
        dls_db = a_over_b - (self.csum + alpha) / b_osum[self._inv_osum]

        b_o = self._uniq_o + beta
        log_b_o = _log_per_value(b_o)[self._inv_o]
        dld_da = (
            self._segment_sum(digamma(self._uniq_c + alpha)[self._inv_c])
            - self.t * dg_alpha
            + self.t * log_beta
            - self._segment_sum(log_b_o)
        )
        dld_db = self.t * a_over_b - self._segment_sum((self._flat_c + alpha) / b_o[self._inv_o])
        return dls_da, dls_db, dld_da, dld_db

    def responsibilities(self, hp: Hyperparams) -> np.ndarray:
        ls, ld = self.log_pmfs(hp.alpha, hp.beta)
        return stable_responsibility(ls, ld, hp.pi)


def stable_responsibility(ls, ld, pi: float):
    """P(dynamic) from the two log-densities via a logistic of the log-odds.

    Exactly equal component densities carry no information, so the
    posterior is pinned to the prior there (also makes single-timepoint
    series return pi exactly).
    """
    delta = np.asarray(ld) - np.asarray(ls)
    log_odds_prior = math.log(pi) - math.log1p(-pi)
    return np.where(delta == 0.0, pi, expit(log_odds_prior + delta))


def _single(series: CloneSeries) -> SeriesBatch:
    return SeriesBatch([series])


def static_log_pmf(series: CloneSeries, hp: Hyperparams) -> float:
    """Log marginal density of the series under a single shared proportion.

    This is the negative multinomial form: with S_C = sum of counts and
    S_O = sum of offsets,

        lgamma(S_C + alpha) - lgamma(alpha) - sum_k lgamma(c_k + 1)
        + alpha * (log beta - log(beta + S_O))
        + sum_k c_k * log(o_k) - S_C * log(beta + S_O)
    """
    ls, _ = _single(series).log_pmfs(hp.alpha, hp.beta)
    return float(ls[0])


def dynamic_log_pmf(series: CloneSeries, hp: Hyperparams) -> float:
    """Log marginal density under an independent proportion per time point
    (a sum of negative binomial log-pmfs, one per observation)."""
    _, ld = _single(series).log_pmfs(hp.alpha, hp.beta)
    return float(ld[0])


def log_component_quotient(series: CloneSeries, hp: Hyperparams) -> float:
    """static_log_pmf minus dynamic_log_pmf; higher favors static behavior.

    Computed from the two marginal evaluations directly; there is no
    separate algebraic path.
    """
    ls, ld = _single(series).log_pmfs(hp.alpha, hp.beta)
    return float(ls[0] - ld[0])


def posterior_gamma_params(series: CloneSeries, hp: Hyperparams) -> PosteriorGamma:
    """Conjugate update of the shared-proportion Gamma: shape + sum(counts),
    rate + sum(offsets)."""
    return PosteriorGamma(
        alpha_post=float(np.sum(series.counts)) + hp.alpha,
        beta_post=float(np.sum(series.offsets)) + hp.beta,
    )


def responsibility(series: CloneSeries, hp: Hyperparams) -> float:
    """Posterior probability that the clone is dynamic given the data.

    Evaluated as a numerically stable logistic of the prior log-odds plus
    the dynamic-minus-static log-density difference; never by
    exponentiating the two densities separately.
    """
    return float(_single(series).responsibilities(hp)[0])
