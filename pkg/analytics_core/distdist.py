"""
Evacuation-distance distributions, P(d) = alpha * d**-gamma.

The exponent comes from the maximum likelihood of a power law truncated to
[d_min, d_max]; a least-squares slope on the log-binned density is kept as
a cross check.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from evacanalytics.exceptions import (
    ConfigError,
    EmptyDistributionError,
    FitError,
    InsufficientSamplesError,
    NothingToCompareError,
)

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 100
DEFAULT_D_RANGE = (200.0, 1_000_000.0)


@dataclass(frozen=True)
class LogBinnedPdf:
    bin_edges: np.ndarray
    densities: np.ndarray
    n_samples: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.bin_edges[:-1] * self.bin_edges[1:])


@dataclass(frozen=True)
class PowerLawFit:
    gamma: float
    alpha: float
    d_min: float
    d_max: float
    r2_loglog: float
    loglog_slope: float
    n: int

    @property
    def fit_range(self) -> tuple[float, float]:
        return self.d_min, self.d_max


@dataclass(frozen=True)
class CollapseReport:
    max_divergence: float
    pair: tuple[float, float]
    gamma_spread: Optional[float]


def log_bin_edges(d_range: tuple[float, float], bins_per_decade: int) -> np.ndarray:
    lo, hi = d_range
    if not 0 < lo < hi:
        raise ConfigError(f'need 0 < d_min < d_max, got {d_range}', field='dist_min_m')
    if bins_per_decade < 1:
        raise ConfigError(f'must be >= 1, got {bins_per_decade}', field='bins_per_decade')
    n_bins = max(1, int(round(math.log10(hi / lo) * bins_per_decade)))
    return np.geomspace(lo, hi, n_bins + 1)


def distance_pdf(
    distances: Sequence[float],
    bins_per_decade: int = 5,
    d_range: tuple[float, float] = DEFAULT_D_RANGE,
) -> LogBinnedPdf:
    """Density per metre over geometric bins; samples outside ``d_range`` are dropped."""
    edges = log_bin_edges(d_range, bins_per_decade)
    d = np.asarray(distances, dtype=float)
    d = d[(d >= edges[0]) & (d <= edges[-1])]
    if d.size == 0:
        raise EmptyDistributionError(f'no distances within [{edges[0]:g}, {edges[-1]:g}] m')
    counts, _ = np.histogram(d, bins=edges)
    return LogBinnedPdf(edges, counts / (d.size * np.diff(edges)), int(d.size))


def _mean_log_truncated(lam: float, span: float) -> float:
    """E[ln(d/d_min)] under d**-(1+lam) on [d_min, d_min * e**span]."""
    x = lam * span
    if abs(x) < 1e-8:
        return span / 2.0 - lam * span ** 2 / 12.0
    if x > 700:
        return 1.0 / lam
    return 1.0 / lam - span / math.expm1(x)


def _log_norm(gamma: float, span: float) -> float:
    """ln of the integral of u**-gamma over [1, e**span]."""
    lam = gamma - 1.0
    x = lam * span
    if abs(x) < 1e-12:
        return math.log(span)
    if x > 0:
        return -math.log(lam) + math.log(-math.expm1(-x))
    return -math.log(-lam) + math.log(math.expm1(-x))


def fit_power_law(
    distances: Sequence[float],
    d_min: float = DEFAULT_D_RANGE[0],
    d_max: float = DEFAULT_D_RANGE[1],
    bins_per_decade: int = 5,
) -> PowerLawFit:
    if not 0 < d_min < d_max:
        raise ConfigError(f'need 0 < d_min < d_max, got ({d_min}, {d_max})', field='dist_min_m')
    d = np.asarray(distances, dtype=float)
    d = d[(d >= d_min) & (d <= d_max)]
    if d.size < MIN_FIT_SAMPLES:
        raise InsufficientSamplesError(f'{d.size} samples in [{d_min:g}, {d_max:g}] m, need {MIN_FIT_SAMPLES}')

    span = math.log(d_max / d_min)
    target = float(np.mean(np.log(d / d_min)))
    if not 0.0 < target < span:
        raise FitError('distances pile up on a range boundary; exponent undefined')

    def score(lam: float) -> float:
        return _mean_log_truncated(lam, span) - target

    lo, hi = -1.0, 1.0
    for _ in range(64):
        if score(lo) >= 0:
            break
        lo *= 2.0
    for _ in range(64):
        if score(hi) <= 0:
            break
        hi *= 2.0
    lam = optimize.brentq(score, lo, hi, xtol=1e-8, rtol=1e-12, maxiter=500)
    gamma = 1.0 + lam
    if gamma <= 0:
        raise FitError(f'distance distribution does not decay (gamma={gamma:.3f})')
    alpha = math.exp(-(1.0 - gamma) * math.log(d_min) - _log_norm(gamma, span))

    pdf = distance_pdf(d, bins_per_decade, (d_min, d_max))
    keep = pdf.densities > 0
    if keep.sum() >= 2:
        reg = stats.linregress(np.log10(pdf.centers[keep]), np.log10(pdf.densities[keep]))
        slope, r2 = float(reg.slope), float(reg.rvalue ** 2)
    else:
        slope, r2 = float('nan'), float('nan')

    logger.info('Power law on [%g, %g] m: gamma=%.4f (log-log slope %.4f, r2=%.3f, n=%d)', d_min, d_max, gamma, slope, r2, d.size)
    return PowerLawFit(gamma, alpha, d_min, d_max, r2, slope, int(d.size))


def _shape_on_shared_support(p: LogBinnedPdf, q: LogBinnedPdf) -> float:
    if p.bin_edges.shape != q.bin_edges.shape or not np.allclose(p.bin_edges, q.bin_edges):
        raise ConfigError('distance PDFs use different bin edges', field='bins_per_decade')
    shared = (p.densities > 0) & (q.densities > 0)
    if not shared.any():
        return 2.0
    w = p.widths[shared]
    pm = p.densities[shared] * w
    qm = q.densities[shared] * w
    return float(np.abs(pm / pm.sum() - qm / qm.sum()).sum())


def collapse_check(
    pdfs: Mapping[float, LogBinnedPdf],
    gammas: Optional[Mapping[float, float]] = None,
) -> CollapseReport:
    """
    Largest pairwise L1 distance between the PDFs, each renormalised on the
    bins both populate, plus the spread of per-bin exponents when given.
    """
    if len(pdfs) < 2:
        raise NothingToCompareError(f'need >= 2 intensity bins, got {len(pdfs)}')
    worst, pair = -1.0, (float('nan'), float('nan'))
    for a, b in itertools.combinations(sorted(pdfs), 2):
        div = _shape_on_shared_support(pdfs[a], pdfs[b])
        if div > worst:
            worst, pair = div, (a, b)
    spread = None
    if gammas:
        values = [gammas[k] for k in sorted(gammas)]
        spread = float(max(values) - min(values))
    return CollapseReport(worst, pair, spread)
