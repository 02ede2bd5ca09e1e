"""
Fragility curve of evacuation probability against seismic intensity.

    p(z) = a * Phi((ln z - mu) / sigma)

Parameters are fitted by maximising the per-LGU binomial log-likelihood

    sum_i  M*_i ln p(z_i) + (M_i - M*_i) ln(1 - p(z_i))

with a coarse grid search followed by a bounded Nelder-Mead refinement.
Both steps are deterministic, so a fit is reproducible for fixed input.
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, special

from evacanalytics.exceptions import (
    ConfigError,
    DegenerateDataError,
    EvacAnalyticsError,
    FitError,
    InputError,
    UndefinedCorrelationError,
    UndefinedMapeError,
    UnidentifiableError,
)
from mobility.evac import EvacObservation, aggregate_observations, detect_evacuation, rates_by_intensity, round_si
from mobility.homeloc import HomeEstimate
from mobility.parallel import map_users
from mobility.trajectory import Staypoint

logger = logging.getLogger(__name__)

P_CLIP = 1e-9
LL_TOL = 1e-6

MU_GRID = np.round(np.arange(1.0, 2.5 + 1e-9, 0.05), 10)
SIGMA_GRID = np.geomspace(0.01, 1.0, 30)
A_GRID = np.round(np.arange(0.05, 1.0 + 1e-9, 0.05), 10)

LOO_MIN_EVACUEES = 100

CURVE_Z_MIN = 4.0
CURVE_Z_MAX = 7.0
CURVE_Z_STEP = 0.05


@dataclass(frozen=True)
class FragilityParams:
    mu: float
    sigma: float
    a: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise InputError(f'mu must be finite, got {self.mu}')
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InputError(f'sigma must be > 0, got {self.sigma}')
        if not 0 < self.a <= 1:
            raise InputError(f'a must be in (0, 1], got {self.a}')

    def as_dict(self) -> dict:
        return {'mu': self.mu, 'sigma': self.sigma, 'a': self.a}


KUMAMOTO_PARAMS = FragilityParams(mu=1.73, sigma=0.075, a=0.63)


@dataclass(frozen=True)
class FitReport:
    params: FragilityParams
    log_likelihood: float
    R: float
    MAPE: float
    n_obs: int
    binned: bool = False
    grid_log_likelihood: float = float('-inf')

    def as_dict(self) -> dict:
        return {
            **self.params.as_dict(),
            'log_likelihood': self.log_likelihood,
            'R': self.R,
            'MAPE': self.MAPE,
            'n_obs': self.n_obs,
        }


def frag_eval(z, params: FragilityParams):
    """Evacuation probability at intensity ``z`` (scalar or array, z > 0)."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr <= 0):
        raise InputError(f'intensity must be > 0, got {z}')
    p = params.a * special.ndtr((np.log(z_arr) - params.mu) / params.sigma)
    return float(p) if p.ndim == 0 else p


def _arrays(obs: Sequence[EvacObservation]):
    z = np.array([o.z for o in obs], dtype=float)
    m = np.array([o.M for o in obs], dtype=float)
    m_star = np.array([o.M_star for o in obs], dtype=float)
    return z, m, m_star


def _binomial_ll(p: np.ndarray, m: np.ndarray, m_star: np.ndarray) -> np.ndarray:
    p = np.clip(p, P_CLIP, 1.0 - P_CLIP)
    return (m_star * np.log(p) + (m - m_star) * np.log1p(-p)).sum(axis=-1)


def log_likelihood(params: FragilityParams, obs: Sequence[EvacObservation]) -> float:
    z, m, m_star = _arrays(obs)
    return float(_binomial_ll(frag_eval(z, params), m, m_star))


def grid_log_likelihood(obs: Sequence[EvacObservation]) -> np.ndarray:
    """Log-likelihood over the coarse (mu, sigma, a) grid, shape (len(MU), len(SIGMA), len(A))."""
    z, m, m_star = _arrays(obs)
    u = (np.log(z)[None, None, :] - MU_GRID[:, None, None]) / SIGMA_GRID[None, :, None]
    phi = special.ndtr(u)
    ll = np.empty((MU_GRID.size, SIGMA_GRID.size, A_GRID.size))
    for k, a in enumerate(A_GRID):
        ll[:, :, k] = _binomial_ll(a * phi, m, m_star)
    return ll


def pool_by_intensity(obs: Sequence[EvacObservation]) -> list[EvacObservation]:
    """Collapse LGUs sharing an intensity into one observation."""
    pooled: dict[float, list[int]] = {}
    for o in obs:
        totals = pooled.setdefault(round_si(o.z), [0, 0])
        totals[0] += o.M
        totals[1] += o.M_star
    return [EvacObservation(f'si={z:.1f}', z, m, ms) for z, (m, ms) in sorted(pooled.items())]


def _check_fittable(obs: Sequence[EvacObservation]) -> None:
    if len(obs) < 3 or len({round_si(o.z) for o in obs}) < 2:
        raise UnidentifiableError(
            f'need >= 3 observations over >= 2 intensities, got {len(obs)} '
            f'over {len({round_si(o.z) for o in obs})}'
        )
    if all(o.M_star == 0 for o in obs):
        raise DegenerateDataError('no evacuees in any LGU')
    if all(o.M_star == o.M for o in obs):
        raise DegenerateDataError('every tracked user evacuated in every LGU')


def fit_mle(obs: Sequence[EvacObservation], binned: bool = False) -> FitReport:
    data = [o for o in obs if o.M > 0]
    if binned:
        data = pool_by_intensity(data)
    _check_fittable(data)

    z, m, m_star = _arrays(data)
    total_m = float(m.sum())

    # Coarse grid start
    grid = grid_log_likelihood(data)
    i, j, k = np.unravel_index(int(np.argmax(grid)), grid.shape)
    grid_best = float(grid[i, j, k])
    x0 = np.array([MU_GRID[i], SIGMA_GRID[j], A_GRID[k]])

    ln_z = np.log(z)

    def objective(theta: np.ndarray) -> float:
        mu, sigma, a = theta
        p = a * special.ndtr((ln_z - mu) / sigma)
        # per-user scale keeps the optimiser path independent of panel size
        return -float(_binomial_ll(p, m, m_star)) / total_m

    # Simplex refinement from the best grid cell
    result = optimize.minimize(
        objective,
        x0,
        method='Nelder-Mead',
        bounds=[(0.0, 3.0), (1e-4, 5.0), (1e-6, 1.0)],
        options={'xatol': 1e-8, 'fatol': LL_TOL / total_m, 'maxiter': 4000, 'maxfev': 8000},
    )
    theta = result.x if -result.fun * total_m >= grid_best else x0
    params = FragilityParams(float(theta[0]), float(theta[1]), float(theta[2]))
    ll = log_likelihood(params, data)

    # Diagnostics against observed rates
    predicted = frag_eval(z, params)
    observed = m_star / m
    try:
        r = pearson_r(predicted, observed)
    except UndefinedCorrelationError:
        logger.warning('Observed rates have no variance; R undefined')
        r = float('nan')
    err = mape(predicted, observed)

    logger.info(
        'Fitted mu=%.4f sigma=%.4f a=%.4f (ll=%.3f, R=%.3f, MAPE=%.2f%%, n=%d%s)',
        params.mu, params.sigma, params.a, ll, r, err, len(data), ', binned' if binned else '',
    )
    return FitReport(params, ll, r, err, len(data), binned, grid_best)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InputError(f'length mismatch: {x.size} vs {y.size}')
    if x.size < 2:
        raise UndefinedCorrelationError('need at least two pairs')
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError('zero variance')
    return float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def mape(pred: Sequence[float], obs: Sequence[float]) -> float:
    """Mean absolute percentage error relative to the observed rates."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise InputError(f'length mismatch: {pred.size} vs {obs.size}')
    keep = obs > 0
    skipped = int((~keep).sum())
    if not keep.any():
        raise UndefinedMapeError('every observed rate is zero')
    if skipped:
        logger.warning('MAPE skipped %d zero-rate entries', skipped)
    return float(np.mean(np.abs(pred[keep] - obs[keep]) / obs[keep]) * 100.0)


@dataclass(frozen=True)
class LooRow:
    left_out: str
    R: float = float('nan')
    MAPE: float = float('nan')
    mu: float = float('nan')
    sigma: float = float('nan')
    a: float = float('nan')
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def loo_validate(datasets: Mapping[str, Sequence[EvacObservation]], binned: bool = False) -> list[LooRow]:
    """
    Fit on all disasters but one, predict the one left out; one row per disaster.

    The left-out disaster is scored on its evacuation rates pooled per
    intensity. R uses every pooled rate; MAPE only those backed by at least
    ``LOO_MIN_EVACUEES`` evacuees, since the relative error of a near-zero
    rate is counting noise.
    """
    if len(datasets) < 2:
        raise ConfigError(f'need >= 2 disasters, got {len(datasets)}', field='loo_datasets')
    rows = []
    for name in sorted(datasets):
        train = [o for other in sorted(datasets) if other != name for o in datasets[other]]
        test = pool_by_intensity([o for o in datasets[name] if o.M > 0])
        try:
            report = fit_mle(train, binned=binned)
            z, m, m_star = _arrays(test)
            predicted = frag_eval(z, report.params)
            observed = m_star / m
            measurable = m_star >= LOO_MIN_EVACUEES
            if not measurable.any():
                raise UndefinedMapeError(f'no intensity with >= {LOO_MIN_EVACUEES} evacuees')
            p = report.params
            rows.append(LooRow(
                name, pearson_r(predicted, observed), mape(predicted[measurable], observed[measurable]),
                p.mu, p.sigma, p.a,
            ))
        except EvacAnalyticsError as e:
            logger.warning("Leave-one-out row '%s' failed: %s", name, e)
            rows.append(LooRow(name, error=f'{type(e).__name__}: {e}'))
    return rows


@dataclass(frozen=True)
class Prediction:
    per_lgu: dict[str, float]
    total: float
    total_population: float
    missing: tuple[str, ...] = field(default=())


def predict_evacuees(
    intensity: Mapping[str, float],
    population: Mapping[str, float],
    params: FragilityParams,
) -> Prediction:
    per_lgu = {}
    missing = []
    for lgu_id in sorted(intensity):
        if lgu_id not in population:
            missing.append(lgu_id)
            continue
        n = float(population[lgu_id])
        if not (math.isfinite(n) and n >= 0):
            raise InputError(f'population of {lgu_id} must be >= 0, got {n}')
        per_lgu[lgu_id] = n * frag_eval(intensity[lgu_id], params)
    if missing:
        logger.warning('No population for %d LGUs: %s', len(missing), ', '.join(missing[:10]))
    return Prediction(
        per_lgu=per_lgu,
        total=float(sum(per_lgu.values())),
        total_population=float(sum(population[l] for l in per_lgu)),
        missing=tuple(missing),
    )


def curve_points(
    params: FragilityParams,
    z_min: float = CURVE_Z_MIN,
    z_max: float = CURVE_Z_MAX,
    step: float = CURVE_Z_STEP,
) -> list[tuple[float, float]]:
    if not (0 < z_min < z_max and step > 0):
        raise ConfigError(f'bad curve range [{z_min}, {z_max}] step {step}', field='curve')
    n = int(round((z_max - z_min) / step))
    zs = np.round(z_min + step * np.arange(n + 1), 6)
    return [(float(z), float(p)) for z, p in zip(zs, frag_eval(zs, params))]


def rate_scatter(obs: Sequence[EvacObservation], params: FragilityParams) -> list[tuple[str, float, float, float]]:
    """Per-LGU (lgu_id, z, observed rate, predicted rate)."""
    return [(o.lgu_id, o.z, o.rate, frag_eval(o.z, params)) for o in obs if o.M > 0]


@dataclass(frozen=True)
class SweepRow:
    r_m: float
    report: Optional[FitReport]
    rates: dict[float, float]
    n_users: int
    n_evacuated: int
    error: Optional[str] = None


def r_sensitivity_sweep(
    homes: Mapping[str, HomeEstimate],
    post_sps: Mapping[str, Sequence[Staypoint]],
    intensity_of: Mapping[str, float],
    r_values: Sequence[float],
    *,
    first_night: date,
    window_days: int = 7,
    bandwidth_m: float = 100.0,
    excluded: Sequence[str] = (),
    binned: bool = False,
    workers: int = 1,
) -> list[SweepRow]:
    """Rerun detection, pooling and fitting once per evacuation threshold."""
    r_values = list(r_values)
    if not r_values or any(r <= 0 for r in r_values) or r_values != sorted(r_values):
        raise ConfigError(f'must be positive and ascending, got {r_values}', field='r_values')

    rows = []
    for r in r_values:
        def detect(user_id: str, home: HomeEstimate, r=r):
            return detect_evacuation(
                home, post_sps.get(user_id, ()), r, window_days,
                first_night=first_night, bandwidth_m=bandwidth_m,
            )

        records, _ = map_users(detect, homes, workers)
        obs = aggregate_observations(records.values(), intensity_of, excluded)
        n_evac = sum(rec.evacuated for rec in records.values())
        try:
            report = fit_mle(obs, binned=binned)
            error = None
        except FitError as e:
            logger.warning('Fit at r=%.0f m failed: %s', r, e)
            report, error = None, f'{type(e).__name__}: {e}'
        rows.append(SweepRow(r, report, rates_by_intensity(obs), len(records), n_evac, error))
    return rows
