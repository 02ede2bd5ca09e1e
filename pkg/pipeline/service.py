"""
Pipeline stages and the end-to-end run.

Stages are computed lazily and cached on the service, so a management
command asks for the artifact it needs and only its upstream stages run:

    ingest -> staypoints -> homes -> evac -> rates -> fit -> distfit -> report
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import numpy as np
import pandas as pd

from analytics_core.distdist import (
    CollapseReport,
    LogBinnedPdf,
    PowerLawFit,
    collapse_check,
    distance_pdf,
    fit_power_law,
)
from analytics_core.fragility import (
    KUMAMOTO_PARAMS,
    FitReport,
    FragilityParams,
    LooRow,
    curve_points,
    fit_mle,
    loo_validate,
    predict_evacuees,
    r_sensitivity_sweep,
    rate_scatter,
)
from evacanalytics.exceptions import (
    ConfigError,
    DataError,
    EvacAnalyticsError,
    FitError,
    InputError,
    StageError,
)
from mobility.evac import (
    EvacObservation,
    EvacRecord,
    aggregate_observations,
    detect_evacuation,
    evacuation_timing_hist,
    intensity_bin,
    load_rates_csv,
    observations_frame,
    rates_by_intensity,
)
from mobility.geo import GeoPoint, LguRecord, load_intensity_csv, load_lgu_csv, registry_origin
from mobility.homeloc import HomeEstimate, estimate_home
from mobility.parallel import map_users
from mobility.popest import (
    PopulationGrid,
    census_correlation,
    estimate_population_grid,
    load_census_csv,
    load_population_csv,
)
from mobility.trajectory import (
    DAY_S,
    NIGHT_END_HOUR,
    NIGHT_START_HOUR,
    Staypoint,
    Trajectory,
    extract_staypoints,
    first_night_after,
    nighttime_filter,
    observation_span,
    parse_gps_csv,
    split_at,
)
from pipeline.artifacts import ArtifactWriter
from pipeline.config import PipelineConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Inputs:
    trajectories: dict[str, Trajectory]
    registry: list[LguRecord]
    intensity: dict[str, float]
    n_rows: int
    n_skipped: int


@dataclass(frozen=True)
class UserStaypoints:
    pre: list[Staypoint]
    post: list[Staypoint]


@dataclass(frozen=True)
class DistanceFits:
    pdfs: dict[str, LogBinnedPdf]
    pdfs_all: dict[str, LogBinnedPdf]
    fits: dict[str, PowerLawFit]
    errors: dict[str, str]
    collapse: Optional[CollapseReport] = None


@dataclass
class RunSummary:
    counts: dict[str, int] = field(default_factory=dict)


def _require_file(path: Optional[str], name: str) -> Path:
    if not path:
        raise ConfigError('required input path not set', field=name)
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{name.removesuffix('_path')} file not found: {p}")
    return p


def _si_key(si_bin: Optional[float]) -> str:
    return 'all' if si_bin is None else f'{si_bin:.1f}'


class PipelineService:
    def __init__(self, cfg: PipelineConfig, writer: Optional[ArtifactWriter] = None):
        self.cfg = cfg
        self.writer = writer or ArtifactWriter(cfg)
        self.summary = RunSummary()
        self._cache: dict[str, Any] = {}

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except StageError:
            raise
        except EvacAnalyticsError as e:
            raise StageError(name, e) from e
        except OSError as e:
            raise StageError(name, InputError(str(e))) from e

    def _cached(self, name: str, compute: Callable[[], Any]) -> Any:
        if name not in self._cache:
            with self.stage(name):
                logger.info('Stage %s', name)
                self._cache[name] = compute()
        return self._cache[name]

    # ---- ingest ---------------------------------------------------------

    def ingest(self) -> Inputs:
        return self._cached('ingest', self._ingest)

    def _ingest(self) -> Inputs:
        # Resolve input files
        cfg = self.cfg
        gps_path = _require_file(cfg.gps_path, 'gps_path')
        registry = load_lgu_csv(str(_require_file(cfg.lgu_path, 'lgu_path')))
        intensity = load_intensity_csv(str(_require_file(cfg.intensity_path, 'intensity_path')))
        parsed = parse_gps_csv(str(gps_path))
        if not parsed.trajectories:
            raise DataError('gps file holds no usable fixes')
        # Event must fall inside the observed span
        start, end = observation_span(parsed.trajectories)
        if not start < cfg.event_time < end:
            raise ConfigError(f'event time {cfg.event_time} outside GPS span [{start}, {end}]', field='event_time')
        # Cross-check intensity map against the registry
        unknown = sorted(set(intensity) - {r.lgu_id for r in registry})
        if unknown:
            logger.warning('%d intensity rows name LGUs missing from the registry', len(unknown))
        self.summary.counts.update(gps_rows=parsed.n_rows, gps_skipped=parsed.n_skipped, users=len(parsed.trajectories))
        return Inputs(parsed.trajectories, registry, intensity, parsed.n_rows, parsed.n_skipped)

    # ---- staypoints -----------------------------------------------------

    def staypoints(self) -> dict[str, UserStaypoints]:
        return self._cached('staypoints', self._staypoints)

    def _staypoints(self) -> dict[str, UserStaypoints]:
        cfg = self.cfg
        home_from = cfg.event_time - cfg.home_window_days * DAY_S

        def per_user(user_id: str, traj: Trajectory) -> UserStaypoints:
            sps = extract_staypoints(traj, cfg.staypoint_dist_m, cfg.staypoint_min_duration_s)
            before, after = split_at(sps, cfg.event_time)
            _, recent = split_at(before, home_from)
            return UserStaypoints(nighttime_filter(recent, cfg.tz_offset_s), nighttime_filter(after, cfg.tz_offset_s))

        result, failures = map_users(per_user, self.ingest().trajectories, cfg.workers)
        if failures:
            logger.warning('Staypoint extraction failed for %d users', len(failures))
        n_sps = sum(len(u.pre) + len(u.post) for u in result.values())
        self.summary.counts.update(night_staypoints=n_sps, staypoint_failures=len(failures))
        logger.info('Extracted %d nighttime staypoints for %d users', n_sps, len(result))
        return result

    # ---- homes ----------------------------------------------------------

    def homes(self) -> dict[str, HomeEstimate]:
        return self._cached('homes', self._homes)

    def _homes(self) -> dict[str, HomeEstimate]:
        cfg = self.cfg
        registry = self.ingest().registry
        pre = {uid: u.pre for uid, u in self.staypoints().items()}

        def per_user(user_id: str, sps: list[Staypoint]) -> HomeEstimate:
            return estimate_home(
                user_id, sps, cfg.bandwidth_m, cfg.min_nights,
                cfg.mean_shift_tol_m, cfg.mean_shift_max_iter, registry,
            )

        homes, failures = map_users(per_user, pre, cfg.workers)
        if failures:
            logger.warning('Excluded %d users without a home estimate', len(failures))
        if not homes:
            raise DataError('no user has enough nighttime observations for a home estimate')
        self.summary.counts.update(homes=len(homes), homes_excluded=len(failures))
        logger.info('Estimated %d homes', len(homes))
        return homes

    def write_homes(self) -> Path:
        rows = [
            (h.user_id, h.home.lat, h.home.lon, h.lgu_id, h.n_staypoints, h.total_night_weight_s)
            for h in self.homes().values()
        ]
        frame = pd.DataFrame(
            rows, columns=['user_id', 'home_lat', 'home_lon', 'lgu_id', 'n_staypoints', 'total_night_weight_s']
        )
        return self.writer.write_csv('homes.csv', frame)

    # ---- evac -----------------------------------------------------------

    @property
    def first_night(self):
        return first_night_after(self.cfg.event_time, self.cfg.tz_offset_s)

    def post_staypoints(self) -> dict[str, list[Staypoint]]:
        return {uid: u.post for uid, u in self.staypoints().items()}

    def evac(self) -> dict[str, EvacRecord]:
        return self._cached('evac', self._evac)

    def _evac(self) -> dict[str, EvacRecord]:
        cfg = self.cfg
        post = self.post_staypoints()

        def per_user(user_id: str, home: HomeEstimate) -> EvacRecord:
            return detect_evacuation(
                home, post.get(user_id, ()), cfg.r_m, cfg.window_days,
                first_night=self.first_night, bandwidth_m=cfg.bandwidth_m, tol_m=cfg.mean_shift_tol_m,
            )

        records, failures = map_users(per_user, self.homes(), cfg.workers)
        if failures:
            logger.warning('Excluded %d users with no observed post-event nights', len(failures))
        n_evac = sum(r.evacuated for r in records.values())
        self.summary.counts.update(evac_users=len(records), evac_undetermined=len(failures), evacuees=n_evac)
        logger.info('Detected %d evacuees among %d users (r=%.0f m)', n_evac, len(records), cfg.r_m)
        return records

    def write_evac(self) -> Path:
        frame = pd.DataFrame(
            [
                (r.user_id, r.lgu_id, int(r.evacuated), r.distance_m,
                 r.first_night_away.isoformat() if r.first_night_away else '')
                for r in self.evac().values()
            ],
            columns=['user_id', 'lgu_id', 'evacuated', 'distance_m', 'first_night_away'],
        )
        return self.writer.write_csv('evac.csv', frame)

    # ---- rates ----------------------------------------------------------

    def rates(self) -> list[EvacObservation]:
        return self._cached('rates', self._rates)

    def _rates(self) -> list[EvacObservation]:
        excluded = set(self.cfg.excluded_lgus)
        records = self.evac().values()
        n_dropped = sum(r.lgu_id in excluded for r in records)
        if n_dropped:
            logger.warning('Excluded %d users in %d configured LGUs', n_dropped, len(excluded))
        obs = aggregate_observations(records, self.ingest().intensity, excluded)
        if not obs:
            raise DataError('no LGU with both tracked users and an intensity')
        self.summary.counts.update(lgus_observed=len(obs), users_in_excluded_lgus=n_dropped)
        return obs

    def write_rates(self) -> Path:
        return self.writer.write_csv('rates.csv', observations_frame(self.rates()))

    # ---- fit ------------------------------------------------------------

    def fit(self) -> FitReport:
        return self._cached('fit', lambda: fit_mle(self.rates(), binned=self.cfg.fit_binned))

    def write_fit(self) -> Path:
        report = self.fit()
        payload = {**report.as_dict(), 'r_m': self.cfg.r_m, 'window_days': self.cfg.window_days}
        return self.writer.write_json('fragility.json', payload)

    def loo(self) -> tuple[list[LooRow], Optional[FitReport]]:
        return self._cached('loo', self._loo)

    def _loo(self) -> tuple[list[LooRow], Optional[FitReport]]:
        datasets = {
            name: load_rates_csv(str(_require_file(path, 'loo_datasets')))
            for name, path in self.cfg.loo_datasets
        }
        rows = loo_validate(datasets, binned=self.cfg.fit_binned)
        pooled = [o for name in sorted(datasets) for o in datasets[name]]
        try:
            joint = fit_mle(pooled, binned=self.cfg.fit_binned)
        except FitError as e:
            logger.warning('Joint fit over %d disasters failed: %s', len(datasets), e)
            joint = None
        return rows, joint

    def write_loo(self) -> list[Path]:
        rows, joint = self.loo()
        frame = pd.DataFrame(
            [(r.left_out, r.R, r.MAPE, r.mu, r.sigma, r.a, r.error or '') for r in rows],
            columns=['left_out', 'R', 'MAPE', 'mu', 'sigma', 'a', 'error'],
        )
        paths = [self.writer.write_csv('loo.csv', frame)]
        if joint is not None:
            payload = {**joint.as_dict(), 'datasets': [name for name, _ in sorted(self.cfg.loo_datasets)]}
            paths.append(self.writer.write_json('joint_fragility.json', payload))
        return paths

    def rsweep(self):
        cfg = self.cfg
        return self._cached('rsweep', lambda: r_sensitivity_sweep(
            self.homes(), self.post_staypoints(), self.ingest().intensity, cfg.r_values,
            first_night=self.first_night, window_days=cfg.window_days, bandwidth_m=cfg.bandwidth_m,
            excluded=cfg.excluded_lgus, binned=cfg.fit_binned, workers=cfg.workers,
        ))

    def write_rsweep(self) -> Path:
        rows = []
        for row in self.rsweep():
            p = row.report.params if row.report else None
            rows.append((
                row.r_m,
                p.mu if p else np.nan, p.sigma if p else np.nan, p.a if p else np.nan,
                row.report.log_likelihood if row.report else np.nan,
                row.n_users, row.n_evacuated, row.error or '',
            ))
        frame = pd.DataFrame(
            rows, columns=['r_m', 'mu', 'sigma', 'a', 'log_likelihood', 'n_users', 'n_evacuated', 'error']
        )
        return self.writer.write_csv('rsweep.csv', frame)

    def predict(self, population_path: str, params: Optional[FragilityParams] = None):
        """Expected evacuees per LGU; parameters come from the caller, this run's fit, or the published curve."""
        if params is None:
            params = self._stored_params()
        population = load_population_csv(str(_require_file(population_path, 'population_path')))
        intensity = load_intensity_csv(str(_require_file(self.cfg.intensity_path, 'intensity_path')))
        return params, intensity, population, predict_evacuees(intensity, population, params)

    def _stored_params(self) -> FragilityParams:
        stored = self.writer.path('fragility.json')
        if stored.is_file():
            doc = json.loads(stored.read_text(encoding='utf-8'))
            logger.info('Using fitted parameters from %s', stored)
            return FragilityParams(doc['mu'], doc['sigma'], doc['a'])
        logger.info('No fitted parameters in %s; using the published curve', self.writer.out_dir)
        return KUMAMOTO_PARAMS

    def write_predict(self, population_path: str, params: Optional[FragilityParams] = None) -> list[Path]:
        params, intensity, population, prediction = self.predict(population_path, params)
        frame = pd.DataFrame(
            [(lgu, intensity[lgu], population[lgu], n) for lgu, n in prediction.per_lgu.items()],
            columns=['lgu_id', 'si', 'population', 'predicted_evacuees'],
        )
        summary = {
            **params.as_dict(),
            'total_predicted': prediction.total,
            'total_population': prediction.total_population,
            'missing_population': list(prediction.missing),
        }
        return [self.writer.write_csv('predict.csv', frame), self.writer.write_json('predict.json', summary)]

    # ---- distfit --------------------------------------------------------

    def distfit(self) -> DistanceFits:
        return self._cached('distfit', self._distfit)

    def _distfit(self) -> DistanceFits:
        cfg = self.cfg
        intensity = self.ingest().intensity
        # Group distances per SI bin; None holds every bin
        by_bin: dict[Optional[float], list[float]] = {None: []}
        all_by_bin: dict[Optional[float], list[float]] = {None: []}
        for rec in self.evac().values():
            if rec.lgu_id in cfg.excluded_lgus or rec.lgu_id not in intensity:
                continue
            si_bin = intensity_bin(intensity[rec.lgu_id])
            for key in (None, si_bin):
                all_by_bin.setdefault(key, []).append(rec.distance_m)
                if rec.evacuated:
                    by_bin.setdefault(key, []).append(rec.distance_m)

        # Evacuee fits start at the evacuation radius
        d_range = (cfg.dist_min_m, cfg.dist_max_m)
        evac_range = (cfg.evacuee_dist_min_m, cfg.dist_max_m)
        pdfs, pdfs_all, fits, errors = {}, {}, {}, {}
        for key in sorted(all_by_bin, key=lambda k: -1.0 if k is None else k):
            name = _si_key(key)
            try:
                pdfs_all[name] = distance_pdf(all_by_bin[key], cfg.bins_per_decade, d_range)
                pdfs[name] = distance_pdf(by_bin.get(key, []), cfg.bins_per_decade, evac_range)
                fits[name] = fit_power_law(by_bin.get(key, []), *evac_range, cfg.bins_per_decade)
            except DataError as e:
                logger.warning('Distance fit for SI bin %s skipped: %s', name, e)
                errors[name] = f'{type(e).__name__}: {e}'

        # Compare per-bin shapes
        per_bin = {float(k): v for k, v in pdfs.items() if k != 'all'}
        collapse = None
        if len(per_bin) >= 2:
            gammas = {float(k): f.gamma for k, f in fits.items() if k != 'all'}
            collapse = collapse_check(per_bin, gammas or None)
        return DistanceFits(pdfs, pdfs_all, fits, errors, collapse)

    def write_distfit(self) -> Path:
        result = self.distfit()
        fits = [
            {'si_bin': name, 'gamma': f.gamma, 'alpha': f.alpha, 'd_min': f.d_min, 'd_max': f.d_max,
             'r2_loglog': f.r2_loglog, 'loglog_slope': f.loglog_slope, 'n': f.n}
            for name, f in result.fits.items()
        ]
        payload: dict[str, Any] = {'fits': fits, 'errors': result.errors}
        if result.collapse is not None:
            c = result.collapse
            payload['collapse'] = {'max_divergence': c.max_divergence, 'pair': list(c.pair), 'gamma_spread': c.gamma_spread}
        return self.writer.write_json('powerlaw.json', payload)

    # ---- popest ---------------------------------------------------------

    def popest(self) -> tuple[PopulationGrid, Optional[PopulationGrid], Optional[float]]:
        return self._cached('popest', self._popest)

    def _night_fix_points(self) -> dict[str, list[GeoPoint]]:
        cfg = self.cfg
        points = {}
        for uid, traj in self.ingest().trajectories.items():
            hour = ((traj.t + cfg.tz_offset_s) % DAY_S) // 3600
            night = ((hour >= NIGHT_START_HOUR) | (hour < NIGHT_END_HOUR)) & (traj.t < cfg.event_time)
            if night.any():
                points[uid] = [GeoPoint(float(a), float(b)) for a, b in zip(traj.lat[night], traj.lon[night])]
        return points

    def _popest(self):
        cfg = self.cfg
        origin = cfg.grid_origin or registry_origin(self.ingest().registry)
        if cfg.popest_from_nights:
            user_points = self._night_fix_points()
        else:
            user_points = {uid: [h.home] for uid, h in self.homes().items()}
        est = estimate_population_grid(user_points, cfg.sample_rate, cfg.cell_size_m, origin)
        census, corr = None, None
        if cfg.census_path:
            census = load_census_csv(str(_require_file(cfg.census_path, 'census_path')), cfg.cell_size_m, origin)
            corr = census_correlation(est, census)
            logger.info('Census correlation %.4f over %d cells', corr, len(set(est.counts) | set(census.counts)))
        return est, census, corr

    def write_popest(self) -> list[Path]:
        est, census, corr = self.popest()
        cells = sorted(set(est.counts) | set(census.counts if census else ()))
        frame = pd.DataFrame(
            [
                (x, y, census.counts.get((x, y), 0.0) if census else np.nan, est.counts.get((x, y), 0.0))
                for x, y in cells
            ],
            columns=['x', 'y', 'population', 'estimated'],
        )
        summary = {
            'n_users': est.n_users,
            'sample_rate': self.cfg.sample_rate,
            'estimated_total': est.total,
            'census_total': census.total if census else None,
            'correlation': corr,
            'mode': 'night_fixes' if self.cfg.popest_from_nights else 'homes',
        }
        return [self.writer.write_csv('popgrid.csv', frame), self.writer.write_json('popest.json', summary)]

    # ---- report ---------------------------------------------------------

    def write_report(self) -> list[Path]:
        """Plot-ready CSVs: fitted curve, per-LGU scatter, pooled rates, timing and distance PDFs."""
        with self.stage('report'):
            report = self.fit()
            obs = self.rates()
            paths = [
                self.writer.write_csv('curve.csv', pd.DataFrame(curve_points(report.params), columns=['z', 'p'])),
                self.writer.write_csv('scatter.csv', pd.DataFrame(
                    rate_scatter(obs, report.params), columns=['lgu_id', 'si', 'observed', 'predicted'])),
                self.writer.write_csv('rates_by_si.csv', pd.DataFrame(
                    sorted(rates_by_intensity(obs).items()), columns=['si', 'rate'])),
            ]
            timing = evacuation_timing_hist(self.evac().values(), self.ingest().intensity)
            paths.append(self.writer.write_csv('timing.csv', pd.DataFrame(
                [(h.si_bin, d, m, h.n_evacuees) for h in timing.values() for d, m in zip(h.day_bins, h.mass)],
                columns=['si_bin', 'day', 'fraction', 'n_evacuees'],
            )))
            dist = self.distfit()
            for name, pdfs in (('distpdf.csv', dist.pdfs), ('distpdf_all.csv', dist.pdfs_all)):
                paths.append(self.writer.write_csv(name, self._pdf_frame(pdfs)))
        return paths

    @staticmethod
    def _pdf_frame(pdfs: Mapping[str, LogBinnedPdf]) -> pd.DataFrame:
        rows = [
            (name, lo, hi, density)
            for name, pdf in pdfs.items()
            for lo, hi, density in zip(pdf.bin_edges[:-1], pdf.bin_edges[1:], pdf.densities)
        ]
        return pd.DataFrame(rows, columns=['si_bin', 'bin_lo_m', 'bin_hi_m', 'density'])

    # ---- run ------------------------------------------------------------

    def run(self) -> dict[str, int]:
        steps = (
            ('homes', self.write_homes),
            ('evac', self.write_evac),
            ('rates', self.write_rates),
            ('fit', self.write_fit),
            ('distfit', self.write_distfit),
            ('popest', self.write_popest),
            ('report', self.write_report),
            ('report', self.finish),
        )
        for name, write in steps:
            with self.stage(name):
                write()
        return dict(self.summary.counts)

    def finish(self) -> Path:
        cfg = self.cfg
        self.writer.write_json('summary.json', self.summary.counts)
        self.writer.write_config()
        return self.writer.write_manifest({
            'gps': cfg.gps_path,
            'lgu': cfg.lgu_path,
            'intensity': cfg.intensity_path,
            'census': cfg.census_path,
        })

    def write_error(self, error: StageError) -> Path:
        return self.writer.write_json('error.json', {
            'stage': error.stage,
            'error': type(error.cause).__name__,
            'message': str(error.cause),
            'exit_code': error.exit_code,
        })


def run_pipeline(cfg: PipelineConfig) -> int:
    """Run every stage and write all artifacts; returns the process exit status."""
    service = PipelineService(cfg)
    try:
        counts = service.run()
    except StageError as e:
        logger.error('Pipeline failed in stage %s: %s', e.stage, e.cause)
        service.write_error(e)
        return e.exit_code
    logger.info('Pipeline finished: %s', ', '.join(f'{k}={v}' for k, v in sorted(counts.items())))
    return 0
