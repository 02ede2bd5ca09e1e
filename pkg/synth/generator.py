"""
Deterministic synthetic evacuation scenarios.

Real GPS panels are proprietary, so the generator produces gps.csv, lgu.csv,
intensity.csv, census.csv and the ground truth they were drawn from. Each
user draws from its own random substream keyed by (seed, LGU index, user
index); adding users or LGUs never changes the users already there.
"""

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from analytics_core.fragility import KUMAMOTO_PARAMS, FragilityParams, frag_eval
from evacanalytics.exceptions import ConfigError
from mobility.evac import EvacObservation
from mobility.geo import EARTH_RADIUS_M, GeoPoint, LguRecord, destination_point, grid_index, registry_origin
from mobility.popest import PopulationGrid
from mobility.trajectory import DAY_S, first_night_after, night_start_epoch

logger = logging.getLogger(__name__)

KUMAMOTO_EVENT_TIME = int(datetime(2016, 4, 16, 1, 25, tzinfo=timezone(timedelta(hours=9))).timestamp())
KUMAMOTO_CENTER = GeoPoint(32.79, 130.74)

# local hours spent at the night location
NIGHT_FROM_HOUR = 19
NIGHT_TO_HOUR = 7

_M_PER_DEG = math.radians(1.0) * EARTH_RADIUS_M


@dataclass(frozen=True)
class LguSpec:
    lgu_id: str
    centroid: GeoPoint
    radius_m: float
    n_users: int
    z: float
    name: str = ''


@dataclass(frozen=True)
class DelayLaw:
    """Mean nights until leaving home shrinks linearly with intensity, floored at 1."""

    base_days: float = 1.0
    slope_per_si: float = 0.8
    pivot_si: float = 6.5
    max_days: int = 3

    def mean(self, z: float) -> float:
        return max(1.0, self.base_days + self.slope_per_si * (self.pivot_si - z))

    def draw(self, rng: np.random.Generator, z: float) -> int:
        return int(min(self.max_days, 1 + rng.poisson(self.mean(z) - 1.0)))


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    lgus: tuple[LguSpec, ...] = ()
    event_time: int = KUMAMOTO_EVENT_TIME
    tz_offset_s: int = 9 * 3600
    days_before: int = 14
    days_after: int = 7
    fixes_per_day: float = 40.0
    gps_noise_m: float = 30.0
    frag_truth: FragilityParams = KUMAMOTO_PARAMS
    gamma_truth: float = 1.25
    dest_min_m: float = 500.0
    dest_max_m: float = 1_000_000.0
    delay_law: DelayLaw = field(default_factory=DelayLaw)
    day_anchor_m: tuple[float, float] = (1000.0, 5000.0)
    sample_rate: float = 0.01
    cell_size_m: float = 1000.0

    def validate(self) -> None:
        if not self.lgus:
            raise ConfigError('scenario needs at least one LGU', field='lgus')
        ids = [l.lgu_id for l in self.lgus]
        if len(set(ids)) != len(ids):
            raise ConfigError('duplicate lgu_id in scenario', field='lgus')
        for l in self.lgus:
            if not 1.0 <= l.z <= 7.0:
                raise ConfigError(f'LGU {l.lgu_id}: z={l.z} outside [1.0, 7.0]', field='lgus')
            if l.n_users < 0 or l.radius_m <= 0:
                raise ConfigError(f'LGU {l.lgu_id}: bad size or radius', field='lgus')
        if self.days_before < 1 or self.days_after < 1:
            raise ConfigError('observation needs >= 1 day on each side of the event', field='days_before')
        if self.fixes_per_day <= 0:
            raise ConfigError(f'must be > 0, got {self.fixes_per_day}', field='fixes_per_day')
        if self.gps_noise_m < 0:
            raise ConfigError(f'must be >= 0, got {self.gps_noise_m}', field='gps_noise_m')
        if not 200.0 < self.dest_min_m < self.dest_max_m:
            raise ConfigError('destinations must lie beyond 200 m', field='dest_min_m')
        if self.gamma_truth <= 0:
            raise ConfigError(f'must be > 0, got {self.gamma_truth}', field='gamma_truth')
        if not 0 < self.sample_rate <= 1:
            raise ConfigError(f'must be in (0, 1], got {self.sample_rate}', field='sample_rate')

    @property
    def window(self) -> tuple[int, int]:
        """Observation window [start, end): local midnights around the event."""
        local = self.event_time + self.tz_offset_s
        event_midnight = local - local % DAY_S - self.tz_offset_s
        start = event_midnight - self.days_before * DAY_S
        return start, event_midnight + (self.days_after + 1) * DAY_S


@dataclass(frozen=True)
class TruthRecord:
    user_id: str
    lgu_id: str
    home: GeoPoint
    evacuated: bool
    destination: Optional[GeoPoint]
    evac_night: Optional[int]


@dataclass(frozen=True)
class Scenario:
    gps_csv: str
    lgu_csv: str
    intensity_csv: str
    ground_truth_csv: str
    census_csv: str
    truth: tuple[TruthRecord, ...]

    def write(self, out_dir: Union[str, Path]) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in (
            ('gps.csv', self.gps_csv),
            ('lgu.csv', self.lgu_csv),
            ('intensity.csv', self.intensity_csv),
            ('ground_truth.csv', self.ground_truth_csv),
            ('census.csv', self.census_csv),
        ):
            paths[name] = out / name
            paths[name].write_text(text, encoding='utf-8', newline='\n')
        return paths


def user_id_for(seed: int, lgu_id: str, index: int) -> str:
    return hashlib.sha1(f'{seed}:{lgu_id}:{index}'.encode()).hexdigest()[:16]


def sample_truncated_pareto(rng: np.random.Generator, gamma: float, lo: float, hi: float, size=None):
    """Inverse-CDF draws from d**-gamma on [lo, hi]."""
    u = rng.random(size)
    if abs(gamma - 1.0) < 1e-12:
        return lo * (hi / lo) ** u
    e = 1.0 - gamma
    return (lo ** e + u * (hi ** e - lo ** e)) ** (1.0 / e)


def generate_observations(
    frag: FragilityParams,
    intensities: Sequence[float],
    users_per_lgu: Union[int, Sequence[int]],
    seed: int = 0,
    prefix: str = 'L',
) -> list[EvacObservation]:
    """Count-level scenario: M*_i ~ Binomial(M_i, p(z_i)), no trajectories."""
    rng = np.random.default_rng(seed)
    sizes = [users_per_lgu] * len(intensities) if isinstance(users_per_lgu, int) else list(users_per_lgu)
    return [
        EvacObservation(f'{prefix}{i:03d}', round(z, 1), m, int(rng.binomial(m, frag_eval(round(z, 1), frag))))
        for i, (z, m) in enumerate(zip(intensities, sizes))
    ]


def default_lgus(
    n_lgus: int = 150,
    min_users: int = 500,
    max_users: int = 5000,
    seed: int = 42,
    center: GeoPoint = KUMAMOTO_CENTER,
    spacing_m: float = 8000.0,
    radius_m: float = 2000.0,
    z_range: tuple[float, float] = (4.0, 6.7),
) -> tuple[LguSpec, ...]:
    """LGUs on a square lattice around ``center`` with uniform intensities."""
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(n_lgus))
    specs = []
    for i in range(n_lgus):
        row, col = divmod(i, side)
        dx = (col - (side - 1) / 2) * spacing_m
        dy = (row - (side - 1) / 2) * spacing_m
        # 7 decimals, as written to lgu.csv
        centroid = GeoPoint(
            round(center.lat + dy / _M_PER_DEG, 7),
            round(center.lon + dx / (_M_PER_DEG * math.cos(math.radians(center.lat))), 7),
        )
        z = round(float(rng.uniform(*z_range)), 1)
        n_users = int(rng.integers(min_users, max_users + 1))
        specs.append(LguSpec(f'{43000 + i:05d}', centroid, radius_m, n_users, z, name=f'LGU {i:03d}'))
    return tuple(specs)


def _offset(lat: np.ndarray, lon: np.ndarray, dx: np.ndarray, dy: np.ndarray):
    return lat + dy / _M_PER_DEG, lon + dx / (_M_PER_DEG * np.cos(np.radians(lat)))


def _simulate_user(cfg: ScenarioConfig, lgu_index: int, lgu: LguSpec, j: int):
    rng = np.random.default_rng([cfg.seed, lgu_index, j])
    user_id = user_id_for(cfg.seed, lgu.lgu_id, j)

    home = destination_point(lgu.centroid, float(rng.uniform(0.0, 360.0)), lgu.radius_m * math.sqrt(rng.random()))
    anchor_dist = rng.uniform(*cfg.day_anchor_m)
    anchor_bearing = rng.uniform(0.0, 2 * math.pi)
    anchor_dx, anchor_dy = anchor_dist * math.sin(anchor_bearing), anchor_dist * math.cos(anchor_bearing)

    evacuated = bool(rng.random() < frag_eval(lgu.z, cfg.frag_truth))
    destination, evac_night, evac_from = None, None, None
    if evacuated:
        d = float(sample_truncated_pareto(rng, cfg.gamma_truth, cfg.dest_min_m, cfg.dest_max_m))
        destination = destination_point(home, float(rng.uniform(0.0, 360.0)), d)
        evac_night = cfg.delay_law.draw(rng, lgu.z)
        night = first_night_after(cfg.event_time, cfg.tz_offset_s) + timedelta(days=evac_night - 1)
        evac_from = night_start_epoch(night, cfg.tz_offset_s, NIGHT_FROM_HOUR)

    start, end = cfg.window
    n_days = (end - start) // DAY_S
    per_day = rng.poisson(cfg.fixes_per_day, size=n_days)
    t = np.concatenate([
        np.sort(start + k * DAY_S + 1 + rng.integers(0, DAY_S - 1, size=n))
        for k, n in enumerate(per_day)
    ]).astype(np.int64)

    base_lat = np.full(t.size, home.lat)
    base_lon = np.full(t.size, home.lon)
    if evacuated:
        away = t >= evac_from
        base_lat[away] = destination.lat
        base_lon[away] = destination.lon
    hour = ((t + cfg.tz_offset_s) % DAY_S) // 3600
    daytime = (hour >= NIGHT_TO_HOUR) & (hour < NIGHT_FROM_HOUR)
    dx = np.where(daytime, anchor_dx, 0.0) + rng.normal(0.0, cfg.gps_noise_m, t.size)
    dy = np.where(daytime, anchor_dy, 0.0) + rng.normal(0.0, cfg.gps_noise_m, t.size)
    lat, lon = _offset(base_lat, base_lon, dx, dy)

    fixes = pd.DataFrame({'user_id': user_id, 't': t, 'lat': lat, 'lon': lon})
    truth = TruthRecord(user_id, lgu.lgu_id, home, evacuated, destination, evac_night)
    return fixes, truth


def census_from_truth(
    truth: Sequence[TruthRecord],
    sample_rate: float,
    cell_size_m: float,
    origin: GeoPoint,
    seed: int,
) -> PopulationGrid:
    """Resident counts per cell: every panel member stands for Poisson(1/sample_rate) residents."""
    rng = np.random.default_rng([seed, 2**32 - 1])
    counts: dict[tuple[int, int], float] = {}
    for rec in sorted(truth, key=lambda r: r.user_id):
        key = grid_index(rec.home, cell_size_m, origin).key
        counts[key] = counts.get(key, 0.0) + float(rng.poisson(1.0 / sample_rate))
    return PopulationGrid(cell_size_m, origin, dict(sorted(counts.items())), n_users=len(truth))


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    cfg.validate()
    frames, truth = [], []
    for lgu_index, lgu in enumerate(cfg.lgus):
        for j in range(lgu.n_users):
            fixes, rec = _simulate_user(cfg, lgu_index, lgu, j)
            frames.append(fixes)
            truth.append(rec)
    order = sorted(range(len(truth)), key=lambda i: truth[i].user_id)
    truth = [truth[i] for i in order]

    gps = io.StringIO()
    if frames:
        pd.concat([frames[i] for i in order], ignore_index=True).to_csv(
            gps, index=False, float_format='%.7f', lineterminator='\n'
        )
    else:
        gps.write('user_id,t,lat,lon\n')

    lgu_df = pd.DataFrame(
        [(l.lgu_id, l.name or l.lgu_id, l.centroid.lat, l.centroid.lon) for l in cfg.lgus],
        columns=['lgu_id', 'name', 'centroid_lat', 'centroid_lon'],
    )
    intensity_df = pd.DataFrame([(l.lgu_id, l.z) for l in cfg.lgus], columns=['lgu_id', 'si'])
    truth_df = pd.DataFrame(
        [
            (
                r.user_id, r.home.lat, r.home.lon, int(r.evacuated),
                r.destination.lat if r.destination else None,
                r.destination.lon if r.destination else None,
                r.evac_night,
            )
            for r in truth
        ],
        columns=['user_id', 'home_lat', 'home_lon', 'evacuated', 'dest_lat', 'dest_lon', 'evac_night'],
    ).astype({'evac_night': 'Int64'})

    origin = registry_origin(LguRecord(l.lgu_id, l.name, l.centroid) for l in cfg.lgus)
    census = census_from_truth(truth, cfg.sample_rate, cfg.cell_size_m, origin, cfg.seed)

    def csv_text(df: pd.DataFrame) -> str:
        return df.to_csv(index=False, float_format='%.7f', lineterminator='\n')

    n_evac = sum(r.evacuated for r in truth)
    logger.info('Generated %d users in %d LGUs (%d evacuees)', len(truth), len(cfg.lgus), n_evac)
    return Scenario(
        gps_csv=gps.getvalue(),
        lgu_csv=csv_text(lgu_df),
        intensity_csv=intensity_df.to_csv(index=False, float_format='%.1f', lineterminator='\n'),
        ground_truth_csv=csv_text(truth_df),
        census_csv=census.to_frame().to_csv(index=False, float_format='%.0f', lineterminator='\n'),
        truth=tuple(truth),
    )
