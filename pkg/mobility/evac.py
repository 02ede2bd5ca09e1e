"""
Evacuation detection and per-LGU evacuation rates.

A user has evacuated when the dominant night location over the first
``window_days`` nights after the event lies more than ``r_m`` from home. The
evacuation rate at intensity z pools every LGU that experienced z:

    p(z) = sum(M*_i) / sum(M_i)   over LGUs i with intensity z
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Mapping, Optional, Sequence, TextIO, Union

import pandas as pd

from evacanalytics.exceptions import (
    ConfigError,
    FormatError,
    InputError,
    NoDataAtIntensityError,
    NoObservationError,
    UndeterminedError,
)
from mobility.geo import GeoPoint, haversine_m
from mobility.homeloc import HomeEstimate, mean_shift
from mobility.trajectory import Staypoint

logger = logging.getLogger(__name__)

SI_BIN_WIDTH = 0.5


@dataclass(frozen=True)
class EvacRecord:
    user_id: str
    lgu_id: str
    evacuated: bool
    distance_m: float
    first_night_away: Optional[date]
    days_to_evacuate: Optional[int]
    nights_observed: int
    r_m: float

    def __post_init__(self):
        if self.evacuated != (self.distance_m > self.r_m):
            raise InputError(f'user {self.user_id}: evacuated flag disagrees with distance {self.distance_m}')
        if (self.first_night_away is not None) and not self.evacuated:
            raise InputError(f'user {self.user_id}: first night away recorded for a non-evacuee')


@dataclass(frozen=True)
class EvacObservation:
    lgu_id: str
    z: float
    M: int
    M_star: int

    def __post_init__(self):
        if not 0 <= self.M_star <= self.M:
            raise InputError(f'LGU {self.lgu_id}: need 0 <= M* <= M, got M*={self.M_star}, M={self.M}')
        if not (math.isfinite(self.z) and 1.0 <= self.z <= 7.0):
            raise InputError(f'LGU {self.lgu_id}: intensity {self.z} outside [1.0, 7.0]')

    @property
    def rate(self) -> float:
        return self.M_star / self.M if self.M else float('nan')


@dataclass(frozen=True)
class TimingHistogram:
    si_bin: float
    day_bins: tuple[int, ...]
    mass: tuple[float, ...]
    n_evacuees: int

    @property
    def mean_delay(self) -> float:
        if not self.n_evacuees:
            return float('nan')
        return sum(d * m for d, m in zip(self.day_bins, self.mass))


def round_si(z: float) -> float:
    return round(z, 1)


def intensity_bin(z: float, width: float = SI_BIN_WIDTH) -> float:
    """Lower edge of the intensity bin holding ``z``."""
    return round(math.floor(round_si(z) / width + 1e-9) * width, 1)


def nightly_locations(sps: Sequence[Staypoint], nights: Iterable[date]) -> dict[date, tuple[GeoPoint, float]]:
    """Per night, the centre of the staypoint with the largest overlap and that overlap."""
    found = {}
    for night in nights:
        best = None
        for sp in sps:
            w = sp.night_weight(night)
            if w <= 0:
                continue
            key = (-w, sp.t_start, sp.center.lat, sp.center.lon)
            if best is None or key < best[0]:
                best = (key, sp.center, w)
        if best is not None:
            found[night] = (best[1], best[2])
    return found


def nightly_location(sps: Sequence[Staypoint], night: date) -> GeoPoint:
    located = nightly_locations(sps, [night])
    if night not in located:
        raise NoObservationError(f'no staypoints on the night of {night.isoformat()}')
    return located[night][0]


def detect_evacuation(
    home: HomeEstimate,
    post_sps: Sequence[Staypoint],
    r_m: float = 200.0,
    window_days: int = 7,
    *,
    first_night: date,
    bandwidth_m: float = 100.0,
    tol_m: float = 1.0,
) -> EvacRecord:
    """
    ``post_sps`` are the user's night-filtered staypoints after the event and
    ``first_night`` the first night after it. Nightly locations are pooled by
    mean-shift, weighted by their night overlap; the heaviest pool is the
    dominant post-event location.
    """
    if window_days < 1:
        raise ConfigError(f'must be >= 1, got {window_days}', field='window_days')
    if not r_m > 0:
        raise ConfigError(f'must be > 0, got {r_m}', field='r_m')

    window = [first_night + timedelta(days=k) for k in range(window_days)]
    located = nightly_locations(post_sps, window)
    if not located:
        raise UndeterminedError(f'user {home.user_id}: no observed nights in the {window_days}-night window')

    nights = sorted(located)
    modes = mean_shift(
        [located[n][0] for n in nights],
        [located[n][1] for n in nights],
        bandwidth_m=bandwidth_m,
        tol_m=tol_m,
    )
    distance = haversine_m(home.home, modes[0].point)
    evacuated = distance > r_m

    first_away = None
    days = None
    if evacuated:
        for n in nights:
            if haversine_m(home.home, located[n][0]) > r_m:
                first_away = n
                days = (n - first_night).days + 1
                break

    return EvacRecord(
        user_id=home.user_id,
        lgu_id=home.lgu_id,
        evacuated=evacuated,
        distance_m=distance,
        first_night_away=first_away,
        days_to_evacuate=days,
        nights_observed=len(nights),
        r_m=r_m,
    )


def aggregate_observations(
    records: Iterable[EvacRecord],
    intensity_of: Mapping[str, float],
    excluded: Iterable[str] = (),
) -> list[EvacObservation]:
    """Reduce evacuation records to one (z, M, M*) triple per LGU."""
    excluded = set(excluded)
    totals: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    missing = Counter()
    for rec in records:
        if rec.lgu_id in excluded:
            continue
        if rec.lgu_id not in intensity_of:
            missing[rec.lgu_id] += 1
            continue
        totals[rec.lgu_id][0] += 1
        totals[rec.lgu_id][1] += int(rec.evacuated)
    if missing:
        logger.warning('Dropped %d users in %d LGUs without an intensity', sum(missing.values()), len(missing))
    return [
        EvacObservation(lgu_id, round_si(intensity_of[lgu_id]), m, m_star)
        for lgu_id, (m, m_star) in sorted(totals.items())
    ]


def evacuation_rate(obs: Sequence[EvacObservation], z: float) -> float:
    target = round_si(z)
    pool = [o for o in obs if round_si(o.z) == target]
    total = sum(o.M for o in pool)
    if not pool or total == 0:
        raise NoDataAtIntensityError(f'no tracked users in LGUs at intensity {target}')
    return sum(o.M_star for o in pool) / total


def rates_by_intensity(obs: Sequence[EvacObservation]) -> dict[float, float]:
    rates = {}
    for z in sorted({round_si(o.z) for o in obs}):
        try:
            rates[z] = evacuation_rate(obs, z)
        except NoDataAtIntensityError:
            continue
    return rates


def evacuation_timing_hist(
    records: Iterable[EvacRecord],
    intensity_of: Mapping[str, float],
    bin_width: int = 1,
) -> dict[float, TimingHistogram]:
    """Normalised days-to-first-night-away per 0.5-wide intensity bin."""
    if bin_width < 1:
        raise ConfigError(f'must be >= 1, got {bin_width}', field='bin_width')
    delays: dict[float, list[int]] = defaultdict(list)
    for rec in records:
        if rec.lgu_id not in intensity_of:
            continue
        si_bin = intensity_bin(intensity_of[rec.lgu_id])
        delays.setdefault(si_bin, [])
        if rec.evacuated and rec.days_to_evacuate is not None:
            delays[si_bin].append(rec.days_to_evacuate)

    hists = {}
    for si_bin in sorted(delays):
        days = delays[si_bin]
        counts = Counter(1 + ((d - 1) // bin_width) * bin_width for d in days)
        starts = tuple(sorted(counts))
        hists[si_bin] = TimingHistogram(
            si_bin=si_bin,
            day_bins=starts,
            mass=tuple(counts[s] / len(days) for s in starts),
            n_evacuees=len(days),
        )
    return hists


RATES_COLUMNS = ('lgu_id', 'si', 'M', 'M_star', 'rate')


def observations_frame(obs: Sequence[EvacObservation]) -> pd.DataFrame:
    return pd.DataFrame(
        [(o.lgu_id, o.z, o.M, o.M_star, o.rate) for o in obs],
        columns=list(RATES_COLUMNS),
    )


def load_rates_csv(source: Union[str, TextIO]) -> list[EvacObservation]:
    """Read back a rates.csv (``lgu_id,si,M,M_star[,rate]``); the rate column is ignored."""
    try:
        df = pd.read_csv(source, dtype={'lgu_id': str}, keep_default_na=False, comment='#')
    except pd.errors.EmptyDataError as e:
        raise FormatError('rates file is empty') from e
    missing = {'lgu_id', 'si', 'M', 'M_star'} - set(df.columns)
    if missing:
        raise FormatError(f"rates file lacks columns: {', '.join(sorted(missing))}")
    try:
        return [
            EvacObservation(str(lgu_id), round_si(float(si)), int(m), int(m_star))
            for lgu_id, si, m, m_star in zip(df['lgu_id'], df['si'], df['M'], df['M_star'])
        ]
    except ValueError as e:
        raise FormatError(f'rates file: {e}') from e
