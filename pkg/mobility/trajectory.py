"""
GPS ingestion and staypoint extraction.

gps.csv schema: ``user_id,t,lat,lon`` with ``t`` in integer epoch seconds UTC.
"""

import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from typing import BinaryIO, Sequence, TextIO, Union

import numpy as np
import pandas as pd

from evacanalytics.exceptions import ConfigError, DataQualityError, FormatError
from mobility.geo import GeoPoint, haversine_array

logger = logging.getLogger(__name__)

GPS_COLUMNS = ['user_id', 't', 'lat', 'lon']
MAX_MALFORMED_FRACTION = 0.5
REPLACEMENT_CHAR = '\ufffd'

DAY_S = 86400
NIGHT_START_HOUR = 20
NIGHT_END_HOUR = 6


@dataclass(frozen=True)
class GpsRecord:
    user_id: str
    t: int
    pos: GeoPoint


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One user's fixes, stored column-wise and sorted by time."""

    user_id: str
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        if not self.user_id:
            raise FormatError('trajectory needs a user_id')
        if not (len(self.t) == len(self.lat) == len(self.lon)):
            raise FormatError(f'trajectory {self.user_id}: column lengths differ')
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            raise FormatError(f'trajectory {self.user_id}: timestamps not ascending')

    @classmethod
    def from_records(cls, records: Sequence[GpsRecord]) -> 'Trajectory':
        ordered = sorted(records, key=lambda r: r.t)
        user_ids = {r.user_id for r in ordered}
        if len(user_ids) != 1:
            raise FormatError(f'trajectory must hold exactly one user, got {len(user_ids)}')
        return cls(
            user_id=ordered[0].user_id,
            t=np.array([r.t for r in ordered], dtype=np.int64),
            lat=np.array([r.pos.lat for r in ordered], dtype=float),
            lon=np.array([r.pos.lon for r in ordered], dtype=float),
        )

    @property
    def records(self) -> list[GpsRecord]:
        return [
            GpsRecord(self.user_id, int(t), GeoPoint(float(la), float(lo)))
            for t, la, lo in zip(self.t, self.lat, self.lon)
        ]

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class Staypoint:
    center: GeoPoint
    t_start: int
    t_end: int
    n_fixes: int = 0
    # Overlap with the nighttime window, per local night (the date the night starts on).
    night_weights: tuple[tuple[date, float], ...] = field(default=())

    @property
    def duration_s(self) -> int:
        return self.t_end - self.t_start

    @property
    def weight_s(self) -> float:
        """Night-prorated weight once filtered, the raw duration before."""
        if self.night_weights:
            return float(sum(w for _, w in self.night_weights))
        return float(self.duration_s)

    @property
    def nights(self) -> tuple[date, ...]:
        return tuple(n for n, _ in self.night_weights)

    def night_weight(self, night: date) -> float:
        return sum(w for n, w in self.night_weights if n == night)


@dataclass(frozen=True)
class ParsedGps:
    trajectories: dict[str, Trajectory]
    n_rows: int
    n_skipped: int


def parse_gps_csv(stream: Union[str, BinaryIO, TextIO]) -> ParsedGps:
    """
    Group fixes per user and sort by time. Malformed rows are skipped and
    counted; more than half malformed aborts the read.

    Rows with the wrong number of fields and rows holding bytes that are not
    UTF-8 count as malformed.
    """
    bad_lines: list[list[str]] = []

    def skip_bad_line(fields: list[str]) -> None:
        bad_lines.append(fields)

    try:
        df = pd.read_csv(
            stream, dtype=str, keep_default_na=False, comment='#',
            engine='python', on_bad_lines=skip_bad_line,
            encoding='utf-8', encoding_errors='replace',
        )
    except pd.errors.EmptyDataError as e:
        raise FormatError('gps.csv is empty (no header row)') from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise FormatError(f'gps.csv is not readable CSV: {e}') from e
    missing = [c for c in GPS_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"gps.csv header missing columns: {', '.join(missing)}")

    n_rows = len(df) + len(bad_lines)
    user_id = df['user_id'].fillna('').str.strip()
    t = pd.to_numeric(df['t'], errors='coerce')
    lat = pd.to_numeric(df['lat'], errors='coerce')
    lon = pd.to_numeric(df['lon'], errors='coerce')
    # U+FFFD marks bytes the decoder replaced
    undecodable = pd.Series(False, index=df.index)
    for col in GPS_COLUMNS:
        undecodable |= df[col].fillna('').str.contains(REPLACEMENT_CHAR, regex=False)
    valid = (
        (user_id != '')
        & ~undecodable
        & t.notna() & np.isfinite(t) & (t > 0) & (t % 1 == 0)
        & lat.notna() & np.isfinite(lat) & lat.between(-90.0, 90.0)
        & lon.notna() & np.isfinite(lon) & lon.between(-180.0, 180.0)
    )
    n_skipped = int((~valid).sum()) + len(bad_lines)
    if n_rows and n_skipped / n_rows > MAX_MALFORMED_FRACTION:
        raise DataQualityError(f'{n_skipped} of {n_rows} GPS rows malformed')
    if bad_lines:
        logger.warning('Skipped %d GPS rows with the wrong number of fields', len(bad_lines))
    if n_skipped:
        logger.warning('Skipped %d malformed GPS rows of %d', n_skipped, n_rows)

    clean = pd.DataFrame({
        'user_id': user_id[valid],
        't': t[valid].astype(np.int64),
        # astype(float) on the raw strings parses with correct rounding
        'lat': df.loc[valid, 'lat'].astype(float),
        'lon': df.loc[valid, 'lon'].astype(float),
    }).sort_values(['user_id', 't'], kind='mergesort')

    trajectories = {
        uid: Trajectory(uid, g['t'].to_numpy(), g['lat'].to_numpy(), g['lon'].to_numpy())
        for uid, g in clean.groupby('user_id', sort=True)
    }
    logger.info('Parsed %d GPS fixes for %d users', len(clean), len(trajectories))
    return ParsedGps(trajectories, n_rows, n_skipped)


def serialize_gps_csv(trajectories: dict[str, Trajectory], stream: TextIO) -> None:
    """Write fixes in ascending (user_id, t) order using the gps.csv schema."""
    frames = [
        pd.DataFrame({'user_id': uid, 't': traj.t, 'lat': traj.lat, 'lon': traj.lon})
        for uid, traj in sorted(trajectories.items())
    ]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=GPS_COLUMNS)
    df.to_csv(stream, index=False, columns=GPS_COLUMNS, lineterminator='\n')


def _run_end(lat: np.ndarray, lon: np.ndarray, i: int, dist_threshold_m: float) -> int:
    """Index one past the last consecutive fix within the threshold of anchor ``i``."""
    n = len(lat)
    start, step = i + 1, 32
    while start < n:
        stop = min(n, start + step)
        d = haversine_array(lat[i], lon[i], lat[start:stop], lon[start:stop])
        out = np.flatnonzero(d > dist_threshold_m)
        if out.size:
            return start + int(out[0])
        start, step = stop, step * 2
    return n


def _time_weighted_center(t: np.ndarray, lat: np.ndarray, lon: np.ndarray) -> GeoPoint:
    # each fix holds until the next one; the last fix closes the run
    w = np.diff(t).astype(float)
    return GeoPoint(float(np.dot(w, lat[:-1]) / w.sum()), float(np.dot(w, lon[:-1]) / w.sum()))


def extract_staypoints(traj: Trajectory, dist_threshold_m: float = 200.0, min_duration_s: float = 900.0) -> list[Staypoint]:
    """
    Anchor-based sequential scan. From each anchor, take the maximal run of
    consecutive fixes within ``dist_threshold_m`` of it; the run is shortened
    from its end until every member lies within the threshold of the
    time-weighted centroid too. Runs spanning ``min_duration_s`` become
    staypoints and the scan resumes after them, otherwise the anchor advances.
    """
    if dist_threshold_m <= 0:
        raise ConfigError(f'must be > 0, got {dist_threshold_m}', field='staypoint_dist_m')
    if min_duration_s <= 0:
        raise ConfigError(f'must be > 0, got {min_duration_s}', field='staypoint_min_duration_s')

    t, lat, lon = traj.t, traj.lat, traj.lon
    n = len(t)
    staypoints: list[Staypoint] = []
    i = 0
    while i < n:
        j = _run_end(lat, lon, i, dist_threshold_m)
        emitted = False
        while j - 1 > i and t[j - 1] - t[i] >= min_duration_s:
            center = _time_weighted_center(t[i:j], lat[i:j], lon[i:j])
            d = haversine_array(center.lat, center.lon, lat[i:j], lon[i:j])
            if np.all(d <= dist_threshold_m):
                staypoints.append(Staypoint(center, int(t[i]), int(t[j - 1]), n_fixes=j - i))
                emitted = True
                break
            j -= 1
        i = j if emitted else i + 1
    return staypoints


def local_date(t: int, tz_offset_s: int) -> date:
    return datetime.fromtimestamp(t + tz_offset_s, tz=timezone.utc).date()


def night_start_epoch(night: date, tz_offset_s: int, start_hour: int = NIGHT_START_HOUR) -> int:
    midnight = datetime(night.year, night.month, night.day, tzinfo=timezone.utc).timestamp()
    return int(midnight) - tz_offset_s + start_hour * 3600


def night_overlaps(
    t_start: int,
    t_end: int,
    tz_offset_s: int,
    start_hour: int = NIGHT_START_HOUR,
    end_hour: int = NIGHT_END_HOUR,
) -> list[tuple[date, float]]:
    """Seconds of [t_start, t_end) falling in each local night window [start_hour, end_hour+24)."""
    night_len = (24 - start_hour + end_hour) * 3600
    overlaps = []
    night = local_date(t_start, tz_offset_s) - timedelta(days=1)
    last = local_date(t_end, tz_offset_s)
    while night <= last:
        w0 = night_start_epoch(night, tz_offset_s, start_hour)
        overlap = min(t_end, w0 + night_len) - max(t_start, w0)
        if overlap > 0:
            overlaps.append((night, float(overlap)))
        night += timedelta(days=1)
    return overlaps


def nighttime_filter(
    sps: Sequence[Staypoint],
    tz_offset_s: int = 9 * 3600,
    start_hour: int = NIGHT_START_HOUR,
    end_hour: int = NIGHT_END_HOUR,
) -> list[Staypoint]:
    """Keep staypoints overlapping the local night window, weighted by the overlap."""
    kept = []
    for sp in sps:
        overlaps = night_overlaps(sp.t_start, sp.t_end, tz_offset_s, start_hour, end_hour)
        if overlaps:
            kept.append(replace(sp, night_weights=tuple(overlaps)))
    return kept


def split_at(sps: Sequence[Staypoint], t_split: int) -> tuple[list[Staypoint], list[Staypoint]]:
    """Partition staypoints at ``t_split``; one straddling it is clipped into both sides."""
    before, after = [], []
    for sp in sps:
        if sp.t_end <= t_split:
            before.append(sp)
        elif sp.t_start >= t_split:
            after.append(sp)
        else:
            before.append(replace(sp, t_end=t_split, night_weights=()))
            after.append(replace(sp, t_start=t_split, night_weights=()))
    return before, after


def first_night_after(event_time: int, tz_offset_s: int, start_hour: int = NIGHT_START_HOUR) -> date:
    """The first local night whose window opens at or after the event."""
    night = local_date(event_time, tz_offset_s)
    if night_start_epoch(night, tz_offset_s, start_hour) < event_time:
        night += timedelta(days=1)
    return night


def observation_span(trajectories: dict[str, Trajectory]) -> tuple[int, int]:
    starts = [int(tr.t[0]) for tr in trajectories.values() if len(tr)]
    ends = [int(tr.t[-1]) for tr in trajectories.values() if len(tr)]
    if not starts:
        return 0, 0
    return min(starts), max(ends)
