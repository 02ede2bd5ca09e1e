"""
Pipeline configuration.

Values are layered: ``settings.EVACANALYTICS`` defaults, then a dotenv-style
``KEY=VALUE`` config file, then command-line overrides. Keys are the upper-cased
field names, optionally prefixed with ``EVAC_``.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

from django.conf import settings
from dotenv import dotenv_values

from evacanalytics.exceptions import ConfigError
from mobility.geo import GeoPoint

logger = logging.getLogger(__name__)

DEFAULT_EVENT_TIME = '2016-04-16T01:25:00+09:00'


def parse_event_time(value: str) -> int:
    try:
        dt = datetime.fromisoformat(value.strip())
    except ValueError as e:
        raise ConfigError(f'not an ISO-8601 timestamp: {value!r}', field='event_time') from e
    if dt.tzinfo is None:
        raise ConfigError(f'timestamp needs a UTC offset: {value!r}', field='event_time')
    return int(dt.timestamp())


def format_event_time(epoch: int, tz_offset_s: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone(timedelta(seconds=tz_offset_s))).isoformat()


@dataclass(frozen=True)
class PipelineConfig:
    gps_path: Optional[str] = None
    lgu_path: Optional[str] = None
    intensity_path: Optional[str] = None
    census_path: Optional[str] = None
    output_dir: str = 'out'
    event_time: int = parse_event_time(DEFAULT_EVENT_TIME)
    tz_offset_s: int = 9 * 3600
    r_m: float = 200.0
    window_days: int = 7
    bandwidth_m: float = 100.0
    mean_shift_tol_m: float = 1.0
    mean_shift_max_iter: int = 300
    min_nights: int = 5
    home_window_days: int = 28
    staypoint_dist_m: float = 200.0
    staypoint_min_duration_s: float = 900.0
    sample_rate: float = 0.01
    cell_size_m: float = 1000.0
    grid_origin_lat: Optional[float] = None
    grid_origin_lon: Optional[float] = None
    popest_from_nights: bool = False
    dist_min_m: float = 200.0
    dist_max_m: float = 1_000_000.0
    bins_per_decade: int = 5
    fit_binned: bool = False
    excluded_lgus: tuple[str, ...] = ()
    r_values: tuple[float, ...] = (100.0, 200.0, 300.0)
    loo_datasets: tuple[tuple[str, str], ...] = ()
    workers: int = 4
    seed: int = 42

    def validate(self) -> 'PipelineConfig':
        positive = (
            'r_m', 'window_days', 'bandwidth_m', 'mean_shift_tol_m', 'mean_shift_max_iter',
            'min_nights', 'home_window_days', 'staypoint_dist_m', 'staypoint_min_duration_s', 'cell_size_m',
            'dist_min_m', 'dist_max_m', 'bins_per_decade', 'workers',
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f'must be > 0, got {value}', field=name)
        if not 0 < self.sample_rate <= 1:
            raise ConfigError(f'must be in (0, 1], got {self.sample_rate}', field='sample_rate')
        if abs(self.tz_offset_s) > 14 * 3600:
            raise ConfigError(f'offset beyond +-14 h: {self.tz_offset_s}', field='tz_offset_s')
        if self.dist_min_m >= self.dist_max_m:
            raise ConfigError(f'must be below dist_max_m ({self.dist_max_m})', field='dist_min_m')
        if self.r_m >= self.dist_max_m:
            raise ConfigError(f'must be below dist_max_m ({self.dist_max_m})', field='r_m')
        if (self.grid_origin_lat is None) != (self.grid_origin_lon is None):
            raise ConfigError('set both grid_origin_lat and grid_origin_lon or neither', field='grid_origin_lat')
        if self.grid_origin_lat is not None and not -90 <= self.grid_origin_lat <= 90:
            raise ConfigError(f'latitude out of range: {self.grid_origin_lat}', field='grid_origin_lat')
        if self.grid_origin_lon is not None and not -180 <= self.grid_origin_lon <= 180:
            raise ConfigError(f'longitude out of range: {self.grid_origin_lon}', field='grid_origin_lon')
        if not self.r_values or any(r <= 0 for r in self.r_values) or list(self.r_values) != sorted(self.r_values):
            raise ConfigError(f'must be positive and ascending, got {self.r_values}', field='r_values')
        return self

    @property
    def evacuee_dist_min_m(self) -> float:
        """Lower edge of evacuee distance fits; evacuees lie beyond r_m by definition."""
        return max(self.dist_min_m, self.r_m)

    @property
    def grid_origin(self) -> Optional[GeoPoint]:
        if self.grid_origin_lat is None:
            return None
        return GeoPoint(self.grid_origin_lat, self.grid_origin_lon)


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip() == '' else convert(text.strip())
    return parse


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError(f'not a boolean: {text!r}')


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f'not an integer: {text!r}')
    return int(value)


def _items(text: str) -> list[str]:
    return [item.strip() for item in text.split(',') if item.strip()]


def _datasets(text: str) -> tuple[tuple[str, str], ...]:
    pairs = []
    for item in _items(text):
        name, sep, path = item.partition(':')
        if not sep or not name or not path:
            raise ValueError(f'expected name:path, got {item!r}')
        pairs.append((name, path))
    return tuple(pairs)


_PARSERS: dict[str, Callable[[str], Any]] = {
    'gps_path': _optional(str),
    'lgu_path': _optional(str),
    'intensity_path': _optional(str),
    'census_path': _optional(str),
    'output_dir': str,
    'event_time': parse_event_time,
    'tz_offset_s': _int,
    'window_days': _int,
    'mean_shift_max_iter': _int,
    'min_nights': _int,
    'home_window_days': _int,
    'bins_per_decade': _int,
    'workers': _int,
    'seed': _int,
    'grid_origin_lat': _optional(float),
    'grid_origin_lon': _optional(float),
    'popest_from_nights': _bool,
    'fit_binned': _bool,
    'excluded_lgus': lambda text: tuple(_items(text)),
    'r_values': lambda text: tuple(float(v) for v in _items(text)),
    'loo_datasets': _datasets,
}

FIELD_NAMES = tuple(f.name for f in fields(PipelineConfig))


def _parse_value(name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        if isinstance(raw, (list, tuple)):
            raw = ','.join(':'.join(v) if isinstance(v, (list, tuple)) else str(v) for v in raw)
        else:
            raw = '' if raw is None else str(raw)
    try:
        return _PARSERS.get(name, float)(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f'invalid value {raw!r} ({e})', field=name) from e


def _field_for_key(key: str) -> str:
    name = key.strip().lower()
    if name.startswith('evac_'):
        name = name[len('evac_'):]
    if name not in FIELD_NAMES:
        raise ConfigError(f'unknown configuration key {key!r}', field=name)
    return name


def _settings_defaults() -> dict[str, Any]:
    values = {}
    for key, raw in getattr(settings, 'EVACANALYTICS', {}).items():
        name = key.lower()
        if name in FIELD_NAMES:
            values[name] = _parse_value(name, raw)
    return values


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """
    Build a validated config. ``overrides`` holds field names (not keys) whose
    values are strings or already-typed values; ``None`` entries are ignored.
    """
    values = _settings_defaults()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f'config file not found: {path}', field='config')
        for key, raw in dotenv_values(path).items():
            name = _field_for_key(key)
            values[name] = _parse_value(name, raw if raw is not None else '')
    for name, raw in (overrides or {}).items():
        if raw is None:
            continue
        if name not in FIELD_NAMES:
            raise ConfigError(f'unknown override {name!r}', field=name)
        if name == 'event_time' and isinstance(raw, int):
            values[name] = raw
        else:
            values[name] = _parse_value(name, raw)
    cfg = replace(PipelineConfig(), **values)
    return cfg.validate()


def _format_value(name: str, value: Any, cfg: PipelineConfig) -> str:
    if value is None:
        return ''
    if name == 'event_time':
        return format_event_time(value, cfg.tz_offset_s)
    if name == 'loo_datasets':
        return ','.join(f'{n}:{p}' for n, p in value)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(cfg: PipelineConfig) -> str:
    """The effective config in the format ``load_config`` reads back."""
    lines = []
    for name in FIELD_NAMES:
        text = _format_value(name, getattr(cfg, name), cfg)
        if any(c in text for c in " #'\"") or text == '':
            text = f'"{text}"'
        lines.append(f'{name.upper()}={text}')
    return '\n'.join(lines) + '\n'
