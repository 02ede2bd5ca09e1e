"""
Geodesic primitives, grid indexing and LGU assignment.

Distances use a spherical Earth of radius 6,371,000 m. Grid cells and
mean-shift run in a local equirectangular plane around an origin, which is
accurate enough at prefecture scale.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np
import pandas as pd
from shapely import wkt
from shapely.geometry import Point, Polygon

from evacanalytics.exceptions import AssignmentError, ConfigError, FormatError, InputError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

LGU_COLUMNS = ('lgu_id', 'name', 'centroid_lat', 'centroid_lon')


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InputError(f'non-finite coordinate ({self.lat}, {self.lon})')
        if not -90.0 <= self.lat <= 90.0:
            raise InputError(f'latitude {self.lat} outside [-90, 90]')
        if not -180.0 <= self.lon <= 180.0:
            raise InputError(f'longitude {self.lon} outside [-180, 180]')


@dataclass(frozen=True)
class GridCell:
    x: int
    y: int
    cell_size_m: float

    @property
    def key(self) -> tuple[int, int]:
        return self.x, self.y


@dataclass(frozen=True)
class LguRecord:
    lgu_id: str
    name: str
    centroid: GeoPoint
    boundary: Optional[tuple[GeoPoint, ...]] = None

    def __post_init__(self):
        if self.boundary is None:
            return
        ring = tuple(self.boundary)
        if len(ring) < 3:
            raise FormatError(f'LGU {self.lgu_id}: boundary needs at least 3 vertices')
        if ring[0] != ring[-1]:
            ring = ring + (ring[0],)
        if len(ring) < 4 or not Polygon([(p.lon, p.lat) for p in ring]).is_valid:
            raise FormatError(f'LGU {self.lgu_id}: boundary polygon is degenerate or self-intersecting')
        object.__setattr__(self, 'boundary', ring)

    @property
    def polygon(self) -> Optional[Polygon]:
        if self.boundary is None:
            return None
        return Polygon([(p.lon, p.lat) for p in self.boundary])


def haversine_m(p1: GeoPoint, p2: GeoPoint) -> float:
    """Great-circle distance in metres."""
    phi1, phi2 = math.radians(p1.lat), math.radians(p2.lat)
    d_phi = phi2 - phi1
    d_lam = math.radians(p2.lon - p1.lon)
    h = math.sin(d_phi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(d_lam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine over broadcastable degree arrays, in metres."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    d_phi = phi2 - phi1
    d_lam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(d_phi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(d_lam / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def to_local_xy(lat, lon, origin: GeoPoint):
    """Equirectangular projection about ``origin``; returns metres east, north."""
    k = math.radians(1.0) * EARTH_RADIUS_M
    x = (np.asarray(lon, dtype=float) - origin.lon) * k * math.cos(math.radians(origin.lat))
    y = (np.asarray(lat, dtype=float) - origin.lat) * k
    return x, y


def from_local_xy(x, y, origin: GeoPoint):
    k = math.radians(1.0) * EARTH_RADIUS_M
    lat = origin.lat + np.asarray(y, dtype=float) / k
    lon = origin.lon + np.asarray(x, dtype=float) / (k * math.cos(math.radians(origin.lat)))
    return lat, lon


def destination_point(p: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached from ``p`` after ``distance_m`` along an initial bearing."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(p.lat)
    lam1 = math.radians(p.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(phi2), lon)


def grid_index(p: GeoPoint, cell_size_m: float, origin: GeoPoint) -> GridCell:
    if not cell_size_m > 0:
        raise ConfigError(f'must be > 0, got {cell_size_m}', field='cell_size_m')
    x, y = to_local_xy(p.lat, p.lon, origin)
    return GridCell(int(math.floor(float(x) / cell_size_m)), int(math.floor(float(y) / cell_size_m)), cell_size_m)


def cell_center(cell: GridCell, origin: GeoPoint) -> GeoPoint:
    lat, lon = from_local_xy((cell.x + 0.5) * cell.cell_size_m, (cell.y + 0.5) * cell.cell_size_m, origin)
    return GeoPoint(float(lat), float(lon))


def assign_lgu(p: GeoPoint, registry: Sequence[LguRecord]) -> str:
    """
    Polygon containment first (ascending lgu_id wins on shared edges), then
    nearest centroid among LGUs that have no polygon.
    """
    if not registry:
        raise AssignmentError('empty LGU registry')
    ordered = sorted(registry, key=lambda r: r.lgu_id)
    point = Point(p.lon, p.lat)
    for record in ordered:
        polygon = record.polygon
        if polygon is not None and polygon.covers(point):
            return record.lgu_id

    candidates = [r for r in ordered if r.boundary is None]
    if not candidates:
        raise AssignmentError(f'point ({p.lat}, {p.lon}) lies in no LGU polygon')
    distances = haversine_array(
        p.lat, p.lon,
        np.array([r.centroid.lat for r in candidates]),
        np.array([r.centroid.lon for r in candidates]),
    )
    # candidates are sorted by lgu_id, so argmin keeps the lowest id on ties
    return candidates[int(np.argmin(distances))].lgu_id


def registry_origin(registry: Iterable[LguRecord]) -> GeoPoint:
    """South-west corner of the LGU centroids; the default grid origin."""
    records = list(registry)
    if not records:
        raise ConfigError('cannot derive a grid origin from an empty LGU registry', field='grid_origin_lat')
    return GeoPoint(min(r.centroid.lat for r in records), min(r.centroid.lon for r in records))


def load_lgu_csv(source: Union[str, TextIO]) -> list[LguRecord]:
    """Read ``lgu_id,name,centroid_lat,centroid_lon[,boundary_wkt]``."""
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False, comment='#')
    except pd.errors.EmptyDataError as e:
        raise FormatError('lgu.csv is empty') from e
    missing = [c for c in LGU_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"lgu.csv missing columns: {', '.join(missing)}")

    records: list[LguRecord] = []
    seen: set[str] = set()
    for row in df.itertuples(index=False):
        lgu_id = row.lgu_id.strip()
        if not lgu_id or lgu_id in seen:
            raise FormatError(f"lgu.csv: empty or duplicate lgu_id '{lgu_id}'")
        seen.add(lgu_id)
        try:
            centroid = GeoPoint(float(row.centroid_lat), float(row.centroid_lon))
        except ValueError as e:
            raise FormatError(f'lgu.csv: bad centroid for {lgu_id}: {e}') from e
        boundary = None
        text = getattr(row, 'boundary_wkt', '').strip() if 'boundary_wkt' in df.columns else ''
        if text:
            try:
                shape = wkt.loads(text)
            except Exception as e:
                raise FormatError(f'lgu.csv: unreadable WKT for {lgu_id}: {e}') from e
            if shape.geom_type != 'Polygon':
                raise FormatError(f'lgu.csv: boundary of {lgu_id} is {shape.geom_type}, expected POLYGON')
            boundary = tuple(GeoPoint(lat, lon) for lon, lat in shape.exterior.coords)
        records.append(LguRecord(lgu_id, row.name, centroid, boundary))

    logger.info('Loaded %d LGUs (%d with boundaries)', len(records), sum(r.boundary is not None for r in records))
    return records


def load_intensity_csv(source: Union[str, TextIO]) -> dict[str, float]:
    """Read ``lgu_id,si``; intensities are rounded to the 0.1 scale step."""
    try:
        df = pd.read_csv(source, dtype={'lgu_id': str}, comment='#')
    except pd.errors.EmptyDataError as e:
        raise FormatError('intensity.csv is empty') from e
    if not {'lgu_id', 'si'}.issubset(df.columns):
        raise FormatError('intensity.csv must have columns lgu_id,si')
    intensities: dict[str, float] = {}
    for lgu_id, si in zip(df['lgu_id'], df['si']):
        z = float(si)
        if not (math.isfinite(z) and 0.0 < z <= 7.0):
            raise InputError(f'intensity {si} for LGU {lgu_id} outside (0, 7]')
        intensities[str(lgu_id)] = round(z, 1)
    return intensities
