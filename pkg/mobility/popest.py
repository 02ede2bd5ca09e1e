"""
Grid population estimation from the tracked panel and comparison with a
census grid. Each tracked user stands for ``1 / sample_rate`` residents.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO, Union

import pandas as pd

from analytics_core.fragility import pearson_r
from evacanalytics.exceptions import ConfigError, FormatError
from mobility.geo import GeoPoint, grid_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PopulationGrid:
    cell_size_m: float
    origin: GeoPoint
    counts: dict[tuple[int, int], float] = field(default_factory=dict)
    n_users: int = 0

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))

    def to_frame(self) -> pd.DataFrame:
        rows = [(x, y, v) for (x, y), v in sorted(self.counts.items())]
        return pd.DataFrame(rows, columns=['x', 'y', 'population'])


def estimate_population_grid(
    user_points: Mapping[str, Iterable[GeoPoint]],
    sample_rate: float,
    cell_size_m: float = 1000.0,
    origin: GeoPoint = GeoPoint(0.0, 0.0),
) -> PopulationGrid:
    """
    ``user_points`` maps each user to the point(s) placing them: their
    estimated home, or their raw nighttime fixes. A user counts once per cell
    they appear in.
    """
    if not 0 < sample_rate <= 1:
        raise ConfigError(f'must be in (0, 1], got {sample_rate}', field='sample_rate')
    per_cell: dict[tuple[int, int], int] = {}
    for user_id in sorted(user_points):
        cells = {grid_index(p, cell_size_m, origin).key for p in user_points[user_id]}
        for key in cells:
            per_cell[key] = per_cell.get(key, 0) + 1
    counts = {key: n / sample_rate for key, n in sorted(per_cell.items())}
    grid = PopulationGrid(cell_size_m, origin, counts, n_users=len(user_points))
    logger.info('Estimated population %.0f over %d cells from %d users', grid.total, len(counts), grid.n_users)
    return grid


def census_correlation(est: PopulationGrid, census: PopulationGrid) -> float:
    """Pearson correlation over the union of cells; a cell absent from one grid counts 0."""
    if est.cell_size_m != census.cell_size_m:
        raise ConfigError(f'cell sizes differ ({est.cell_size_m} vs {census.cell_size_m})', field='cell_size_m')
    if est.origin != census.origin:
        raise ConfigError(f'grid origins differ ({est.origin} vs {census.origin})', field='grid_origin_lat')
    cells = sorted(set(est.counts) | set(census.counts))
    return pearson_r(
        [est.counts.get(c, 0.0) for c in cells],
        [census.counts.get(c, 0.0) for c in cells],
    )


def load_census_csv(source: Union[str, TextIO], cell_size_m: float, origin: GeoPoint) -> PopulationGrid:
    """Read ``x,y,population`` laid out on the given cell size and origin."""
    try:
        df = pd.read_csv(source, comment='#')
    except pd.errors.EmptyDataError as e:
        raise FormatError('census.csv is empty') from e
    if not {'x', 'y', 'population'}.issubset(df.columns):
        raise FormatError('census.csv must have columns x,y,population')
    counts: dict[tuple[int, int], float] = {}
    for x, y, pop in zip(df['x'], df['y'], df['population']):
        key = (int(x), int(y))
        counts[key] = counts.get(key, 0.0) + float(pop)
    return PopulationGrid(cell_size_m, origin, counts)


def load_population_csv(source: Union[str, TextIO]) -> dict[str, float]:
    """Read ``lgu_id,population`` resident counts per LGU."""
    try:
        df = pd.read_csv(source, dtype={'lgu_id': str}, keep_default_na=False, comment='#')
    except pd.errors.EmptyDataError as e:
        raise FormatError('population file is empty') from e
    if not {'lgu_id', 'population'}.issubset(df.columns):
        raise FormatError('population file must have columns lgu_id,population')
    population = pd.to_numeric(df['population'], errors='coerce')
    bad = df['lgu_id'][population.isna() | (population < 0)]
    if len(bad):
        raise FormatError(f"invalid population for LGUs: {', '.join(bad.head(5))}")
    return dict(zip(df['lgu_id'].str.strip(), population.astype(float)))
