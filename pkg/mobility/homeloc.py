"""
Home location estimation.

A user's home is the heaviest mode of their nighttime staypoints under a
duration-weighted Gaussian-kernel mean-shift.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from evacanalytics.exceptions import ConfigError, EstimationError, InputError, InsufficientObservationError
from mobility.geo import GeoPoint, LguRecord, assign_lgu, from_local_xy, to_local_xy
from mobility.trajectory import Staypoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mode:
    point: GeoPoint
    mass: float


@dataclass(frozen=True)
class HomeEstimate:
    user_id: str
    home: GeoPoint
    total_night_weight_s: float
    n_staypoints: int
    lgu_id: str
    n_nights: int = 0


def mean_shift(
    points: Sequence[GeoPoint],
    weights: Sequence[float],
    bandwidth_m: float = 100.0,
    tol_m: float = 1.0,
    max_iter: int = 300,
) -> list[Mode]:
    """
    Weighted Gaussian-kernel mean-shift in a local plane centred on the
    weighted centroid of ``points``.

    Every point climbs the density until it moves less than ``tol_m``;
    converged positions within ``bandwidth_m / 2`` of a mode's first member
    join that mode. Modes come back heaviest first, ties by (lat, lon).
    """
    if not points:
        raise EstimationError('no nighttime staypoints')
    if len(points) != len(weights):
        raise InputError(f'{len(points)} points but {len(weights)} weights')
    if not bandwidth_m > 0:
        raise ConfigError(f'must be > 0, got {bandwidth_m}', field='bandwidth_m')
    w = np.asarray(weights, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InputError('mean-shift weights must be positive and finite')

    lat = np.array([p.lat for p in points])
    lon = np.array([p.lon for p in points])
    origin = GeoPoint(float(np.dot(w, lat) / w.sum()), float(np.dot(w, lon) / w.sum()))
    x, y = to_local_xy(lat, lon, origin)
    data = np.column_stack([x, y])

    seeds = data.copy()
    active = np.ones(len(seeds), dtype=bool)
    inv_two_h2 = 1.0 / (2.0 * bandwidth_m ** 2)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        current = seeds[idx]
        d2 = ((current[:, None, :] - data[None, :, :]) ** 2).sum(axis=2)
        kernel = w[None, :] * np.exp(-d2 * inv_two_h2)
        denom = kernel.sum(axis=1)
        moved = np.where(denom[:, None] > 0, (kernel @ data) / np.where(denom > 0, denom, 1.0)[:, None], current)
        shift = np.hypot(*(moved - current).T)
        seeds[idx] = moved
        active[idx[shift < tol_m]] = False

    # greedy merge in input order keeps the grouping deterministic
    merge_radius = bandwidth_m / 2.0
    anchors: list[np.ndarray] = []
    members: list[list[int]] = []
    for i, pos in enumerate(seeds):
        for k, anchor in enumerate(anchors):
            if np.hypot(*(pos - anchor)) <= merge_radius:
                members[k].append(i)
                break
        else:
            anchors.append(pos)
            members.append([i])

    modes = []
    for group in members:
        gw = w[group]
        cx, cy = np.dot(gw, seeds[group]) / gw.sum()
        mlat, mlon = from_local_xy(cx, cy, origin)
        modes.append(Mode(GeoPoint(float(mlat), float(mlon)), float(gw.sum())))
    modes.sort(key=lambda m: (-m.mass, m.point.lat, m.point.lon))
    return modes


def estimate_home(
    user_id: str,
    sps: Sequence[Staypoint],
    bandwidth_m: float = 100.0,
    min_nights: int = 5,
    tol_m: float = 1.0,
    max_iter: int = 300,
    registry: Optional[Sequence[LguRecord]] = None,
) -> HomeEstimate:
    """Home from a user's pre-event nighttime staypoints (already night-filtered)."""
    if min_nights < 1:
        raise ConfigError(f'must be >= 1, got {min_nights}', field='min_nights')
    nights = {night for sp in sps for night in sp.nights}
    if len(nights) < min_nights:
        raise InsufficientObservationError(
            f'user {user_id}: {len(nights)} observed nights, need {min_nights}'
        )
    weights = [sp.weight_s for sp in sps]
    modes = mean_shift([sp.center for sp in sps], weights, bandwidth_m, tol_m, max_iter)
    home = modes[0].point
    lgu_id = assign_lgu(home, registry) if registry else ''
    return HomeEstimate(
        user_id=user_id,
        home=home,
        total_night_weight_s=float(sum(weights)),
        n_staypoints=len(sps),
        lgu_id=lgu_id,
        n_nights=len(nights),
    )
