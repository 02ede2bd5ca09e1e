import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Mapping, TypeVar

from evacanalytics.exceptions import DataError

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def map_users(
    func: Callable[[str, T], R],
    items: Mapping[str, T],
    workers: int = 1,
) -> tuple[dict[str, R], dict[str, DataError]]:
    """
    Apply ``func(user_id, item)`` to every user.

    Per-user data errors are collected instead of raised. Both result maps are
    keyed and ordered by user_id, whatever order the workers finish in.
    """
    results: dict[str, R] = {}
    failures: dict[str, DataError] = {}

    def run(user_id: str):
        try:
            return user_id, func(user_id, items[user_id]), None
        except DataError as e:
            return user_id, None, e

    user_ids = sorted(items)
    if workers > 1 and len(user_ids) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(user_ids))) as executor:
            futures = [executor.submit(run, uid) for uid in user_ids]
            outcomes = [future.result() for future in as_completed(futures)]
    else:
        outcomes = [run(uid) for uid in user_ids]

    for user_id, result, error in sorted(outcomes, key=lambda o: o[0]):
        if error is None:
            results[user_id] = result
        else:
            failures[user_id] = error
    if failures:
        logger.debug('%d of %d users failed: %s', len(failures), len(user_ids), sorted(failures)[:5])
    return results, failures
