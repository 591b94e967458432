import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

from .exceptions import ConfigError

WORKERS_ENV = "SEG_NUM_WORKERS"


def resolve_workers(workers=None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError as e:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from e
    return max(1, int(workers or 1))


def ordered_map(fn, items, workers=1):
    """``map`` that keeps input order; uses forked worker processes if ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
