"""
Thread pool helpers. Results always come back in input order.
"""
import os
from concurrent.futures import ThreadPoolExecutor, as_completed

THREADS_ENV = "LSSCLT_NUM_THREADS"


def num_threads(requested=None):
    """Worker count: explicit request, else $LSSCLT_NUM_THREADS, else logical cores."""
    if requested:
        return max(1, int(requested))
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            print(f"WARNING: ignoring non-integer {THREADS_ENV}={value!r}")
    return os.cpu_count() or 1


def map_ordered(func, items, workers=None):
    """Apply func to every item on a thread pool; return results in item order."""
    items = list(items)
    workers = num_threads(workers)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]

    results = [None] * len(items)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(func, item): index for index, item in enumerate(items)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results
