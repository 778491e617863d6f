"""Small shared helpers: input validation and order-preserving parallel maps."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np
from sklearn.utils import check_array

# Work is always split into chunks of this many items so results never depend
# on the number of workers.
CHUNK_SIZE = 256


def check_points(points, name: str = "points") -> np.ndarray:
    """Validate an ``(n, 2)`` array of finite planar coordinates."""
    arr = check_array(points, dtype=np.float64, ensure_2d=True, ensure_min_samples=0,
                      input_name=name)
    if arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    return arr


def check_values(values, n: int, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def chunked(n: int, size: int = CHUNK_SIZE) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def parallel_map(func: Callable, items: Sequence, n_jobs: int = 1) -> list:
    """``[func(x) for x in items]`` on up to ``n_jobs`` threads, in order."""
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items))
