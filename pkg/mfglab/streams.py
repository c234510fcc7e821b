# Counter-based random streams
import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def purpose_tag(name: str) -> int:
    """Stable 32-bit tag for a named use of randomness."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "big")


def substream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """
    Independent Philox generator for one (seed, purpose, indices...) key.
    Two calls with the same key always produce the same numbers, whatever
    order or thread they run in.
    """
    key = [int(seed), purpose_tag(purpose), *(int(i) for i in indices)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def step_normals(seed: int, purpose: str, step: int, shape: tuple[int, ...], *indices: int) -> np.ndarray:
    return substream(seed, purpose, *indices, step).standard_normal(shape)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Map preserving input order; threads only changes wall time."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    """Integer seed for a sub-task, reproducible from (seed, purpose, indices)."""
    key = [int(seed), purpose_tag(purpose), *(int(i) for i in indices)]
    return int(np.random.SeedSequence(key).generate_state(1, dtype=np.uint32)[0])
