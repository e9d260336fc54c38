"""Seeded random streams and deterministic chunked execution.

Every chunk of work gets its own generator keyed by (seed, stream, chunk),
so results depend only on the seed and the chunking, never on how many
worker processes ran the chunks.
"""
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

SEED_ENV = "SPHERICAL_SEED"


def resolve_seed(seed=None, default=0):
    """Explicit seed, else the SPHERICAL_SEED environment variable, else ``default``."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env)
    return int(default)


def make_rng(seed, *key):
    """Independent generator for the stream identified by ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def check_rng(rng):
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot make a Generator from {type(rng).__name__}")


def chunk_sizes(n, chunk):
    full, rest = divmod(int(n), int(chunk))
    return [int(chunk)] * full + ([rest] if rest else [])


def default_workers():
    return os.cpu_count() or 1


def run_chunks(fn, n, chunk, seed, stream=0, workers=1):
    """Call ``fn(size, rng)`` for each chunk and return results in chunk order."""
    sizes = chunk_sizes(n, chunk)
    tasks = [(fn, s, seed, stream, i) for i, s in enumerate(sizes)]
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run, tasks))


def _run(task):
    fn, size, seed, stream, i = task
    return fn(size, make_rng(seed, stream, i))
