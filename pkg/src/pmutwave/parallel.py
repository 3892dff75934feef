"""Thread pool over fixed index chunks.

Kernels are numba functions compiled with ``nogil=True`` and write to
disjoint output slices, so the chunk boundaries, not the worker count,
determine the floating-point result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

CHUNK = 512


class Executor:
    def __init__(self, workers=1, chunk=CHUNK):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = int(workers)
        self.chunk = int(chunk)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map_range(self, n, fn):
        """Call ``fn(start, stop)`` over ``range(n)`` in chunks of fixed size."""
        bounds = [(a, min(a + self.chunk, n)) for a in range(0, n, self.chunk)]
        if self._pool is None or len(bounds) < 2:
            for a, b in bounds:
                fn(a, b)
            return
        for f in [self._pool.submit(fn, a, b) for a, b in bounds]:
            f.result()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
