"""Keyed counter-based normals.

Every stream is a Philox generator keyed by ``(seed, replicate, channel)``;
the step index is the position within the stream. A draw therefore does not
depend on how replicates are split across workers or in which order streams
are generated.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_DOMAIN = 0x5DE5


def stream(seed: int, replicate: int, channel: int) -> np.random.Generator:
    ss = np.random.SeedSequence([_DOMAIN, int(seed) & (2**64 - 1), int(replicate), int(channel)])
    return np.random.Generator(np.random.Philox(ss))


def keyed_normals(
    seed: int,
    n_steps: int,
    n_paths: int,
    n_channels: int,
    replicate_offset: int = 0,
    threads: int = 1,
) -> np.ndarray:
    """Standard normals of shape ``(n_steps, n_paths, n_channels)``.

    Entry ``[k, p, c]`` is the k-th draw of stream
    ``(seed, replicate_offset + p, c)``.
    """
    out = np.empty((n_paths, n_channels, n_steps))

    def fill(p):
        for c in range(n_channels):
            stream(seed, replicate_offset + p, c).standard_normal(out=out[p, c])

    if threads > 1 and n_paths > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_paths)))
    else:
        for p in range(n_paths):
            fill(p)
    return np.ascontiguousarray(out.transpose(2, 0, 1))
