"""Counter-based random streams.

A stream is named by ``(seed, tag, index)``. A base key per ``(seed, tag)``
comes from :class:`numpy.random.SeedSequence`; replica ``i`` gets the Philox
image of ``i`` under that base key. Replica ``i`` of an experiment therefore
sees the same numbers no matter how replicas are spread over workers.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

DERIVATION_RULE = (
    "base = SeedSequence(entropy=seed, spawn_key=(crc32(tag),)).generate_state(2, uint32); "
    "key[i] = Philox4x32-10(counter=(i_lo, i_hi, 0, 0xFFFFFFFF), base)[:2]; "
    "draws = Philox4x32-10(counter=(site_lo, site_hi, step_lo, step_hi | purpose << 24), key[i])"
)
KEYGEN_LANE = 0xFFFFFFFF


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@lru_cache(maxsize=256)
def base_key(seed: int, tag: str) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_id(tag),))
    k = ss.generate_state(2, dtype=np.uint32)
    return int(k[0]), int(k[1])


def replica_keys(seed: int, tag: str, indices) -> np.ndarray:
    """Philox keys of many replicas at once, shape ``(n, 2)``."""
    from .kernels import philox4x32
    idx = np.asarray(indices, dtype=np.uint64)
    ctr = np.zeros((idx.shape[0], 4), dtype=np.uint32)
    ctr[:, 0] = idx & np.uint64(0xFFFFFFFF)
    ctr[:, 1] = idx >> np.uint64(32)
    ctr[:, 3] = KEYGEN_LANE
    return philox4x32(ctr, base_key(seed, tag))[:, :2].copy()


@dataclass(frozen=True)
class Stream:
    seed: int
    tag: str = "root"
    index: int = 0

    @cached_property
    def key(self) -> tuple[int, int]:
        k = replica_keys(self.seed, self.tag, [self.index])[0]
        return int(k[0]), int(k[1])

    def keys(self, n, start=0) -> np.ndarray:
        """Keys of replicas ``start .. start + n - 1``.

        On the index-0 stream these are the keys of ``replica(start)`` onwards.
        A replica stream ``i > 0`` enumerates its own sub-replicas instead,
        under the tag ``"tag#i"``, so nested ensembles never share keys.
        """
        tag = self.tag if self.index == 0 else f"{self.tag}#{self.index}"
        return replica_keys(self.seed, tag, np.arange(start, start + n))

    def replica(self, index: int) -> "Stream":
        return Stream(self.seed, self.tag, int(index))

    def derive(self, subtag: str) -> "Stream":
        """An independent stream for a sub-task; keeps the replica index."""
        return Stream(self.seed, f"{self.tag}/{subtag}", self.index)

    def numpy(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(tag_id(self.tag), int(self.index), 1))
        return np.random.Generator(np.random.Philox(ss))


def as_stream(rng, tag="root") -> Stream:
    """Accept a :class:`Stream` or an integer seed."""
    if isinstance(rng, Stream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng), tag)
    raise TypeError(f"expected Stream or int seed, got {type(rng).__name__}")


def run_replicas(func, n, stream: Stream, threads=1, chunk=None):
    """Evaluate ``func(stream.replica(i))`` for ``i < n``; results in replica order.

    Output is independent of ``threads`` because every replica owns its stream.
    """
    if threads <= 1 or n <= 1:
        return [func(stream.replica(i)) for i in range(n)]
    chunk = chunk or max(1, n // (4 * threads))
    bounds = [(a, min(n, a + chunk)) for a in range(0, n, chunk)]

    def work(ab):
        return [func(stream.replica(i)) for i in range(*ab)]

    out = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for part in pool.map(work, bounds):
            out.extend(part)
    return out
