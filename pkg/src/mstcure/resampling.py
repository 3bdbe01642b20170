"""Deterministic permutation and bootstrap replicates.

Every replicate draws from its own generator, derived from the master seed
and the replicate index (plus an optional key path for nested loops). The
derivation is numpy's ``SeedSequence`` hash, so replicate ``r`` sees the
same random numbers whatever the number of workers or the execution order.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .data import SurvivalSample, TwoSampleDataset
from .exceptions import ResamplingError

SEED_MAX = 2**64 - 1

# key tags for nested streams
PERM = 1
BOOT = 2
SIM = 3
DATA = 4

DEFAULT_CHUNK = 16
WORKERS_ENV = "MSTCURE_WORKERS"


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def entropy_seed() -> int:
    return int(np.random.SeedSequence().entropy) & SEED_MAX


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the replicate addressed by ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(check_seed(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class IdentityRng:
    """Stand-in generator whose permutations and resamples are the identity.

    Used to force the observed split through the resampling code path.
    """

    def permutation(self, n):
        return np.arange(n)

    def integers(self, low, high=None, size=None):
        return np.arange(size)


@dataclass(frozen=True)
class ReplicateStream:
    master_seed: int
    replicate_count: int
    scheme: str = "permutation"
    key: tuple[int, ...] = ()

    def __post_init__(self):
        check_seed(self.master_seed)
        if self.replicate_count < 0:
            raise ValueError("replicate_count must be >= 0")
        if self.scheme not in ("permutation", "bootstrap-stratified", "identity"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def rng(self, r: int):
        if self.scheme == "identity":
            return IdentityRng()
        return substream(self.master_seed, *self.key, r)

    def child(self, *key: int, replicate_count: int | None = None, scheme: str | None = None) -> "ReplicateStream":
        return ReplicateStream(
            self.master_seed,
            self.replicate_count if replicate_count is None else replicate_count,
            self.scheme if scheme is None else scheme,
            self.key + tuple(key),
        )


@dataclass(frozen=True)
class PermutedSplit:
    group1: SurvivalSample
    group2: SurvivalSample

    def as_dataset(self) -> TwoSampleDataset:
        return TwoSampleDataset(self.group1, self.group2)


def permute_split(pooled: SurvivalSample, n1: int, rng) -> PermutedSplit:
    """Shuffle the pooled records and cut after position ``n1``."""
    n = pooled.n
    if not 0 < n1 < n:
        raise ValueError(f"n1 must lie strictly between 0 and {n}, got {n1}")
    order = rng.permutation(n)
    return PermutedSplit(pooled.take(order[:n1], label=1), pooled.take(order[n1:], label=2))


def split_from_indices(pooled: SurvivalSample, idx1: Sequence[int]) -> PermutedSplit:
    mask = np.zeros(pooled.n, dtype=bool)
    mask[np.asarray(idx1, dtype=int)] = True
    return PermutedSplit(pooled.take(np.flatnonzero(mask), label=1), pooled.take(np.flatnonzero(~mask), label=2))


def n_splits(n: int, n1: int) -> int:
    return math.comb(n, n1)


def enumerate_splits(n: int, n1: int, cap: int = 200_000) -> Iterator[np.ndarray]:
    """Yield the index sets of group 1 for every distinct split, lexicographically."""
    total = math.comb(n, n1)
    if total > cap:
        raise ResamplingError(f"{total} distinct splits exceed the enumeration cap {cap}")
    for combo in itertools.combinations(range(n), n1):
        yield np.fromiter(combo, dtype=int, count=n1)


def bootstrap_sample(sample: SurvivalSample, rng) -> SurvivalSample:
    """Draw ``n`` records with replacement from ``sample`` (size and label kept)."""
    idx = rng.integers(0, sample.n, size=sample.n)
    return sample.take(idx)


def bootstrap_dataset(ds: TwoSampleDataset, rng) -> TwoSampleDataset:
    """Stratified bootstrap: each group resampled from its own records."""
    return TwoSampleDataset(bootstrap_sample(ds.sample1, rng), bootstrap_sample(ds.sample2, rng), ds.group_values)


@dataclass(frozen=True)
class ReplicateOutcome:
    index: int
    value: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_chunk(stream: ReplicateStream, job: Callable, indices: Sequence[int]) -> list[ReplicateOutcome]:
    out = []
    for r in indices:
        try:
            out.append(ReplicateOutcome(r, job(stream.rng(r), r)))
        except Exception as exc:  # replicate failures are data, not crashes
            out.append(ReplicateOutcome(r, None, f"{type(exc).__name__}: {exc}"))
    return out


def run_indices(
    stream: ReplicateStream,
    job: Callable,
    indices: Sequence[int],
    workers: int | None = None,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[ReplicateOutcome]:
    indices = list(indices)
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    chunks = [indices[i : i + chunk_size] for i in range(0, len(indices), chunk_size)]
    if workers == 1 or len(chunks) <= 1:
        return [o for c in chunks for o in _run_chunk(stream, job, c)]
    with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
        parts = pool.map(_run_chunk, itertools.repeat(stream), itertools.repeat(job), chunks)
        return [o for part in parts for o in part]


def run_replicates(
    stream: ReplicateStream,
    job: Callable,
    workers: int | None = None,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[ReplicateOutcome]:
    """Evaluate ``job(rng_r, r)`` for ``r < stream.replicate_count``, in index order.

    Exceptions raised by ``job`` are recorded on the outcome instead of
    propagating. The outputs do not depend on ``workers``.
    """
    return run_indices(stream, job, range(stream.replicate_count), workers, chunk_size)


def collect_valid(
    stream: ReplicateStream,
    job: Callable,
    workers: int | None = None,
    max_discard_rate: float = 0.2,
    chunk_size: int = DEFAULT_CHUNK,
) -> tuple[list[ReplicateOutcome], list[ReplicateOutcome]]:
    """Run replicates until ``stream.replicate_count`` succeed.

    Failed replicates are replaced by fresh indices taken in order, so the
    accepted set is the first ``B`` successful indices. Raises
    :class:`ResamplingError` when the discard rate exceeds ``max_discard_rate``.
    """
    target = stream.replicate_count
    good: list[ReplicateOutcome] = []
    bad: list[ReplicateOutcome] = []
    next_index = 0
    while len(good) < target:
        need = target - len(good)
        batch = range(next_index, next_index + need)
        next_index += need
        for outcome in run_indices(stream, job, batch, workers, chunk_size):
            (good if outcome.ok else bad).append(outcome)
        attempted = len(good) + len(bad)
        if bad and len(bad) / attempted > max_discard_rate:
            reasons = sorted({o.error for o in bad})[:3]
            raise ResamplingError(
                f"permutation distribution unreliable: {len(bad)} of {attempted} replicates "
                f"discarded (> {max_discard_rate:.0%}); e.g. {reasons}"
            )
    return good, bad
