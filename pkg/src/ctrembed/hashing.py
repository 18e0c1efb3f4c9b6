"""The hashing trick: categorical tokens to indices in ``[0, num_bins)``.

Tokens are hashed with XXH64 (seeded, platform-stable). In ``whole_sample``
mode the token bytes are hashed as-is, so equal tokens in different columns
share a bin. In ``per_feature`` mode the column position is prepended as a
salt (``b"<pos>\\x1f<token>"``) so columns get independent bins.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .data import RawSample

WHOLE_SAMPLE = "whole_sample"
PER_FEATURE = "per_feature"
DEFAULT_NUM_BINS = 2 ** 22
_SEP = b"\x1f"


@dataclass(frozen=True)
class HasherConfig:
    num_bins: int = DEFAULT_NUM_BINS
    mode: str = WHOLE_SAMPLE
    seed: int = 0

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be >= 1, got {self.num_bins}")
        if self.mode not in (WHOLE_SAMPLE, PER_FEATURE):
            raise ValueError(f"unknown hashing mode {self.mode!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class HashedSample:
    label: int
    indices: tuple


def _key(token: str, position: int, mode: str) -> bytes:
    raw = token.encode("utf-8")
    if mode == PER_FEATURE:
        return str(position).encode("ascii") + _SEP + raw
    return raw


def hash_token(token: str, feature_position: int, config: HasherConfig) -> int:
    return kernels.xxh64(_key(token, feature_position, config.mode), config.seed) % config.num_bins


def hash_sample(sample: RawSample, config: HasherConfig) -> HashedSample:
    keys = [_key(t, j, config.mode) for j, t in enumerate(sample.cat_values)]
    idx = kernels.hash_tokens(keys, config.seed, config.num_bins)
    return HashedSample(sample.label, tuple(int(i) for i in idx))


def hash_dataset(samples: Sequence[RawSample], config: HasherConfig):
    """Hash a whole dataset at once.

    Returns ``(indices, labels)`` as an ``(n, F)`` int64 array and an ``(n,)``
    int8 array. This is the path training uses; it goes through the batch
    kernel instead of building one HashedSample per row.
    """
    n = len(samples)
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int8)
    num_feats = len(samples[0].cat_values)
    keys = []
    if config.mode == PER_FEATURE:
        salts = [str(j).encode("ascii") + _SEP for j in range(num_feats)]
        for s in samples:
            keys.extend(salt + t.encode("utf-8") for salt, t in zip(salts, s.cat_values))
    else:
        for s in samples:
            keys.extend(t.encode("utf-8") for t in s.cat_values)
    idx = kernels.hash_tokens(keys, config.seed, config.num_bins).reshape(n, num_feats)
    labels = np.fromiter((s.label for s in samples), dtype=np.int8, count=n)
    return idx, labels
