"""Linear and interaction embedding tables with index-based lookup.

A hashed index ``i`` selects row ``i`` directly, which is what multiplying the
table by a one-hot vector would produce without ever building that vector.
Both tables are addressed by the same hashed indices.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels


@dataclass
class LinearTable:
    weights: np.ndarray  # (num_bins,)
    bias: np.ndarray  # shape (1,), kept as an array so it can be updated in place

    @property
    def num_bins(self):
        return self.weights.shape[0]


@dataclass
class InteractionTable:
    vectors: np.ndarray  # (num_bins, k), row i is the latent vector of bin i

    @property
    def k(self):
        return self.vectors.shape[1]

    @property
    def num_bins(self):
        return self.vectors.shape[0]


@dataclass
class EmbeddedSample:
    linear: np.ndarray  # (F,)
    interaction: Optional[np.ndarray]  # (F, k) or None for LR
    indices: tuple


def _check_range(idx, num_bins):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_bins):
        raise IndexError(f"hashed index out of range [0, {num_bins})")
    return idx


def lookup(sample, linear: LinearTable, interaction: Optional[InteractionTable] = None):
    """Gather the embeddings of one HashedSample."""
    idx = _check_range(sample.indices, linear.num_bins)
    lin = linear.weights[idx].astype(np.float64)
    inter = None
    if interaction is not None:
        inter = interaction.vectors[idx].astype(np.float64)
    return EmbeddedSample(lin, inter, tuple(sample.indices))


def lookup_batch(indices, linear: LinearTable, interaction: Optional[InteractionTable] = None):
    """Batched gather: ``(B, F)`` indices to ``(B, F)`` and ``(B, F, k)`` float64."""
    idx = _check_range(indices, linear.num_bins)
    lin = linear.weights[idx].astype(np.float64)
    inter = None if interaction is None else interaction.vectors[idx].astype(np.float64)
    return lin, inter


def init_tables(spec, rng_seed, dtype=np.float32):
    """Zero linear table and bias; interaction entries drawn from N(0, init_std^2)."""
    linear = LinearTable(np.zeros(spec.num_bins, dtype=dtype), np.zeros(1, dtype=dtype))
    if spec.num_factors == 0:
        return linear, None
    rng = np.random.default_rng(rng_seed)
    vectors = rng.normal(0.0, 1.0, size=(spec.num_bins, spec.num_factors))
    vectors = (vectors * spec.init_std).astype(dtype)
    return linear, InteractionTable(vectors)


def apply_sparse_update(table, indices, row_deltas):
    """Add ``row_deltas`` to the rows named by ``indices``, in place.

    Duplicate indices are summed first. ``table`` is a 1-D or 2-D array;
    rows not named are never written.
    """
    table2d = table.reshape(table.shape[0], -1)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    deltas = np.asarray(row_deltas, dtype=np.float64)
    if indices.shape[0] == 0:
        if deltas.size:
            raise ValueError("row deltas given for an empty index set")
        return table
    deltas = deltas.reshape(indices.shape[0], -1)
    if deltas.shape[1] != table2d.shape[1]:
        raise ValueError(f"row delta width {deltas.shape[1]} != table width {table2d.shape[1]}")
    _check_range(indices, table2d.shape[0])
    rows, summed = kernels.coalesce_rows(indices, deltas)
    table2d[rows] = table2d[rows] + summed
    return table
