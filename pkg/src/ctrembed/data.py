"""Criteo-style TSV ingestion, ordered splitting and synthetic data.

A line is ``label \\t col_1 \\t ... \\t col_m``. The label must be ``0`` or
``1``. Empty categorical fields become :data:`MISSING` so every sample has the
same number of active features.
"""

import gzip
import itertools
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

MISSING = "__MISSING__"

CRITEO_INT_COLS = 13
CRITEO_CAT_COLS = 26


class ParseError(ValueError):
    def __init__(self, msg, line_no=None):
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(where + msg)


@dataclass(frozen=True)
class RawSample:
    label: int
    cat_values: tuple


@dataclass(frozen=True)
class ColumnSchema:
    """Which tab-separated columns (after the label) feed the model.

    Column numbers count from 1, the label being column 0.
    """

    n_columns: int
    categorical: tuple
    integer: tuple = ()
    bucketize_integers: bool = False

    @classmethod
    def criteo(cls, bucketize_integers=False):
        ints = tuple(range(1, 1 + CRITEO_INT_COLS))
        cats = tuple(range(1 + CRITEO_INT_COLS, 1 + CRITEO_INT_COLS + CRITEO_CAT_COLS))
        return cls(1 + CRITEO_INT_COLS + CRITEO_CAT_COLS, cats, ints, bucketize_integers)

    @classmethod
    def categorical_only(cls, num_feats):
        return cls(1 + num_feats, tuple(range(1, 1 + num_feats)))

    @property
    def num_feats(self):
        extra = len(self.integer) if self.bucketize_integers else 0
        return len(self.categorical) + extra


def int_bucket(value: int) -> int:
    """``floor(log2(1 + max(v, 0)))``, exact for arbitrary ints."""
    return (1 + max(value, 0)).bit_length() - 1


def parse_criteo_line(line: str, schema: ColumnSchema, line_no=None) -> RawSample:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != schema.n_columns:
        raise ParseError(f"expected {schema.n_columns} columns, got {len(cols)}", line_no)
    if cols[0] == "1":
        label = 1
    elif cols[0] == "0":
        label = 0
    else:
        raise ParseError(f"label must be 0 or 1, got {cols[0]!r}", line_no)
    cats = [cols[c] or MISSING for c in schema.categorical]
    if schema.bucketize_integers:
        for k, c in enumerate(schema.integer):
            raw = cols[c]
            if raw == "":
                cats.append(MISSING)
                continue
            try:
                v = int(raw)
            except ValueError:
                raise ParseError(f"column {c}: not an integer: {raw!r}", line_no) from None
            cats.append(f"I{k}_{int_bucket(v)}")
    return RawSample(label, tuple(cats))


def _open_text(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8", newline="\n")
    return open(path, "r", encoding="utf-8", newline="\n")


def iter_samples(path, schema: ColumnSchema, max_rows=None) -> Iterator[RawSample]:
    with _open_text(path) as fh:
        lines = fh if max_rows is None else itertools.islice(fh, max_rows)
        for no, line in enumerate(lines, start=1):
            if line.strip() == "":
                raise ParseError("empty line", no)
            yield parse_criteo_line(line, schema, no)


def read_samples(path, schema: ColumnSchema, max_rows=None) -> list:
    return list(iter_samples(path, schema, max_rows))


def write_tsv(samples: Iterable[RawSample], path):
    """Write samples as ``label \\t tok_1 ... tok_F``; ``.gz`` paths are gzipped."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            toks = ["" if t == MISSING else t for t in s.cat_values]
            fh.write("\t".join([str(s.label), *toks]) + "\n")


@dataclass
class DatasetSplit:
    train: Sequence
    test: Sequence
    train_fraction: float


def ordered_split(dataset: Sequence, train_fraction: float) -> DatasetSplit:
    """First ``floor(fraction * N)`` samples train, the rest test. Never shuffles."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    # decimal semantics: 0.7 of 45M is 31.5M, not 31499999
    n_train = math.floor(Fraction(str(train_fraction)) * n)
    return DatasetSplit(dataset[:n_train], dataset[n_train:], train_fraction)


# --- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-interaction generator.

    Each planted pair ``(i, j, strength)`` marks a random half of the values of
    feature ``i`` and of feature ``j`` as *hot*. When a sample carries a hot
    value at both positions the pair co-occurs and ``strength`` is added to
    the click logit.
    """

    num_features: int
    cardinality_per_feature: int
    num_samples: int
    planted_pairs: tuple = ()
    base_ctr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_features < 1 or self.cardinality_per_feature < 1:
            raise ValueError("num_features and cardinality_per_feature must be >= 1")
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")
        if not 0.0 < self.base_ctr < 1.0:
            raise ValueError(f"base_ctr must be in (0, 1), got {self.base_ctr}")
        for i, j, _ in self.planted_pairs:
            if not (0 <= i < self.num_features and 0 <= j < self.num_features) or i == j:
                raise ValueError(f"bad planted pair ({i}, {j})")


@dataclass
class SyntheticData:
    values: np.ndarray  # (n, F) value ids
    labels: np.ndarray  # (n,) int8
    probs: np.ndarray  # (n,) generating click probability
    active: np.ndarray  # (n, n_pairs) bool, pair co-occurrence
    hot: list = field(default_factory=list)  # per pair: (hot_i, hot_j) masks over values


def _logit(p):
    return math.log(p / (1.0 - p))


def synthetic_arrays(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    card = spec.cardinality_per_feature
    hot = [(rng.random(card) < 0.5, rng.random(card) < 0.5) for _ in spec.planted_pairs]
    values = rng.integers(0, card, size=(spec.num_samples, spec.num_features))
    logit = np.full(spec.num_samples, _logit(spec.base_ctr))
    active = np.zeros((spec.num_samples, len(spec.planted_pairs)), dtype=bool)
    for p, ((i, j, strength), (hi, hj)) in enumerate(zip(spec.planted_pairs, hot)):
        active[:, p] = hi[values[:, i]] & hj[values[:, j]]
        logit += strength * active[:, p]
    probs = 1.0 / (1.0 + np.exp(-logit))
    labels = (rng.random(spec.num_samples) < probs).astype(np.int8)
    return SyntheticData(values, labels, probs, active, hot)


def synthetic_token(feature: int, value: int, seed: int) -> str:
    from .kernels import xxh64

    return f"{xxh64(f'{feature}:{value}'.encode(), seed) & 0xFFFFFFFF:08x}"


def generate_synthetic(spec: SyntheticSpec) -> list:
    """Deterministic RawSample sequence with Criteo-like 8-hex-digit tokens."""
    data = synthetic_arrays(spec)
    vocab = [
        [synthetic_token(f, v, spec.seed) for v in range(spec.cardinality_per_feature)]
        for f in range(spec.num_features)
    ]
    out = []
    for row, y in zip(data.values.tolist(), data.labels.tolist()):
        out.append(RawSample(int(y), tuple(vocab[f][v] for f, v in enumerate(row))))
    return out


@dataclass(frozen=True)
class BayesReference:
    mean_ctr: float
    true_rig: float  # RIG of the generating model
    additive_rig: float  # best RIG achievable without interactions (LR)

    @property
    def gap(self):
        return self.true_rig - self.additive_rig


def _entropy(p):
    p = np.clip(p, 1e-300, 1 - 1e-16)
    return -(p * np.log(p) + (1 - p) * np.log1p(-p))


def bayes_reference(spec: SyntheticSpec, newton_iters=100) -> BayesReference:
    """Population RIG of the true model and of the best additive model.

    The click probability depends on a sample only through the hot-bit
    pattern of each involved feature, and features are independent, so the
    population is an exact finite mixture over joint patterns. The additive
    optimum is fitted on that mixture by Newton's method.
    """
    data = synthetic_arrays(SyntheticSpec(
        spec.num_features, spec.cardinality_per_feature, 0,
        spec.planted_pairs, spec.base_ctr, spec.seed))
    card = spec.cardinality_per_feature
    feats = sorted({f for i, j, _ in spec.planted_pairs for f in (i, j)})
    # per feature: value -> tuple of hot bits over the pairs touching it
    per_feat = []
    for f in feats:
        bits = []
        for (i, j, _), (hi, hj) in zip(spec.planted_pairs, data.hot):
            if f == i:
                bits.append(hi)
            if f == j:
                bits.append(hj)
        pats = np.stack(bits, axis=1) if bits else np.zeros((card, 0), bool)
        uniq, counts = np.unique(pats, axis=0, return_counts=True)
        per_feat.append((uniq, counts / card))
    combos = list(itertools.product(*[range(len(u)) for u, _ in per_feat]))
    weights = np.empty(len(combos))
    logits = np.full(len(combos), _logit(spec.base_ctr))
    fpos = {f: k for k, f in enumerate(feats)}
    cursor = {f: 0 for f in feats}
    pair_bit = []
    for i, j, _ in spec.planted_pairs:
        pair_bit.append((cursor[i], cursor[j]))
        cursor[i] += 1
        cursor[j] += 1
    for c, combo in enumerate(combos):
        w = 1.0
        for k, u in enumerate(combo):
            w *= per_feat[k][1][u]
        weights[c] = w
        for (i, j, strength), (bi, bj) in zip(spec.planted_pairs, pair_bit):
            pi = per_feat[fpos[i]][0][combo[fpos[i]]]
            pj = per_feat[fpos[j]][0][combo[fpos[j]]]
            if pi[bi] and pj[bj]:
                logits[c] += strength
    probs = 1.0 / (1.0 + np.exp(-logits))
    mean = float(weights @ probs)
    h = float(_entropy(np.array(mean)))
    true_rig = 1.0 - float(weights @ _entropy(probs)) / h

    # design: intercept + one-hot of each feature's pattern (first level dropped)
    cols = [np.ones(len(combos))]
    for k, (u, _) in enumerate(per_feat):
        for level in range(1, len(u)):
            cols.append(np.array([1.0 if combo[k] == level else 0.0 for combo in combos]))
    X = np.stack(cols, axis=1)
    beta = np.zeros(X.shape[1])
    beta[0] = _logit(mean)
    for _ in range(newton_iters):
        q = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (weights * (q - probs))
        hess = (X * (weights * q * (1 - q))[:, None]).T @ X + 1e-12 * np.eye(X.shape[1])
        delta = np.linalg.solve(hess, grad)
        beta -= delta
        if np.max(np.abs(delta)) < 1e-13:
            break
    q = 1.0 / (1.0 + np.exp(-(X @ beta)))
    ce = -(probs * np.log(q) + (1 - probs) * np.log1p(-q))
    additive_rig = 1.0 - float(weights @ ce) / h
    return BayesReference(mean, true_rig, additive_rig)
