"""Synthetic planted-sparsity CTR data and CSV ingestion.

The generator plants a known subset of k informative fields: the label
depends on linear and pairwise terms over latent per-field factors of those
fields only, so recovery can be checked against the generative score as an
oracle. Everything is deterministic per seed.

CSV layout: header ``label[,label2],user_id,c0..c{m-1},n0..n{k-1}``; ids are
non-negative integers, numerics decimal floats, UTF-8, newline-delimited.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

SPLIT_NAMES = ("train", "val", "test")
NUMERIC_BUCKETS = 32  # equal-width buckets over the train-split log1p range


class DataError(Exception):
    pass


@dataclass
class SyntheticSpec:
    n_samples: int = 100_000
    cat_vocab_sizes: tuple = tuple([50] * 13)
    n_numeric: int = 0
    k_relevant: int = 12
    interaction_order: int = 2
    noise_rate: float = 0.0
    positive_rate: float = 0.25
    signal_scale: float = 3.0
    n_users: int = 200
    seed: int = 0

    def __post_init__(self):
        n_fields = len(self.cat_vocab_sizes) + self.n_numeric
        if not 1 <= self.k_relevant <= n_fields:
            raise DataError(f"k_relevant={self.k_relevant} must be in "
                            f"[1, {n_fields}]")
        if not 0.0 <= self.noise_rate < 0.5:
            raise DataError("noise_rate must be in [0, 0.5)")
        if not 0.0 < self.positive_rate < 1.0:
            raise DataError("positive_rate must be in (0, 1)")


@dataclass
class Dataset:
    labels: np.ndarray                      # (n,) or (n, n_tasks) in {0,1}
    user_ids: np.ndarray                    # (n,)
    cat: np.ndarray                         # (n, m) int ids
    num: np.ndarray                         # (n, k) floats
    cat_vocab_sizes: list
    split_tags: np.ndarray | None = None    # (n,) in {0: train, 1: val, 2: test}
    oracle_scores: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_tasks(self) -> int:
        return 1 if self.labels.ndim == 1 else self.labels.shape[1]

    def indices(self, split: str) -> np.ndarray:
        if self.split_tags is None:
            raise DataError("dataset has no split tags; call split() first")
        return np.flatnonzero(self.split_tags == SPLIT_NAMES.index(split))


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Seeded shuffle then contiguous assignment; disjoint and exhaustive."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    n = dataset.n
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    tags = np.empty(n, dtype=np.int64)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    tags[order[:n_train]] = 0
    tags[order[n_train:n_train + n_val]] = 1
    tags[order[n_train + n_val:]] = 2
    return replace(dataset, split_tags=tags)


def _calibrate_offset(score: np.ndarray, target: float,
                      noise_rate: float) -> float:
    """Bisection on the sigmoid offset so the expected post-noise positive
    rate hits the target."""
    lo_rate = noise_rate
    hi_rate = 1.0 - noise_rate
    if not lo_rate < target < hi_rate:
        raise DataError(
            f"positive_rate {target} infeasible under noise_rate {noise_rate}")

    def realized(t):
        p = expit(score + t).mean()
        return p * (1 - noise_rate) + (1 - p) * noise_rate

    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if realized(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n_samples
    m = len(spec.cat_vocab_sizes)
    n_fields = m + spec.n_numeric

    cat = np.column_stack([rng.integers(0, v, size=n)
                           for v in spec.cat_vocab_sizes]) \
        if m else np.zeros((n, 0), dtype=np.int64)
    num = rng.gamma(2.0, 1.0, size=(n, spec.n_numeric)) \
        if spec.n_numeric else np.zeros((n, 0))

    # latent per-field factors: per-category effects for categorical fields,
    # standardized values for numeric fields
    factors = np.empty((n, n_fields))
    for j in range(m):
        effects = rng.standard_normal(spec.cat_vocab_sizes[j])
        factors[:, j] = effects[cat[:, j]]
    for j in range(spec.n_numeric):
        col = num[:, j]
        factors[:, m + j] = (col - col.mean()) / max(col.std(), 1e-12)

    relevant = rng.choice(n_fields, size=spec.k_relevant, replace=False)
    w = rng.standard_normal(spec.k_relevant)
    score = factors[:, relevant] @ w
    if spec.interaction_order >= 2 and spec.k_relevant >= 2:
        pair_w = rng.standard_normal((spec.k_relevant, spec.k_relevant))
        for a in range(spec.k_relevant):
            for c in range(a + 1, spec.k_relevant):
                score += (pair_w[a, c] / np.sqrt(spec.k_relevant)
                          * factors[:, relevant[a]] * factors[:, relevant[c]])
    score = spec.signal_scale * (score - score.mean()) / max(score.std(), 1e-12)

    offset = _calibrate_offset(score, spec.positive_rate, spec.noise_rate)
    labels = rng.binomial(1, expit(score + offset)).astype(np.int64)
    if spec.noise_rate > 0:
        flip = rng.random(n) < spec.noise_rate
        labels[flip] = 1 - labels[flip]

    # power-law user activity so GAUC is meaningful
    weights = (np.arange(1, spec.n_users + 1, dtype=np.float64)) ** -1.2
    weights /= weights.sum()
    user_ids = rng.choice(spec.n_users, size=n, p=weights)

    ds = Dataset(labels=labels, user_ids=user_ids, cat=cat, num=num,
                 cat_vocab_sizes=list(spec.cat_vocab_sizes),
                 oracle_scores=score + offset)
    return split(ds, seed=spec.seed)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    n_labels: int = 1
    n_categorical: int = 0
    n_numeric: int = 0
    already_encoded: bool = False  # ids verbatim, no vocab/frequency mapping
    min_category_freq: int = 5     # train frequency <= this maps to OOV id 0
    numeric_buckets: int = NUMERIC_BUCKETS
    split_fractions: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0

    def header(self) -> list[str]:
        labels = ["label"] + [f"label{i + 1}" for i in range(1, self.n_labels)]
        return (labels + ["user_id"]
                + [f"c{j}" for j in range(self.n_categorical)]
                + [f"n{j}" for j in range(self.n_numeric)])


def write_csv(dataset: Dataset, path: str):
    schema = CsvSchema(n_labels=dataset.n_tasks,
                       n_categorical=dataset.cat.shape[1],
                       n_numeric=dataset.num.shape[1])
    labels = dataset.labels.reshape(dataset.n, -1)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(schema.header())
        for i in range(dataset.n):
            row = [int(v) for v in labels[i]]
            row.append(int(dataset.user_ids[i]))
            row.extend(int(v) for v in dataset.cat[i])
            row.extend(repr(float(v)) for v in dataset.num[i])
            writer.writerow(row)


def load_csv(path: str, schema: CsvSchema) -> Dataset:
    """Read, split, then fit preprocessing on the training split only.

    Unless ``already_encoded``, categorical values seen <= min_category_freq
    times in the train split share OOV id 0 and others get ids built from the
    train vocabulary. Numerics stay raw here; encode_dataset() buckets them.
    """
    expected = schema.header()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != expected:
            raise DataError(f"header mismatch: expected {expected}, "
                            f"got {header}")
        labels, users, cats, nums = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataError(f"malformed row at line {lineno}: "
                                f"expected {len(expected)} fields, "
                                f"got {len(row)}")
            try:
                labels.append([int(v) for v in row[:schema.n_labels]])
                users.append(int(row[schema.n_labels]))
                c0 = schema.n_labels + 1
                cat_cells = row[c0:c0 + schema.n_categorical]
                if schema.already_encoded:
                    cat_cells = [int(v) for v in cat_cells]
                cats.append(cat_cells)
                nums.append([float(v) for v in
                             row[c0 + schema.n_categorical:]])
            except ValueError as e:
                raise DataError(f"malformed row at line {lineno}: {e}") from e

    labels = np.asarray(labels, dtype=np.int64)
    if schema.n_labels == 1:
        labels = labels[:, 0]
    users = np.asarray(users, dtype=np.int64)
    num = np.asarray(nums, dtype=np.float64).reshape(len(users),
                                                     schema.n_numeric)
    raw_cat = np.asarray(cats, dtype=object).reshape(len(users),
                                                     schema.n_categorical)

    if schema.already_encoded:
        cat = raw_cat.astype(np.int64) if schema.n_categorical \
            else np.zeros((len(users), 0), dtype=np.int64)
        vocabs = [int(cat[:, j].max()) + 1 if len(users) else 1
                  for j in range(schema.n_categorical)]
        ds = Dataset(labels=labels, user_ids=users, cat=cat, num=num,
                     cat_vocab_sizes=vocabs)
        return split(ds, schema.split_fractions, schema.split_seed)

    ds = Dataset(labels=labels, user_ids=users,
                 cat=np.zeros((len(users), schema.n_categorical),
                              dtype=np.int64),
                 num=num, cat_vocab_sizes=[])
    ds = split(ds, schema.split_fractions, schema.split_seed)
    train_idx = ds.indices("train")
    vocabs = []
    for j in range(schema.n_categorical):
        col = raw_cat[:, j]
        values, counts = np.unique(col[train_idx], return_counts=True)
        kept = [v for v, c in zip(values, counts)
                if c > schema.min_category_freq]
        mapping = {v: i + 1 for i, v in enumerate(sorted(kept))}
        ds.cat[:, j] = [mapping.get(v, 0) for v in col]
        vocabs.append(len(mapping) + 1)
    ds.cat_vocab_sizes = vocabs
    return ds


# ---------------------------------------------------------------------------
# Model-ready encoding
# ---------------------------------------------------------------------------

@dataclass
class EncodedDataset:
    ids: np.ndarray            # (n, n_fields) int
    vocab_sizes: list
    labels: np.ndarray
    user_ids: np.ndarray
    split_tags: np.ndarray
    oracle_scores: np.ndarray | None = None

    def split_arrays(self, name: str):
        idx = np.flatnonzero(self.split_tags == SPLIT_NAMES.index(name))
        labels = self.labels[idx]
        return self.ids[idx], labels, self.user_ids[idx]


def encode_dataset(ds: Dataset, buckets: int = NUMERIC_BUCKETS) -> EncodedDataset:
    """Categoricals pass through; numerics get log1p then equal-width buckets
    whose range is fit on the train split (monotone in the raw value)."""
    if ds.split_tags is None:
        raise DataError("encode_dataset needs a split dataset")
    cols = [ds.cat[:, j] for j in range(ds.cat.shape[1])]
    vocabs = list(ds.cat_vocab_sizes)
    train_idx = ds.indices("train")
    for j in range(ds.num.shape[1]):
        logged = np.log1p(np.maximum(ds.num[:, j], 0.0))
        lo = logged[train_idx].min()
        hi = logged[train_idx].max()
        width = max(hi - lo, 1e-12)
        bucket = np.clip(((logged - lo) / width * buckets).astype(np.int64),
                         0, buckets - 1)
        cols.append(bucket)
        vocabs.append(buckets)
    ids = np.column_stack(cols) if cols else np.zeros((ds.n, 0), dtype=np.int64)
    return EncodedDataset(ids=ids, vocab_sizes=vocabs, labels=ds.labels,
                          user_ids=ds.user_ids, split_tags=ds.split_tags,
                          oracle_scores=ds.oracle_scores)
