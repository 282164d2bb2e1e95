"""Bag-of-tags feature matrix over hexagonal regions."""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from shapely import prepared
from sklearn.base import BaseEstimator, TransformerMixin

from ._io import fmt_float
from .exceptions import ConfigError, DataError, EmptyMatrixError, ShapeError
from .ingest import TagFilter, filter_tags

log = logging.getLogger(__name__)


def feature_name(key: str, value: str) -> str:
    return f"{key}_{value}"


@dataclass(frozen=True)
class TagVocabulary:
    features: tuple
    keys: tuple = ()

    def __post_init__(self):
        feats = tuple(self.features)
        if len(set(feats)) != len(feats):
            raise ConfigError("vocabulary features must be unique")
        object.__setattr__(self, "features", feats)
        keys = tuple(self.keys) if self.keys else tuple(f.split("_", 1)[0] for f in feats)
        if len(keys) != len(feats):
            raise ConfigError("one key per vocabulary feature required")
        object.__setattr__(self, "keys", keys)

    @property
    def index(self) -> dict:
        return {f: i for i, f in enumerate(self.features)}

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @classmethod
    def from_pairs(cls, pairs):
        pairs = sorted(set(pairs), key=lambda kv: feature_name(*kv))
        return cls(tuple(feature_name(k, v) for k, v in pairs), tuple(k for k, _ in pairs))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for f in self.features:
                fh.write(f + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(line.strip() for line in fh if line.strip()))


@dataclass
class FeatureMatrix:
    """Sparse region x feature count matrix.

    ``cities[i]`` is the city of ``regions[i]``; ``counts`` is CSR int64.
    """

    regions: list
    cities: list
    counts: sparse.csr_matrix
    vocabulary: TagVocabulary
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.regions = list(self.regions)
        self.cities = list(self.cities)
        self.counts = sparse.csr_matrix(self.counts, dtype=np.int64)
        n, d = self.counts.shape
        if len(self.regions) != n or len(self.cities) != n:
            raise ShapeError(f"{n} matrix rows but {len(self.regions)} regions / {len(self.cities)} cities")
        if d != len(self.vocabulary):
            raise ShapeError(f"{d} matrix columns but vocabulary has {len(self.vocabulary)} features")
        if len(set(self.regions)) != n:
            raise DataError("region ids must be unique")
        if n and self.counts.nnz and self.counts.data.min() < 0:
            raise DataError("counts must be non-negative")

    @property
    def shape(self):
        return self.counts.shape

    @property
    def city_of(self) -> dict:
        return dict(zip(self.regions, self.cities))

    def row_index(self) -> dict:
        return {r: i for i, r in enumerate(self.regions)}

    def dense(self) -> np.ndarray:
        return self.counts.toarray()

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return FeatureMatrix(
            [self.regions[i] for i in rows],
            [self.cities[i] for i in rows],
            self.counts[rows],
            self.vocabulary,
            dict(self.diagnostics),
        )

    def select_cities(self, cities) -> "FeatureMatrix":
        wanted = set(cities)
        return self.take([i for i, c in enumerate(self.cities) if c in wanted])

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.regions == other.regions
            and self.cities == other.cities
            and self.vocabulary.features == other.vocabulary.features
            and self.counts.shape == other.counts.shape
            and (self.counts != other.counts).nnz == 0
        )


def build_vocabulary(datasets, tag_filter: TagFilter | None = None, explicit=None) -> TagVocabulary:
    """Explicit list verbatim, else every surviving key_value pair, sorted."""
    if not datasets:
        raise ConfigError("at least one dataset is required to build a vocabulary")
    if explicit is not None:
        vocab = TagVocabulary(tuple(explicit))
    else:
        pairs = set()
        for ds in datasets:
            for el in ds.elements:
                kept = filter_tags(el, tag_filter)
                if kept is not None:
                    pairs.update(kept.tags.items())
        vocab = TagVocabulary.from_pairs(pairs)
    if not len(vocab):
        raise ConfigError("vocabulary is empty")
    return vocab


def count_tags(dataset, grid, vocab: TagVocabulary, within_boundary: bool = True) -> FeatureMatrix:
    """Count every vocabulary tag of every element into each region it touches.

    Rows are the touched regions in sorted id order. With ``within_boundary``
    only regions whose hexagon intersects the city boundary are kept. Tags
    outside the vocabulary are tallied in ``diagnostics["ignored_tags"]``.
    """
    index = vocab.index
    counts = defaultdict(Counter)
    ignored = 0
    boundary = None
    if within_boundary and dataset.boundary is not None:
        boundary = prepared.prep(dataset.boundary)
    inside = {}

    for el in dataset.elements:
        cols = []
        for k, v in el.tags.items():
            col = index.get(feature_name(k, v))
            if col is None:
                ignored += 1
            else:
                cols.append(col)
        if not cols:
            continue
        for cell in grid.polygon_to_cells(el.shape):
            if boundary is not None:
                if cell not in inside:
                    inside[cell] = boundary.intersects(grid.cell_boundary(cell))
                if not inside[cell]:
                    continue
            row = counts[cell]
            for col in cols:
                row[col] += 1

    regions = sorted(counts)
    rows, cols, vals = [], [], []
    for i, cell in enumerate(regions):
        for col, n in sorted(counts[cell].items()):
            rows.append(i)
            cols.append(col)
            vals.append(n)
    mat = sparse.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))),
        shape=(len(regions), len(vocab)),
        dtype=np.int64,
    )
    if ignored:
        log.info("%s: %d tags outside the vocabulary ignored", dataset.city_name, ignored)
    return FeatureMatrix(
        regions, [dataset.city_name] * len(regions), mat, vocab, {"ignored_tags": ignored}
    )


def drop_empty_regions(m: FeatureMatrix) -> FeatureMatrix:
    keep = np.flatnonzero(np.asarray(m.counts.sum(axis=1)).ravel() > 0)
    if keep.size == 0:
        raise EmptyMatrixError("every region is empty; nothing to featurize")
    if keep.size == m.shape[0]:
        return m
    return m.take(keep)


def concat_matrices(matrices) -> FeatureMatrix:
    """Stack per-city matrices that share a vocabulary.

    A region claimed by several cities stays with the first one.
    """
    matrices = list(matrices)
    if not matrices:
        raise EmptyMatrixError("no matrices to combine")
    vocab = matrices[0].vocabulary
    seen = set()
    regions, cities, blocks = [], [], []
    for m in matrices:
        if m.vocabulary.features != vocab.features:
            raise ShapeError("matrices must share one vocabulary")
        keep = []
        for i, r in enumerate(m.regions):
            if r in seen:
                log.warning("region %s already assigned to another city; keeping the first", r)
                continue
            seen.add(r)
            keep.append(i)
        regions += [m.regions[i] for i in keep]
        cities += [m.cities[i] for i in keep]
        blocks.append(m.counts[keep])
    return FeatureMatrix(regions, cities, sparse.vstack(blocks).tocsr(), vocab)


@dataclass
class CoverageStats:
    cities: list
    keys: list
    percent: np.ndarray
    normalized: np.ndarray

    def as_dict(self, normalized=False):
        table = self.normalized if normalized else self.percent
        return {
            c: {k: float(table[i, j]) for j, k in enumerate(self.keys)}
            for i, c in enumerate(self.cities)
        }


def coverage_stats(matrices) -> CoverageStats:
    """Per city and OSM key: percent of regions with any ``key_*`` count > 0.

    Normalized values divide each key column by its maximum over cities.
    """
    if isinstance(matrices, FeatureMatrix):
        matrices = [matrices]
    matrices = list(matrices)
    vocab = matrices[0].vocabulary
    for m in matrices:
        if m.vocabulary.features != vocab.features:
            raise ShapeError("matrices must share one vocabulary")
    keys = list(dict.fromkeys(vocab.keys))
    key_col = {k: j for j, k in enumerate(keys)}
    # feature -> key indicator matrix
    agg = sparse.csr_matrix(
        (np.ones(len(vocab)), (np.arange(len(vocab)), [key_col[k] for k in vocab.keys])),
        shape=(len(vocab), len(keys)),
    )

    cities = []
    hits = defaultdict(lambda: np.zeros(len(keys)))
    totals = Counter()
    for m in matrices:
        per_key = (m.counts @ agg).toarray() > 0
        for i, city in enumerate(m.cities):
            if city not in totals:
                cities.append(city)
            totals[city] += 1
            hits[city] += per_key[i]
    percent = np.array([100.0 * hits[c] / totals[c] for c in cities]).reshape(len(cities), len(keys))
    colmax = percent.max(axis=0) if len(cities) else np.zeros(len(keys))
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = np.where(colmax > 0, percent / np.where(colmax > 0, colmax, 1.0), 0.0)
    return CoverageStats(cities, keys, percent, normalized)


def write_coverage(stats: CoverageStats, percent_path, normalized_path):
    for path, table in ((percent_path, stats.percent), (normalized_path, stats.normalized)):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["city", *stats.keys])
            for i, city in enumerate(stats.cities):
                w.writerow([city, *(fmt_float(x) for x in table[i])])


def write_feature_matrix(m: FeatureMatrix, path):
    dense = m.counts.toarray()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "city", *m.vocabulary.features])
        for region, city, row in zip(m.regions, m.cities, dense):
            w.writerow([region, city, *row.tolist()])


def read_feature_matrix(path) -> FeatureMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty feature matrix file") from None
        if header[:2] != ["region_id", "city"]:
            raise DataError(f"{path}: header must start with region_id,city")
        vocab = TagVocabulary(tuple(header[2:]))
        regions, cities, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            regions.append(rec[0])
            cities.append(rec[1])
            try:
                rows.append([int(x) for x in rec[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer count ({exc})") from exc
    counts = np.asarray(rows, dtype=np.int64).reshape(len(rows), len(vocab))
    return FeatureMatrix(regions, cities, sparse.csr_matrix(counts), vocab)


class TagCountVectorizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns the vocabulary, ``transform`` counts.

    ``X`` is a list of :class:`~hexembed.ingest.CityDataset`. The result of
    ``transform`` is one :class:`FeatureMatrix` over all cities.
    """

    def __init__(self, grid=None, tag_filter=None, vocabulary=None, drop_empty=True):
        self.grid = grid
        self.tag_filter = tag_filter
        self.vocabulary = vocabulary
        self.drop_empty = drop_empty

    def fit(self, X, y=None):
        self.vocabulary_ = build_vocabulary(list(X), self.tag_filter, self.vocabulary)
        return self

    def transform(self, X):
        if not hasattr(self, "vocabulary_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("TagCountVectorizer is not fitted yet")
        if self.grid is None:
            raise ConfigError("a grid provider is required")
        parts = []
        for ds in X:
            filtered = [e for e in (filter_tags(el, self.tag_filter) for el in ds.elements) if e is not None]
            ds_f = type(ds)(ds.city_name, ds.boundary, filtered)
            m = count_tags(ds_f, self.grid, self.vocabulary_)
            if m.shape[0]:
                parts.append(m)
        if not parts:
            raise EmptyMatrixError("no region received any element")
        m = concat_matrices(parts)
        return drop_empty_regions(m) if self.drop_empty else m
