"""Positive context pairs and negative samples for skip-gram training."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .exceptions import ConfigError, SamplingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    negatives_per_pair: int = 1
    exclusion_radius: int = 2
    rng_seed: int = 0
    same_city: bool = True

    def __post_init__(self):
        if self.negatives_per_pair < 1:
            raise ConfigError("negatives_per_pair must be >= 1")
        if self.exclusion_radius < 1:
            raise ConfigError("exclusion_radius must be >= 1")


class TrainingTriple(NamedTuple):
    target: str
    context: str
    negative: str


def contexts(target, dataset_regions, grid) -> set:
    """Ring-1 neighbours of ``target`` that are present in the dataset."""
    return grid.ring(target, 1) & set(dataset_regions)


def sample_negative(target, city_regions, grid, cfg: SamplerConfig, rng: np.random.Generator):
    """Uniform draw from ``city_regions`` outside the exclusion disk of ``target``."""
    excluded = grid.k_ring(target, cfg.exclusion_radius)
    candidates = sorted(set(city_regions) - excluded)
    if not candidates:
        raise SamplingError(target)
    return candidates[int(rng.integers(len(candidates)))]


class PairIndex:
    """Row-index view of a feature matrix for fast triple generation.

    Holds the positive pairs in canonical order (targets by row, contexts by
    row) and, per target, the rows that may not be drawn as negatives.
    """

    def __init__(self, regions, cities, grid, cfg: SamplerConfig):
        self.regions = list(regions)
        n = len(self.regions)
        row = {r: i for i, r in enumerate(self.regions)}

        t_idx, c_idx = [], []
        ex_rows, ex_cols = [], []
        for i, region in enumerate(self.regions):
            nbs = sorted(row[c] for c in grid.ring(region, 1) if c in row)
            t_idx += [i] * len(nbs)
            c_idx += nbs
            excl = [row[c] for c in grid.k_ring(region, cfg.exclusion_radius) if c in row]
            ex_rows += [i] * len(excl)
            ex_cols += excl
        self.pair_target = np.asarray(t_idx, dtype=np.int64)
        self.pair_context = np.asarray(c_idx, dtype=np.int64)
        self.excluded = sparse.csr_matrix(
            (np.ones(len(ex_rows), dtype=bool), (ex_rows, ex_cols)), shape=(n, n)
        )

        if cfg.same_city:
            labels, self.group = np.unique(np.asarray(list(cities), dtype=object), return_inverse=True)
        else:
            self.group = np.zeros(n, dtype=np.int64)
            labels = [None]
        self.group_rows = [np.flatnonzero(self.group == g) for g in range(len(labels))]
        group_size = np.array([len(self.group_rows[g]) for g in self.group], dtype=np.int64)
        # excluded rows that fall inside the target's own pool
        ex_rows = np.asarray(ex_rows, dtype=np.int64)
        ex_cols = np.asarray(ex_cols, dtype=np.int64)
        same = self.group[ex_cols] == self.group[ex_rows]
        self.n_candidates = group_size - np.bincount(ex_rows[same], minlength=n)

    @classmethod
    def from_matrix(cls, matrix, grid, cfg: SamplerConfig):
        return cls(matrix.regions, matrix.cities, grid, cfg)

    @property
    def n_pairs(self):
        return len(self.pair_target)

    def candidates(self, target_row: int) -> np.ndarray:
        pool = self.group_rows[self.group[target_row]]
        return pool[~np.asarray(self.excluded[target_row, pool].todense()).ravel()]

    def draw_negatives(self, targets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One uniform negative per entry of ``targets`` (all must have candidates).

        Rejection sampling over the city pool, in vectorized rounds; targets
        whose pool is mostly excluded are drawn from the explicit list.
        """
        out = np.empty(len(targets), dtype=np.int64)
        if not len(targets):
            return out
        groups = self.group[targets]
        sizes = np.array([len(p) for p in self.group_rows])[groups]
        dense_pool = self.n_candidates[targets] >= 0.25 * sizes

        explicit = np.flatnonzero(~dense_pool)
        for j in explicit:
            cands = self.candidates(targets[j])
            out[j] = cands[int(rng.integers(len(cands)))]

        pending = np.flatnonzero(dense_pool)
        while pending.size:
            g = groups[pending]
            pos = rng.integers(0, sizes[pending])
            picks = np.array([self.group_rows[gg][p] for gg, p in zip(g, pos)], dtype=np.int64)
            bad = np.asarray(self.excluded[targets[pending], picks]).ravel().astype(bool)
            out[pending[~bad]] = picks[~bad]
            pending = pending[bad]
        return out


@dataclass
class TripleStream:
    """One epoch of triples as row indices into the feature matrix."""

    target: np.ndarray
    context: np.ndarray
    negative: np.ndarray
    regions: list
    pairs: int
    skips: int

    def __len__(self):
        return len(self.target)

    def __iter__(self):
        r = self.regions
        for t, c, n in zip(self.target, self.context, self.negative):
            yield TrainingTriple(r[t], r[c], r[n])

    def batches(self, batch_size: int):
        for start in range(0, len(self), batch_size):
            sl = slice(start, start + batch_size)
            yield self.target[sl], self.context[sl], self.negative[sl]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target", "context", "negative"])
            w.writerows(self)


def epoch_stream(matrix, grid, cfg: SamplerConfig, rng: np.random.Generator | None = None,
                 index: PairIndex | None = None) -> TripleStream:
    """Shuffled positive pairs, each with ``negatives_per_pair`` fresh negatives.

    Pairs whose target has no negative candidate are skipped and counted.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if index is None:
        index = PairIndex.from_matrix(matrix, grid, cfg)
    if index.n_pairs == 0:
        log.warning("no adjacent regions in the dataset; the triple stream is empty")
        empty = np.empty(0, dtype=np.int64)
        return TripleStream(empty, empty, empty, index.regions, 0, 0)

    order = rng.permutation(index.n_pairs)
    t = index.pair_target[order]
    c = index.pair_context[order]
    ok = index.n_candidates[t] > 0
    skips = int((~ok).sum())
    if skips:
        for row in np.unique(t[~ok]):
            log.warning("%s", SamplingError(index.regions[row]))
    t, c = t[ok], c[ok]
    k = cfg.negatives_per_pair
    t = np.repeat(t, k)
    c = np.repeat(c, k)
    n = index.draw_negatives(t, rng)
    return TripleStream(t, c, n, index.regions, pairs=int(ok.sum()), skips=skips)
