"""Distances, Ward clustering, nearest-neighbour queries and vector arithmetic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._io import fmt_float, write_json
from .exceptions import DataError, InputDomainError, QueryError, ShapeError, UndefinedMeasureError

METRICS = ("cosine", "euclidean")


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"vectors differ in shape: {x.shape} vs {y.shape}")
    return x, y


def euclidean_distance(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.linalg.norm(x - y))


def cosine_distance(x, y) -> float:
    """``1 - x.y / (|x||y|)``; undefined (raises) for a zero vector."""
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise UndefinedMeasureError("cosine distance is undefined for a zero vector")
    sim = float((x / nx) @ (y / ny))
    return 1.0 - min(1.0, max(-1.0, sim))


# -- Ward clustering ---------------------------------------------------------

@dataclass
class Dendrogram:
    """Merge list in the scipy convention.

    Leaves are ``0..n-1`` in row order; the cluster formed at step ``i`` gets
    id ``n + i``. Each merge is ``(cluster_a, cluster_b, distance, new_size)``
    with ``cluster_a < cluster_b``.
    """

    merges: list
    n_leaves: int
    regions: list | None = None

    def __len__(self):
        return len(self.merges)

    @property
    def distances(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def as_linkage(self) -> np.ndarray:
        return np.array([[a, b, d, s] for a, b, d, s in self.merges], dtype=np.float64).reshape(-1, 4)


def ward_cluster(embeddings) -> Dendrogram:
    """Agglomerative clustering with Ward linkage (Euclidean).

    Squared inter-cluster distances follow the Lance-Williams update
    ``d(i+j, k)^2 = ((n_i+n_k) d(i,k)^2 + (n_j+n_k) d(j,k)^2 - n_k d(i,j)^2) / (n_i+n_j+n_k)``;
    the reported merge distance is ``d(i, j)``. Ties go to the smallest
    ``(cluster_a, cluster_b)`` id pair.
    """
    regions = getattr(embeddings, "regions", None)
    x = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("embeddings must be a 2-D array")
    n = x.shape[0]
    if n < 2:
        raise InputDomainError("Ward clustering needs at least 2 regions")

    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    # exact pairwise values; the Gram shortcut above loses digits
    for i in range(n):
        diff = x[i + 1 :] - x[i]
        d2[i, i + 1 :] = (diff * diff).sum(axis=1)
    d2 = np.triu(d2, 1)
    d2 = d2 + d2.T
    np.fill_diagonal(d2, np.inf)

    ids = np.arange(n)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    row_arg = d2.argmin(axis=1)
    row_min = d2[np.arange(n), row_arg]
    merges = []
    for step in range(n - 1):
        best = row_min.min()
        pairs = []
        for r in np.flatnonzero(row_min == best):
            for c in np.flatnonzero(d2[r] == best):
                pairs.append((min(ids[r], ids[c]), max(ids[r], ids[c]), min(r, c), max(r, c)))
        _, _, i, j = min(pairs)
        ni, nj = size[i], size[j]
        merges.append((int(min(ids[i], ids[j])), int(max(ids[i], ids[j])),
                       float(np.sqrt(max(best, 0.0))), int(ni + nj)))

        new = ((ni + size) * d2[i] + (nj + size) * d2[j] - size * best) / (ni + nj + size)
        new[~active] = np.inf
        new[i] = new[j] = np.inf
        d2[i, :] = new
        d2[:, i] = new
        d2[j, :] = np.inf
        d2[:, j] = np.inf
        active[j] = False
        size[i] = ni + nj
        ids[i] = n + step

        row_min[j] = np.inf
        stale = active & ((row_arg == i) | (row_arg == j))
        stale[i] = True
        lower = active & ~stale & (new < row_min)
        row_min[lower] = new[lower]
        row_arg[lower] = i
        for r in np.flatnonzero(stale):
            row_arg[r] = d2[r].argmin()
            row_min[r] = d2[r, row_arg[r]]
    return Dendrogram(merges, n, list(regions) if regions is not None else None)


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray
    regions: list | None = None

    def as_dict(self) -> dict:
        keys = self.regions if self.regions is not None else range(len(self.labels))
        return {r: int(l) for r, l in zip(keys, self.labels)}


def cut(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the last ``k - 1`` merges; labels follow first-leaf order."""
    n = dendrogram.n_leaves
    if int(k) != k or not 1 <= k <= n:
        raise InputDomainError(f"k must be an integer in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for step, (a, b, _, _) in enumerate(dendrogram.merges[: n - k]):
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = [find(leaf) for leaf in range(n)]
    relabel = {}
    labels = np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)
    return ClusterAssignment(int(k), labels, dendrogram.regions)


class WardClustering(ClusterMixin, BaseEstimator):
    """Ward dendrogram with a fixed cut, as a scikit-learn clusterer."""

    def __init__(self, n_clusters=10):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        self.dendrogram_ = ward_cluster(X)
        self.labels_ = cut(self.dendrogram_, self.n_clusters).labels
        return self


# -- queries -----------------------------------------------------------------

@dataclass
class QueryResult:
    query: dict
    hits: list = field(default_factory=list)
    metric: str = "cosine"

    def region_ids(self):
        return [h["region_id"] for h in self.hits]

    def to_dict(self):
        return {"query": self.query, "metric": self.metric, "hits": self.hits}


def _distances(query, vectors, metric):
    if metric == "euclidean":
        return np.linalg.norm(vectors - query, axis=1), np.ones(len(vectors), dtype=bool)
    if metric == "cosine":
        qn = np.linalg.norm(query)
        if qn == 0:
            raise UndefinedMeasureError("cosine query with a zero vector")
        norms = np.linalg.norm(vectors, axis=1)
        ok = norms > 0
        sims = np.zeros(len(vectors))
        sims[ok] = (vectors[ok] / norms[ok, None]) @ (query / qn)
        return 1.0 - np.clip(sims, -1.0, 1.0), ok
    raise InputDomainError(f"metric must be one of {METRICS}")


def nearest(query, embeddings, metric: str = "cosine", exclude=(), top_n: int = 5,
            cities=None, description: dict | None = None) -> QueryResult:
    """Exhaustive ranking of regions by ascending distance to ``query``.

    Rows in ``exclude`` are skipped, as are zero vectors under the cosine
    metric. Equal distances are ordered by region id.
    """
    if top_n < 1:
        raise InputDomainError("top_n must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (embeddings.dim,):
        raise ShapeError(f"query has shape {q.shape}, embeddings have dimension {embeddings.dim}")
    dist, ok = _distances(q, embeddings.vectors, metric)
    excluded = set(exclude)
    wanted = None if cities is None else set([cities] if isinstance(cities, str) else cities)
    pool = np.array(
        [
            ok[i] and r not in excluded and (wanted is None or embeddings.cities[i] in wanted)
            for i, r in enumerate(embeddings.regions)
        ],
        dtype=bool,
    )
    rows = np.flatnonzero(pool)
    if rows.size == 0:
        raise QueryError("no candidate regions left to search")
    names = np.array([embeddings.regions[i] for i in rows])
    order = rows[np.lexsort((names, dist[rows]))][:top_n]
    hits = []
    for rank, i in enumerate(order, start=1):
        hit = {"rank": rank, "region_id": embeddings.regions[i], "city": embeddings.cities[i],
               "distance": float(dist[i])}
        if metric == "cosine":
            hit["similarity"] = 1.0 - float(dist[i])
        hits.append(hit)
    desc = dict(description or {"type": "vector"})
    return QueryResult(desc, hits, metric)


def nearest_to_region(region, embeddings, metric="cosine", top_n=5, exclude_self=True, cities=None):
    v = embeddings.vector(region)
    exclude = {region} if exclude_self else set()
    return nearest(v, embeddings, metric, exclude, top_n, cities,
                   {"type": "nearest", "region_id": region, "exclude_self": exclude_self})


def arithmetic_query(op: str, region_a, region_b, embeddings, exclude_inputs: bool = True,
                     top_n: int = 5, cities=None) -> QueryResult:
    """``v_a + v_b`` or ``v_a - v_b``, then a cosine nearest-neighbour search."""
    va, vb = embeddings.vector(region_a), embeddings.vector(region_b)
    if op == "add":
        v = va + vb
    elif op == "sub":
        v = va - vb
    else:
        raise InputDomainError(f"op must be 'add' or 'sub', got {op!r}")
    exclude = {region_a, region_b} if exclude_inputs else set()
    desc = {"type": op, "region_a": region_a, "region_b": region_b, "exclude_inputs": exclude_inputs}
    return nearest(v, embeddings, "cosine", exclude, top_n, cities, desc)


def interpolate(v_a, v_b, n_intermediate: int = 5) -> list:
    """Points ``v_a + t (v_b - v_a)`` at ``t = i / (n + 1)``, endpoints excluded."""
    v_a, v_b = _pair(v_a, v_b)
    if int(n_intermediate) != n_intermediate or n_intermediate < 1:
        raise InputDomainError("n_intermediate must be a positive integer")
    m = n_intermediate + 1
    return [v_a + (i / m) * (v_b - v_a) for i in range(1, m)]


def interpolation_path(region_a, region_b, embeddings, steps: int = 5, metric: str = "cosine", cities=None):
    """Endpoints plus the nearest region to each intermediate vector.

    Returns ``steps + 2`` entries ``{"step", "t", "region_id", "city", "distance"}``.
    """
    va, vb = embeddings.vector(region_a), embeddings.vector(region_b)
    rows = embeddings.row_index()
    path = [{"step": 0, "t": 0.0, "region_id": region_a, "city": embeddings.cities[rows[region_a]],
             "distance": 0.0}]
    for i, v in enumerate(interpolate(va, vb, steps), start=1):
        hit = nearest(v, embeddings, metric, (), 1, cities).hits[0]
        path.append({"step": i, "t": i / (steps + 1), "region_id": hit["region_id"],
                     "city": hit["city"], "distance": hit["distance"]})
    path.append({"step": steps + 1, "t": 1.0, "region_id": region_b,
                 "city": embeddings.cities[rows[region_b]], "distance": 0.0})
    return path


# -- files -------------------------------------------------------------------

def write_dendrogram(path, dendrogram: Dendrogram):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "cluster_a", "cluster_b", "distance", "new_size"])
        for step, (a, b, d, s) in enumerate(dendrogram.merges):
            w.writerow([step, a, b, fmt_float(d), s])


def read_dendrogram(path, regions=None) -> Dendrogram:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        merges = [(int(r["cluster_a"]), int(r["cluster_b"]), float(r["distance"]), int(r["new_size"]))
                  for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed dendrogram file ({exc})") from exc
    return Dendrogram(merges, len(merges) + 1, regions)


def write_assignment(path, assignment: ClusterAssignment, cities):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "city", "label"])
        for r, c, l in zip(assignment.regions, cities, assignment.labels):
            w.writerow([r, c, int(l)])


def read_assignment(path):
    """Returns ``(regions, cities, labels)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["region_id"] for r in rows], [r["city"] for r in rows], [int(r["label"]) for r in rows]


def write_query(path, result: QueryResult):
    write_json(path, result.to_dict())
