"""Planted-structure synthetic cities with known region types.

Each archetype is a set of Poisson tag rates. Archetypes occupy contiguous
hexagonal blobs on a rectangular patch of the synthetic grid, so ring-1
neighbourhoods are label-homogeneous away from blob borders.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from shapely.geometry import mapping
from shapely.ops import unary_union
from sklearn.metrics import adjusted_rand_score, roc_auc_score

from .analysis import cut, ward_cluster
from .exceptions import ConfigError, ShapeError
from .featurize import FeatureMatrix, TagVocabulary
from .grid import SyntheticGrid
from .ingest import OsmElement, dumps_element
from .model import neighbor_probability


@dataclass(frozen=True)
class Archetype:
    name: str
    rates: dict

    def __post_init__(self):
        if any(r < 0 for r in self.rates.values()):
            raise ConfigError(f"archetype {self.name}: rates must be >= 0")
        if not any(r > 0 for r in self.rates.values()):
            raise ConfigError(f"archetype {self.name}: needs at least one positive rate")

    def __add__(self, other):
        rates = dict(self.rates)
        for k, v in other.rates.items():
            rates[k] = rates.get(k, 0.0) + v
        return Archetype(f"{self.name}+{other.name}", rates)


# Stand-ins for land-use types; disjoint signature tags plus a little shared noise.
DEFAULT_ARCHETYPES = (
    Archetype("forest", {"landuse_forest": 6, "natural_wood": 4, "leisure_nature_reserve": 2, "building_yes": 0.2}),
    Archetype("meadow", {"landuse_meadow": 6, "natural_grassland": 4, "natural_scrub": 2, "building_yes": 0.2}),
    Archetype("river", {"waterway_river": 5, "natural_water": 5, "water_river": 3, "leisure_park": 0.3}),
    Archetype("airport", {"aeroway_taxiway": 6, "aeroway_apron": 3, "aeroway_runway": 2, "building_hangar": 2}),
    Archetype("industrial", {"landuse_industrial": 5, "building_industrial": 6, "building_warehouse": 3, "office_company": 0.3}),
    Archetype("residential", {"building_house": 8, "landuse_residential": 4, "building_garage": 2, "building_yes": 1}),
    Archetype("downtown", {"shop_clothes": 5, "amenity_restaurant": 5, "office_company": 4, "building_yes": 2}),
    Archetype("park", {"leisure_park": 5, "leisure_playground": 3, "amenity_bench": 4, "landuse_grass_field": 0.5}),
    Archetype("sports", {"leisure_pitch": 6, "sport_soccer": 4, "leisure_sports_centre": 2, "sport_tennis": 2}),
    Archetype("heritage", {"historic_memorial": 5, "tourism_attraction": 4, "historic_monument": 3, "tourism_museum": 1}),
)


@dataclass
class PlantedCity:
    name: str
    grid: SyntheticGrid
    extent: tuple
    regions: list
    labels: np.ndarray
    archetypes: tuple
    matrix: FeatureMatrix
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def label_of(self):
        return dict(zip(self.regions, self.labels.tolist()))


def rect_patch(grid: SyntheticGrid, rows: int, cols: int, origin=(0, 0)) -> list:
    """Cells of an offset-rectangle patch, row-major."""
    q0, r0 = origin
    return [grid.cell_id(q0 + c - (r // 2), r0 + r) for r in range(rows) for c in range(cols)]


def voronoi_layout(grid, cells, centers):
    """Assign each cell the blob of its nearest center (hex distance; ties to lower index)."""
    out = []
    for cell in cells:
        d = [grid.distance(cell, c) for c in centers]
        out.append(int(np.argmin(d)))
    return out


def grid_centers(grid, rows, cols, n_rows, n_cols, origin=(0, 0)):
    """``n_rows x n_cols`` evenly spaced blob centers inside the patch."""
    q0, r0 = origin
    centers = []
    for i in range(n_rows):
        r = int((i + 0.5) * rows / n_rows)
        for j in range(n_cols):
            c = int((j + 0.5) * cols / n_cols)
            centers.append(grid.cell_id(q0 + c - (r // 2), r0 + r))
    return centers


def generate_planted_city(archetypes, layout, extent=(30, 40), seed=0, name="planted",
                          grid=None, origin=(0, 0), vocabulary=None) -> PlantedCity:
    """Poisson tag counts per region drawn from the archetype of its blob.

    ``layout`` is either a list of ``(center_cell, archetype_index)`` blobs
    (cells join their nearest center) or a list with one archetype index per
    patch cell. All-zero draws are redrawn once, then forced to 1 on the
    archetype's highest-rate feature.
    """
    archetypes = tuple(archetypes)
    if not archetypes:
        raise ConfigError("at least one archetype is required")
    grid = grid or SyntheticGrid()
    rows, cols = extent
    cells = rect_patch(grid, rows, cols, origin)
    layout = list(layout)
    if layout and isinstance(layout[0], tuple):
        blob = voronoi_layout(grid, cells, [c for c, _ in layout])
        labels = np.array([layout[b][1] for b in blob], dtype=np.int64)
    else:
        if len(layout) != len(cells):
            raise ShapeError(f"layout has {len(layout)} entries for {len(cells)} cells")
        labels = np.asarray(layout, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= len(archetypes):
        raise ConfigError("layout references an unknown archetype")

    if vocabulary is None:
        vocabulary = TagVocabulary(tuple(sorted({f for a in archetypes for f in a.rates})))
    col = vocabulary.index
    rate_mat = np.zeros((len(archetypes), len(vocabulary)))
    for a, arch in enumerate(archetypes):
        for f, r in arch.rates.items():
            rate_mat[a, col[f]] = r

    rng = np.random.default_rng(seed)
    counts = rng.poisson(rate_mat[labels])
    empty = np.flatnonzero(counts.sum(axis=1) == 0)
    if empty.size:
        counts[empty] = rng.poisson(rate_mat[labels[empty]])
        still = empty[counts[empty].sum(axis=1) == 0]
        for i in still:
            counts[i, int(np.argmax(rate_mat[labels[i]]))] = 1

    matrix = FeatureMatrix(cells, [name] * len(cells), sparse.csr_matrix(counts.astype(np.int64)), vocabulary)
    return PlantedCity(name, grid, (rows, cols), cells, labels, archetypes, matrix, seed)


def planted_benchmark(seed=0, extent=(30, 40), archetypes=DEFAULT_ARCHETYPES, mix=None,
                      name="planted", origin=(0, 0)) -> PlantedCity:
    """Default benchmark: one blob per archetype on an even grid of centers.

    ``mix=(i, j)`` adds one more blob whose archetype is the sum of
    archetypes ``i`` and ``j`` (for composition tests), placed between them.
    """
    archetypes = tuple(archetypes)
    grid = SyntheticGrid()
    rows, cols = extent
    n = len(archetypes)
    n_rows = 2 if n > 3 else 1
    n_cols = -(-n // n_rows)
    centers = grid_centers(grid, rows, cols, n_rows, n_cols, origin)[:n]
    blobs = [(c, a) for a, c in enumerate(centers)]
    if mix is not None:
        i, j = mix
        archetypes = archetypes + (archetypes[i] + archetypes[j],)
        mid = grid.xy_to_cell(*(np.add(grid.cell_center(centers[i]), grid.cell_center(centers[j])) / 2))
        blobs.append((mid, len(archetypes) - 1))
    return generate_planted_city(archetypes, blobs, extent, seed, name, grid, origin)


def composition_benchmark(seed=0, extent=(24, 24), name="composed") -> PlantedCity:
    """Six blobs: X (built-up), Y (water), X+Y, and three filler types.

    The X+Y blob borders both X and Y so its neighbourhood carries both
    signals, like a built-up waterfront between a downtown and a coast.
    """
    x = DEFAULT_ARCHETYPES[6]  # downtown
    y = DEFAULT_ARCHETYPES[2]  # river
    other = (DEFAULT_ARCHETYPES[0], DEFAULT_ARCHETYPES[3], DEFAULT_ARCHETYPES[8])
    archetypes = (x, y, x + y, *other)
    grid = SyntheticGrid()
    rows, cols = extent
    # X | X+Y | Y band across the middle, fillers above and below
    centers = [
        (rows // 2, cols // 6, 0),
        (rows // 2, cols // 2, 2),
        (rows // 2, 5 * cols // 6, 1),
        (rows // 8, cols // 4, 3),
        (rows // 8, 3 * cols // 4, 4),
        (7 * rows // 8, cols // 2, 5),
    ]
    blobs = [(grid.cell_id(c - (r // 2), r), a) for r, c, a in centers]
    return generate_planted_city(archetypes, blobs, extent, seed, name, grid)


def neighbor_pairs(regions, grid, n_pairs, seed=0, exclusion_radius=2):
    """Balanced random (positive, negative) row pairs for a region set.

    Positives are adjacent regions; negatives lie outside the exclusion disk.
    Returns ``(a_rows, b_rows, is_neighbor)``.
    """
    rng = np.random.default_rng(seed)
    row = {r: i for i, r in enumerate(regions)}
    adj = [(i, row[c]) for i, r in enumerate(regions) for c in sorted(grid.ring(r, 1)) if c in row]
    if not adj:
        raise ConfigError("no adjacent regions to evaluate on")
    pos = [adj[k] for k in rng.integers(len(adj), size=n_pairs)]
    neg = []
    n = len(regions)
    while len(neg) < n_pairs:
        a, b = (int(v) for v in rng.integers(n, size=2))
        if regions[b] not in grid.k_ring(regions[a], exclusion_radius):
            neg.append((a, b))
    pairs = pos + neg
    y = np.r_[np.ones(len(pos), dtype=int), np.zeros(len(neg), dtype=int)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]), y


def neighbor_auc(vectors, regions, grid, n_pairs=2000, seed=0) -> float:
    vectors = np.asarray(vectors, dtype=np.float64)
    a, b, y = neighbor_pairs(regions, grid, n_pairs, seed)
    p = neighbor_probability((vectors[a] * vectors[b]).sum(axis=1))
    return float(roc_auc_score(y, p))


def evaluate_recovery(embeddings, truth, k, grid=None, n_pairs=2000, seed=0) -> dict:
    """ARI of the Ward cut at ``k`` against ``truth``, and neighbour AUC.

    AUC needs ``grid`` and region ids (an EmbeddingMatrix); it is omitted
    otherwise.
    """
    vectors = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    truth = np.asarray(truth)
    if vectors.shape[0] != truth.shape[0]:
        raise ShapeError(f"{vectors.shape[0]} embedding rows but {truth.shape[0]} labels")
    labels = cut(ward_cluster(vectors), k).labels
    out = {"ari": float(adjusted_rand_score(truth, labels))}
    if grid is not None and hasattr(embeddings, "regions"):
        out["auc"] = neighbor_auc(vectors, embeddings.regions, grid, n_pairs, seed)
    return out


def smoothed(values, window=3) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.r_[0.0, v])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# -- fixtures ------------------------------------------------------------------

def city_elements(city: PlantedCity, first_id=1):
    """One point element per unit count, at the centre of its region."""
    dense = city.matrix.dense()
    feats = city.matrix.vocabulary.features
    keys = city.matrix.vocabulary.keys
    eid = first_id
    for region, row in zip(city.regions, dense):
        x, y = city.grid.cell_center(region)
        geom = {"type": "Point", "coordinates": [x, y]}
        for j in np.flatnonzero(row):
            value = feats[j][len(keys[j]) + 1 :]
            for _ in range(int(row[j])):
                yield OsmElement(eid, "node", geom, {keys[j]: value})
                eid += 1


def city_boundary(city: PlantedCity):
    return unary_union([city.grid.cell_boundary(r) for r in city.regions])


def write_fixture(cities, directory) -> dict:
    """Write elements, boundaries and ground truth for planted cities.

    Returns the paths, keyed by city name, plus the truth file.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {}
    next_id = 1
    truth_path = os.path.join(directory, "truth.csv")
    with open(truth_path, "w", encoding="utf-8", newline="") as tfh:
        tw = csv.writer(tfh, lineterminator="\n")
        tw.writerow(["region_id", "city", "label", "archetype"])
        for city in cities:
            el_path = os.path.join(directory, f"{city.name}.jsonl")
            with open(el_path, "w", encoding="utf-8", newline="\n") as fh:
                for el in city_elements(city, next_id):
                    fh.write(dumps_element(el) + "\n")
                    next_id = el.element_id + 1
            b_path = os.path.join(directory, f"{city.name}.boundary.geojson")
            feature = {"type": "Feature", "properties": {"name": city.name},
                       "geometry": mapping(city_boundary(city))}
            with open(b_path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(feature, fh)
                fh.write("\n")
            for r, l in zip(city.regions, city.labels):
                tw.writerow([r, city.name, int(l), city.archetypes[l].name])
            paths[city.name] = {"elements": el_path, "boundary": b_path,
                                "shape": list(city.matrix.shape)}
    paths["truth"] = truth_path
    return paths
