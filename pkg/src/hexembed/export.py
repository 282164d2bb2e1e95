"""GeoJSON export of cluster assignments and query results."""

from __future__ import annotations

from ._io import dumps


def _feature(region, grid, properties):
    poly = grid.cell_boundary(region)
    ring = [[float(x), float(y)] for x, y in poly.exterior.coords]
    return {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": properties}


def _collection(features):
    return {"type": "FeatureCollection", "features": features}


def assignment_geojson(regions, cities, labels, grid) -> dict:
    return _collection([
        _feature(r, grid, {"region_id": r, "city": c, "label": int(l)})
        for r, c, l in zip(regions, cities, labels)
    ])


def query_geojson(result, grid) -> dict:
    """One polygon per hit; ``score`` is the similarity under cosine, else the distance."""
    feats = []
    for h in result.hits:
        score = h["similarity"] if "similarity" in h else h["distance"]
        feats.append(_feature(h["region_id"], grid, {"region_id": h["region_id"], "city": h["city"],
                                                     "rank": int(h["rank"]), "score": float(score)}))
    return _collection(feats)


def path_geojson(path, grid) -> dict:
    """Interpolation path: endpoints and intermediates in order, ``rank`` is the step."""
    return _collection([
        _feature(p["region_id"], grid, {"region_id": p["region_id"], "city": p["city"], "rank": int(p["step"]),
                                        "score": float(p["distance"]), "t": float(p["t"])})
        for p in path
    ])


def write_geojson(path, doc: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc) + "\n")
