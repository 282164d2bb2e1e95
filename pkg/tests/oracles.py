"""Independent reference implementations used by the tests.

These are deliberately naive: loops over every candidate, recomputation
from scratch at every step. They share no code paths with the package
beyond the grid geometry they are checking against.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
from shapely.geometry import Point


def count_oracle(elements, cells, grid, vocab, boundary=None):
    """Loop over (region, element, tag) triples with direct geometry tests.

    A point counts in the hexagon that contains it; anything else counts in
    every hexagon it intersects. Returns ``{region: {feature: count}}`` with
    empty regions and regions outside ``boundary`` dropped.
    """
    vocab = set(vocab)
    out = defaultdict(lambda: defaultdict(int))
    for cell in cells:
        hexagon = grid.cell_boundary(cell)
        if boundary is not None and not hexagon.intersects(boundary):
            continue
        for el in elements:
            geom = el.shape
            if isinstance(geom, Point):
                hit = hexagon.covers(geom)
            else:
                hit = hexagon.intersects(geom)
            if not hit:
                continue
            for k, v in el.tags.items():
                f = f"{k}_{v}"
                if f in vocab:
                    out[cell][f] += 1
    return {c: dict(row) for c, row in out.items() if row}


def matrix_as_dict(m):
    dense = m.dense()
    feats = m.vocabulary.features
    return {
        r: {feats[j]: int(dense[i, j]) for j in np.flatnonzero(dense[i])}
        for i, r in enumerate(m.regions)
    }


def naive_ward(points):
    """Ward merges by recomputing every pairwise merge cost at every step.

    Cost of merging clusters A and B is ``|A||B|/(|A|+|B|) * ||mean_A - mean_B||^2``;
    the reported height is ``sqrt(2 * cost)``. Ties go to the smallest
    ``(id_a, id_b)``. Leaf ids are ``0..n-1``; merge ``s`` creates id ``n+s``.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    clusters = {i: [i] for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        ids = sorted(clusters)
        for ii, a in enumerate(ids):
            for b in ids[ii + 1:]:
                pa, pb = x[clusters[a]], x[clusters[b]]
                na, nb = len(pa), len(pb)
                diff = pa.mean(axis=0) - pb.mean(axis=0)
                cost = na * nb / (na + nb) * float(diff @ diff)
                if best is None or cost < best[0]:
                    best = (cost, a, b)
        cost, a, b = best
        members = clusters.pop(a) + clusters.pop(b)
        clusters[n + step] = members
        merges.append((a, b, math.sqrt(2.0 * cost), len(members)))
    return merges


def forward_oracle(layers, x, activation, transform="raw"):
    """Step-by-step forward pass with explicit loops over units."""
    h = [math.log1p(v) if transform == "log1p" else float(v) for v in x]
    for li, (w, b) in enumerate(layers):
        out = []
        for i in range(w.shape[0]):
            z = b[i]
            for j in range(w.shape[1]):
                z += w[i, j] * h[j]
            if li < len(layers) - 1:
                z = max(z, 0.0) if activation == "relu" else math.tanh(z)
            out.append(z)
        h = out
    return np.array(h)


def fd_gradient(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    grads = []
    for w, b in params.layers:
        for arr in (w, b):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                up = loss_fn(params)
                arr[idx] = old - h
                down = loss_fn(params)
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def gradients_agree(analytic, numeric, rel=1e-4, abs_=1e-7):
    """Entry-wise: absolute error within ``abs_`` or relative error within ``rel``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        ok = (err <= abs_) | (err <= rel * scale)
        if not ok.all():
            return False, float(np.max(err[~ok]))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return True, worst
