"""Hexagonal tessellations behind one provider interface.

Region ids are plain strings so they hash, sort and serialize without
ceremony: lowercase hexadecimal H3 indexes, or ``"s:q,r"`` for cells of the
synthetic axial grid. Geometries are shapely objects in ``(x, y)`` order,
which for H3 means ``(lon, lat)`` as in GeoJSON.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections import deque

import h3
from shapely import prepared
from shapely.geometry import MultiPoint, Point, Polygon
from shapely.geometry.polygon import orient

from .exceptions import InputDomainError

SQRT3 = math.sqrt(3.0)
DEFAULT_RESOLUTION = 9


class GridProvider(ABC):
    """Common interface of the H3 and synthetic grids."""

    kind: str

    @abstractmethod
    def point_to_cell(self, point) -> str:
        """Cell containing ``point`` given in the provider's native order."""

    @abstractmethod
    def xy_to_cell(self, x: float, y: float) -> str:
        """Cell containing the geometry-space point ``(x, y)``."""

    @abstractmethod
    def cell_boundary(self, cell: str) -> Polygon:
        ...

    @abstractmethod
    def cell_center(self, cell: str) -> tuple[float, float]:
        ...

    @abstractmethod
    def k_ring(self, cell: str, k: int) -> set[str]:
        ...

    @abstractmethod
    def validate(self, cell: str) -> None:
        ...

    def ring(self, cell: str, k: int) -> set[str]:
        _check_k(k)
        if k == 0:
            return {cell}
        return self.k_ring(cell, k) - self.k_ring(cell, k - 1)

    def neighbors(self, cell: str) -> set[str]:
        return self.ring(cell, 1)

    def polygon_to_cells(self, geom) -> set[str]:
        """Every cell whose hexagon intersects ``geom`` (touching included).

        Points map to their containing cell only. Other geometries are
        flood-filled from the cells of their vertices; the intersecting set of
        each connected part is edge-connected in a hexagonal tiling, so the
        flood reaches all of it. Seed cells are always expanded: a vertex
        lying on a cell edge may fail the float-level touch test against the
        cell that contains it while touching its neighbour.
        """
        if geom is None or geom.is_empty:
            return set()
        if isinstance(geom, Point):
            return {self.xy_to_cell(geom.x, geom.y)}
        if isinstance(geom, MultiPoint):
            return {self.xy_to_cell(p.x, p.y) for p in geom.geoms}

        target = prepared.prep(geom)
        seeds = {self.xy_to_cell(x, y) for x, y in _vertices(geom)}
        found = set()
        seen = set(seeds)
        queue = deque(sorted(seeds))
        while queue:
            cell = queue.popleft()
            if target.intersects(self.cell_boundary(cell)):
                found.add(cell)
            elif cell not in seeds:
                continue
            for nb in sorted(self.neighbors(cell)):
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return found


def _check_k(k):
    if int(k) != k or k < 0:
        raise InputDomainError(f"ring radius must be a non-negative integer, got {k}")


def _vertices(geom):
    if hasattr(geom, "geoms"):
        for part in geom.geoms:
            yield from _vertices(part)
    elif isinstance(geom, Polygon):
        yield from geom.exterior.coords
        for hole in geom.interiors:
            yield from hole.coords
    else:
        yield from geom.coords


class SyntheticGrid(GridProvider):
    """Pointy-top axial hexagonal grid on the plane.

    Cell ``(q, r)`` is centered at ``edge * (sqrt(3) * (q + r / 2), 1.5 * r)``.
    """

    kind = "synthetic"

    def __init__(self, edge: float = 1.0, grid_id: str = "default"):
        if edge <= 0:
            raise InputDomainError("edge length must be positive")
        self.edge = float(edge)
        self.grid_id = grid_id

    def __repr__(self):
        return f"SyntheticGrid(edge={self.edge!r}, grid_id={self.grid_id!r})"

    def __eq__(self, other):
        return (
            isinstance(other, SyntheticGrid)
            and other.edge == self.edge
            and other.grid_id == self.grid_id
        )

    def __hash__(self):
        return hash((self.kind, self.edge, self.grid_id))

    @staticmethod
    def cell_id(q: int, r: int) -> str:
        return f"s:{int(q)},{int(r)}"

    @staticmethod
    def axial(cell: str) -> tuple[int, int]:
        if not isinstance(cell, str) or not cell.startswith("s:"):
            raise InputDomainError(f"not a synthetic cell id: {cell!r}")
        try:
            q, r = cell[2:].split(",")
            return int(q), int(r)
        except ValueError:
            raise InputDomainError(f"not a synthetic cell id: {cell!r}") from None

    def validate(self, cell):
        self.axial(cell)

    def point_to_cell(self, point):
        x, y = point
        return self.xy_to_cell(x, y)

    def xy_to_cell(self, x, y):
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InputDomainError(f"non-finite point ({x}, {y})")
        fq = (SQRT3 / 3.0 * x - y / 3.0) / self.edge
        fr = (2.0 / 3.0 * y) / self.edge
        return self.cell_id(*_cube_round(fq, fr))

    # Vertices and centers sit on a lattice with steps (sqrt(3)/2, 1/2) * edge.
    # Scaling integer lattice indices makes vertices shared by neighbouring
    # cells bit-identical, so touching cells really touch.
    _VERTEX_STEPS = ((1, 1), (0, 2), (-1, 1), (-1, -1), (0, -2), (1, -1))  # 30 + 60i degrees

    def cell_center(self, cell):
        q, r = self.axial(cell)
        return (2 * q + r) * (SQRT3 / 2.0 * self.edge), 3 * r * (0.5 * self.edge)

    def cell_boundary(self, cell):
        q, r = self.axial(cell)
        sx, sy = SQRT3 / 2.0 * self.edge, 0.5 * self.edge
        return Polygon([((2 * q + r + a) * sx, (3 * r + b) * sy) for a, b in self._VERTEX_STEPS])

    def k_ring(self, cell, k):
        _check_k(k)
        q0, r0 = self.axial(cell)
        out = set()
        for dq in range(-k, k + 1):
            for dr in range(max(-k, -dq - k), min(k, -dq + k) + 1):
                out.add(self.cell_id(q0 + dq, r0 + dr))
        return out

    def distance(self, a: str, b: str) -> int:
        qa, ra = self.axial(a)
        qb, rb = self.axial(b)
        dq, dr = qa - qb, ra - rb
        return (abs(dq) + abs(dr) + abs(dq + dr)) // 2

    def patch(self, rows: int, cols: int, origin=(0, 0)) -> list[str]:
        """Cells of a ``rows x cols`` parallelogram patch, row-major."""
        q0, r0 = origin
        return [self.cell_id(q0 + c, r0 + r) for r in range(rows) for c in range(cols)]


def _cube_round(fq, fr):
    fs = -fq - fr
    q, r, s = round(fq), round(fr), round(fs)
    dq, dr, ds = abs(q - fq), abs(r - fr), abs(s - fs)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return int(q), int(r)


class H3Grid(GridProvider):
    """Uber H3 cells at one fixed resolution (wraps the ``h3`` package)."""

    kind = "h3"

    def __init__(self, resolution: int = DEFAULT_RESOLUTION):
        if int(resolution) != resolution or not 0 <= resolution <= 15:
            raise InputDomainError(f"H3 resolution must be in [0, 15], got {resolution}")
        self.resolution = int(resolution)

    def __repr__(self):
        return f"H3Grid(resolution={self.resolution})"

    def __eq__(self, other):
        return isinstance(other, H3Grid) and other.resolution == self.resolution

    def __hash__(self):
        return hash((self.kind, self.resolution))

    def validate(self, cell):
        if not isinstance(cell, str) or not h3.is_valid_cell(cell):
            raise InputDomainError(f"invalid H3 cell: {cell!r}")
        if h3.get_resolution(cell) != self.resolution:
            raise InputDomainError(
                f"cell {cell} has resolution {h3.get_resolution(cell)}, "
                f"grid uses {self.resolution}"
            )

    def point_to_cell(self, point):
        lat, lon = point
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise InputDomainError(f"coordinates out of range: lat={lat}, lon={lon}")
        return h3.latlng_to_cell(lat, lon, self.resolution)

    def xy_to_cell(self, x, y):
        return self.point_to_cell((y, x))

    def cell_center(self, cell):
        lat, lon = h3.cell_to_latlng(cell)
        return lon, lat

    def cell_boundary(self, cell):
        self.validate(cell)
        ring = [(lon, lat) for lat, lon in h3.cell_to_boundary(cell)]
        return orient(Polygon(ring), sign=1.0)

    def k_ring(self, cell, k):
        _check_k(k)
        self.validate(cell)
        return set(h3.grid_disk(cell, k))

    def cell_area_m2(self, cell: str) -> float:
        return h3.cell_area(cell, unit="m^2")


def make_grid(kind: str = "h3", resolution: int = DEFAULT_RESOLUTION, edge: float = 1.0) -> GridProvider:
    if kind == "h3":
        return H3Grid(resolution)
    if kind == "synthetic":
        return SyntheticGrid(edge=edge)
    raise InputDomainError(f"unknown grid provider: {kind!r}")


def grid_for_ids(cells, resolution: int | None = None) -> GridProvider:
    """Guess the provider from serialized ids (``s:`` prefix means synthetic)."""
    cells = list(cells)
    if cells and all(c.startswith("s:") for c in cells):
        return SyntheticGrid()
    if resolution is None:
        resolution = h3.get_resolution(cells[0]) if cells else DEFAULT_RESOLUTION
    return H3Grid(resolution)
