"""Reading OpenStreetMap elements, tag filtering and boundary clipping."""

from __future__ import annotations

import io
import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

from shapely import prepared
from shapely.geometry import shape

from .exceptions import DataError, InputDomainError, ParseError

log = logging.getLogger(__name__)

KINDS = ("node", "way", "relation")

DEFAULT_KEYS = (
    "aeroway",
    "amenity",
    "building",
    "healthcare",
    "historic",
    "landuse",
    "leisure",
    "military",
    "natural",
    "office",
    "shop",
    "sport",
    "tourism",
    "water",
    "waterway",
)

DEFAULT_DISCARDED = frozenset(
    {
        ("amenity", "waste_basket"),
        ("landuse", "grass"),
        ("historic", "tomb"),
        ("natural", "tree"),
        ("natural", "tree_row"),
        ("natural", "valley"),
    }
)


@dataclass(frozen=True)
class OsmElement:
    """One tagged OSM element; ``geometry`` is kept as its GeoJSON mapping."""

    element_id: int
    kind: str
    geometry: dict
    tags: dict

    @cached_property
    def shape(self):
        return shape(self.geometry)

    def with_tags(self, tags):
        return OsmElement(self.element_id, self.kind, self.geometry, dict(tags))

    def to_record(self) -> dict:
        return {"id": self.element_id, "kind": self.kind, "geometry": self.geometry, "tags": self.tags}


@dataclass(frozen=True)
class TagFilter:
    allowed_keys: tuple = DEFAULT_KEYS
    discarded_pairs: frozenset = DEFAULT_DISCARDED

    def __post_init__(self):
        object.__setattr__(self, "allowed_keys", tuple(dict.fromkeys(self.allowed_keys)))
        object.__setattr__(
            self, "discarded_pairs", frozenset(tuple(p) for p in self.discarded_pairs)
        )

    def keeps(self, key: str, value: str) -> bool:
        return key in self.allowed_keys and (key, value) not in self.discarded_pairs


@dataclass
class CityDataset:
    city_name: str
    boundary: object
    elements: list = field(default_factory=list)


@dataclass
class ParseResult:
    """Elements from one source plus the tallies of what was left out."""

    elements: list
    skipped: int = 0
    errors: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)


def parse_elements(source, format: str = "jsonl", strict: bool = False) -> ParseResult:
    """Parse a byte or text stream of OSM elements.

    ``format`` is ``"jsonl"`` (ElementsJSONL) or ``"osmxml"``. Elements
    without tags or geometry are skipped and counted. In lenient mode a
    malformed record is recorded in ``errors`` and parsing continues; in
    strict mode the first one raises :class:`ParseError`.
    """
    fmt = format.lower().replace("-", "").replace("_", "")
    if fmt in ("jsonl", "elementsjsonl"):
        return _parse_jsonl(source, strict)
    if fmt in ("osmxml", "xml", "osm"):
        return _parse_osm_xml(source, strict)
    raise InputDomainError(f"unknown element format: {format!r}")


def _lines(source) -> Iterator[tuple[int, int, str]]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        source = io.StringIO(source)
    offset = 0
    for lineno, raw in enumerate(source, start=1):
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        yield lineno, offset, text
        offset += len(raw) if isinstance(raw, (bytes, bytearray)) else len(raw.encode("utf-8"))


def _record_to_element(rec) -> OsmElement | None:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    kind = rec.get("kind")
    if kind not in KINDS:
        raise ValueError(f"bad element kind {kind!r}")
    element_id = rec.get("id")
    if not isinstance(element_id, int) or isinstance(element_id, bool):
        raise ValueError("element id must be an integer")
    tags = rec.get("tags") or {}
    if not isinstance(tags, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in tags.items()
    ):
        raise ValueError("tags must map strings to strings")
    geometry = rec.get("geometry")
    if not geometry or not tags:
        return None
    shape(geometry)  # validates the GeoJSON geometry
    return OsmElement(element_id, kind, geometry, tags)


def _parse_jsonl(source, strict) -> ParseResult:
    result = ParseResult([])
    seen = set()
    for lineno, offset, text in _lines(source):
        if not text.strip():
            continue
        try:
            el = _record_to_element(json.loads(text))
            if el is not None and (el.kind, el.element_id) in seen:
                raise ValueError(f"duplicate {el.kind} id {el.element_id}")
        except (ValueError, TypeError, AttributeError, KeyError) as exc:
            err = ParseError(f"malformed element record: {exc}", line=lineno, offset=offset)
            if strict:
                raise err from exc
            log.warning("%s", err)
            result.errors.append(err)
            continue
        if el is None:
            result.skipped += 1
            continue
        seen.add((el.kind, el.element_id))
        result.elements.append(el)
    return result


def _parse_osm_xml(source, strict) -> ParseResult:
    """Nodes become points, ways become lines (or polygons when closed).

    Relations need pre-resolved geometry, which OSM XML does not carry, so
    they are skipped.
    """
    if isinstance(source, (bytes, bytearray, str)):
        data = source.encode() if isinstance(source, str) else bytes(source)
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed OSM XML: {exc}", line=line, offset=col) from exc

    result = ParseResult([])
    coords = {}
    for node in root.iter("node"):
        try:
            coords[int(node.get("id"))] = (float(node.get("lon")), float(node.get("lat")))
        except (TypeError, ValueError) as exc:
            err = ParseError(f"bad node {node.get('id')!r}: {exc}")
            if strict:
                raise err from exc
            result.errors.append(err)

    def tags_of(el):
        return {t.get("k"): t.get("v") for t in el.findall("tag")}

    for el in root:
        tags = tags_of(el)
        if el.tag == "node":
            nid = int(el.get("id"))
            if nid not in coords:
                continue
            if not tags:
                result.skipped += 1
                continue
            geom = {"type": "Point", "coordinates": list(coords[nid])}
            result.elements.append(OsmElement(nid, "node", geom, tags))
        elif el.tag == "way":
            refs = [int(nd.get("ref")) for nd in el.findall("nd")]
            if not tags or any(r not in coords for r in refs) or len(refs) < 2:
                result.skipped += 1
                continue
            pts = [list(coords[r]) for r in refs]
            if refs[0] == refs[-1] and len(refs) >= 4:
                geom = {"type": "Polygon", "coordinates": [pts]}
            else:
                geom = {"type": "LineString", "coordinates": pts}
            result.elements.append(OsmElement(int(el.get("id")), "way", geom, tags))
        elif el.tag == "relation":
            result.skipped += 1
    return result


def dumps_element(el: OsmElement) -> str:
    """Canonical ElementsJSONL line (compact, key order id/kind/geometry/tags)."""
    return json.dumps(el.to_record(), separators=(",", ":"), ensure_ascii=False)


def write_elements(elements: Iterable[OsmElement], fh) -> int:
    n = 0
    for el in elements:
        fh.write(dumps_element(el) + "\n")
        n += 1
    return n


def read_elements(path, strict: bool = False) -> ParseResult:
    fmt = "osmxml" if str(path).endswith((".osm", ".xml")) else "jsonl"
    with open(path, "rb") as fh:
        return parse_elements(fh, fmt, strict=strict)


def filter_tags(element: OsmElement, tag_filter: TagFilter | None = None) -> OsmElement | None:
    """Keep only whitelisted tags; ``None`` when nothing survives."""
    tag_filter = tag_filter or TagFilter()
    kept = {k: v for k, v in element.tags.items() if tag_filter.keeps(k, v)}
    if not kept:
        return None
    if len(kept) == len(element.tags):
        return element
    return element.with_tags(kept)


def clip_to_boundary(elements: Iterable[OsmElement], boundary) -> list[OsmElement]:
    """Elements whose geometry intersects ``boundary`` (touching counts)."""
    prep = prepared.prep(boundary)
    return [el for el in elements if prep.intersects(el.shape)]


def load_boundary(path) -> tuple[str, object]:
    """Read a city boundary GeoJSON Feature; returns ``(name, geometry)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") == "FeatureCollection":
        if len(doc.get("features", [])) != 1:
            raise DataError(f"{path}: boundary file must hold exactly one feature")
        doc = doc["features"][0]
    if doc.get("type") != "Feature":
        raise DataError(f"{path}: boundary must be a GeoJSON Feature")
    geom = shape(doc["geometry"])
    if geom.geom_type not in ("Polygon", "MultiPolygon"):
        raise DataError(f"{path}: boundary geometry must be a Polygon or MultiPolygon")
    name = (doc.get("properties") or {}).get("name")
    if not name:
        raise DataError(f"{path}: boundary feature needs a 'name' property")
    return name, geom


def build_city_dataset(name, boundary, elements, tag_filter: TagFilter | None = None) -> CityDataset:
    kept = [el for el in (filter_tags(e, tag_filter) for e in elements) if el is not None]
    return CityDataset(name, boundary, clip_to_boundary(kept, boundary))


__all__ = [
    "DEFAULT_DISCARDED",
    "DEFAULT_KEYS",
    "CityDataset",
    "OsmElement",
    "ParseResult",
    "TagFilter",
    "build_city_dataset",
    "clip_to_boundary",
    "dumps_element",
    "filter_tags",
    "load_boundary",
    "parse_elements",
    "read_elements",
    "write_elements",
]
