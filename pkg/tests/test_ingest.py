import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon, box

from hexembed.exceptions import DataError, ParseError
from hexembed.ingest import (
    DEFAULT_DISCARDED,
    DEFAULT_KEYS,
    OsmElement,
    TagFilter,
    build_city_dataset,
    clip_to_boundary,
    dumps_element,
    filter_tags,
    load_boundary,
    parse_elements,
    read_elements,
)

SCHOOL = '{"id":1,"kind":"node","geometry":{"type":"Point","coordinates":[17.03,51.11]},"tags":{"amenity":"school"}}'


def _point(tags, x=0.5, y=0.5, eid=1):
    return OsmElement(eid, "node", {"type": "Point", "coordinates": [x, y]}, tags)


def test_default_keys_and_discarded_pairs():
    assert DEFAULT_KEYS == (
        "aeroway", "amenity", "building", "healthcare", "historic", "landuse", "leisure", "military",
        "natural", "office", "shop", "sport", "tourism", "water", "waterway",
    )
    assert DEFAULT_DISCARDED == {
        ("amenity", "waste_basket"), ("landuse", "grass"), ("historic", "tomb"),
        ("natural", "tree"), ("natural", "tree_row"), ("natural", "valley"),
    }


def test_single_record():
    res = parse_elements(SCHOOL + "\n")
    assert len(res) == 1 and res.skipped == 0
    el = res.elements[0]
    assert el.element_id == 1 and el.kind == "node" and el.tags == {"amenity": "school"}
    assert el.shape.equals(Point(17.03, 51.11))


def test_empty_tags_are_skipped_and_counted():
    rec = SCHOOL.replace('{"amenity":"school"}', "{}")
    res = parse_elements(rec + "\n")
    assert len(res) == 0 and res.skipped == 1


def test_lenient_mode_records_malformed_line():
    lines = [SCHOOL, '{"id":2,"kind":"node",broken', SCHOOL.replace('"id":1', '"id":3')]
    data = ("\n".join(lines) + "\n").encode()
    res = parse_elements(io.BytesIO(data))
    assert len(res) == 2 and len(res.errors) == 1
    err = res.errors[0]
    assert err.line == 2 and err.offset == len(lines[0]) + 1


def test_strict_mode_aborts():
    with pytest.raises(ParseError):
        parse_elements(SCHOOL + "\nnot json\n", strict=True)


def test_duplicate_ids_are_errors():
    res = parse_elements(SCHOOL + "\n" + SCHOOL + "\n")
    assert len(res) == 1 and len(res.errors) == 1


def test_round_trip_is_byte_exact(tmp_path):
    text = "\n".join([
        SCHOOL,
        '{"id":7,"kind":"way","geometry":{"type":"LineString","coordinates":[[0.5,1],[2,3.25]]},'
        '"tags":{"building":"yes","name":"Zażółć"}}',
    ]) + "\n"
    res = parse_elements(text)
    assert "".join(dumps_element(e) + "\n" for e in res) == text
    p = tmp_path / "e.jsonl"
    p.write_text(text, encoding="utf-8")
    assert [dumps_element(e) for e in read_elements(p)] == text.splitlines()


def test_osm_xml_adapter():
    xml = b"""<osm>
      <node id="1" lat="51.0" lon="17.0"><tag k="amenity" v="school"/></node>
      <node id="2" lat="51.0" lon="17.1"/>
      <node id="3" lat="51.1" lon="17.1"/>
      <way id="10"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="1"/><tag k="building" v="yes"/></way>
      <way id="11"><nd ref="2"/><nd ref="3"/><tag k="waterway" v="river"/></way>
      <relation id="20"><tag k="landuse" v="forest"/></relation>
    </osm>"""
    res = parse_elements(xml, format="osmxml")
    kinds = {(e.kind, e.element_id): e.shape.geom_type for e in res}
    assert kinds == {("node", 1): "Point", ("way", 10): "Polygon", ("way", 11): "LineString"}
    assert res.skipped == 3  # two untagged nodes and the relation


def test_filter_examples():
    assert filter_tags(_point({"building": "yes", "barrier": "fence"})).tags == {"building": "yes"}
    assert filter_tags(_point({"natural": "tree"})) is None
    el = _point({"amenity": "school"})
    assert filter_tags(el) is el


tag_maps = st.dictionaries(
    st.sampled_from(list(DEFAULT_KEYS) + ["barrier", "highway", "name"]),
    st.sampled_from(["yes", "tree", "grass", "school", "tomb", "forest", "valley"]),
    min_size=1,
)


@given(tag_maps)
def test_filter_is_idempotent_and_clean(tags):
    tf = TagFilter()
    once = filter_tags(_point(tags), tf)
    if once is None:
        return
    assert filter_tags(once, tf) == once
    for k, v in once.tags.items():
        assert k in tf.allowed_keys and (k, v) not in tf.discarded_pairs


def test_clip_to_boundary():
    boundary = box(0, 0, 1, 1)
    inside = _point({"a": "b"}, 0.5, 0.5, 1)
    outside = OsmElement(2, "way", box(2, 2, 3, 3).__geo_interface__, {"a": "b"})
    straddle = OsmElement(3, "way", box(0.5, 0.5, 1.5, 1.5).__geo_interface__, {"a": "b"})
    touching = OsmElement(4, "way", Polygon([(1, 0), (2, 0), (2, 1), (1, 1)]).__geo_interface__, {"a": "b"})
    kept = clip_to_boundary([inside, outside, straddle, touching], boundary)
    assert [e.element_id for e in kept] == [1, 3, 4]


def test_build_city_dataset_filters_and_clips():
    ds = build_city_dataset(
        "c", box(0, 0, 1, 1),
        [_point({"natural": "tree"}, eid=1), _point({"shop": "bakery"}, eid=2), _point({"shop": "x"}, 5, 5, 3)],
    )
    assert [e.element_id for e in ds.elements] == [2]


def test_load_boundary(tmp_path):
    p = tmp_path / "b.geojson"
    p.write_text(json.dumps({"type": "Feature", "properties": {"name": "Wro"},
                             "geometry": box(0, 0, 1, 1).__geo_interface__}))
    name, geom = load_boundary(p)
    assert name == "Wro" and geom.area == 1.0
    p.write_text(json.dumps({"type": "Feature", "properties": {}, "geometry": box(0, 0, 1, 1).__geo_interface__}))
    with pytest.raises(DataError):
        load_boundary(p)
