import json
import math
import random
from pathlib import Path

import pytest

from viscritic.errors import PreviewError
from viscritic.preview import (
    build_csv_preview,
    build_geojson_preview,
    build_illustration,
    build_preview,
    round_stat,
)

GOLDEN = Path(__file__).parent / "golden" / "illustration.golden.txt"


def csv_bytes(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    return ("\n".join(lines) + "\n").encode()


def column(preview, name):
    for entry in preview:
        if entry["column"] == name:
            return entry["properties"]
    raise AssertionError(f"no column {name}")


def two_pass_std(values):
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def test_category_column_two_values():
    data = csv_bytes(["sex"], [["female"], ["male"], ["female"], ["male"]])
    props = column(build_csv_preview(data), "sex")
    assert props == {
        "dtype": "category",
        "samples": ["female", "male"],
        "num_unique_values": 2,
    }


def test_category_samples_are_first_three_distinct():
    rows = [["professor"], ["lecture"], ["assistant professor"], ["associate professor"], ["professor"]]
    props = column(build_csv_preview(csv_bytes(["rank"], rows)), "rank")
    assert props["dtype"] == "category"
    assert props["samples"] == ["professor", "lecture", "assistant professor"]
    assert props["num_unique_values"] == 4


def test_degenerate_numeric_column():
    props = column(build_csv_preview(csv_bytes(["x"], [[1]])), "x")
    assert props == {
        "dtype": "number",
        "std": 0,
        "min": 1,
        "max": 1,
        "samples": [1],
        "num_unique_values": 1,
    }


def test_numeric_property_key_order():
    props = column(build_csv_preview(csv_bytes(["salary"], [[778], [9684], [2545]])), "salary")
    assert list(props) == ["dtype", "std", "min", "max", "samples", "num_unique_values"]


def test_numeric_stats_match_two_pass_oracle():
    rng = random.Random(20260816)
    for trial in range(50):
        n = rng.randint(4, 15)
        values = [round(rng.uniform(-80, 80), 3) for _ in range(n)]
        props = column(build_csv_preview(csv_bytes(["v"], [[v] for v in values])), "v")
        assert props["std"] == round_stat(two_pass_std(values)), values
        assert props["min"] == round_stat(min(values))
        assert props["max"] == round_stat(max(values))
        assert props["num_unique_values"] == len(set(values))


def test_thousand_row_column_matches_oracle():
    rng = random.Random(7)
    values = [round(rng.uniform(-5000, 5000), 2) for _ in range(1000)]
    props = column(build_csv_preview(csv_bytes(["v"], [[v] for v in values])), "v")
    assert props["std"] == round_stat(two_pass_std(values))
    assert props["min"] == round_stat(min(values))
    assert props["max"] == round_stat(max(values))
    assert props["num_unique_values"] == len(set(values))


def test_population_not_sample_std():
    # ddof=1 would give 1.0 here; population std is sqrt(2/3)
    values = [1, 2, 3]
    props = column(build_csv_preview(csv_bytes(["v"], [[v] for v in values])), "v")
    assert props["std"] == 0.8


def test_rounding_magnitude_rule():
    props = column(build_csv_preview(csv_bytes(["v"], [[123.46], [777.72]])), "v")
    assert props["min"] == 123 and props["max"] == 778
    assert props["samples"] == [123, 778]
    small = column(build_csv_preview(csv_bytes(["v"], [[1.23], [4.56]])), "v")
    assert small["min"] == 1.2 and small["max"] == 4.6


def test_integral_floats_collapse_to_int():
    props = column(build_csv_preview(csv_bytes(["v"], [[2.0], [3.0]])), "v")
    assert props["samples"] == [2, 3]
    assert isinstance(props["min"], int) and props["min"] == 2


def test_numbers_beat_category_rule():
    rows = [[i] for i in range(5)]
    props = column(build_csv_preview(csv_bytes(["v"], rows)), "v")
    assert props["dtype"] == "number"


def test_date_column():
    rows = [["2020-01-01"], ["2020-02-15"], ["2021-12-31T08:30:00"], ["2022-06-01Z" .replace("Z", "")]]
    props = column(build_csv_preview(csv_bytes(["when"], rows)), "when")
    assert props["dtype"] == "date"
    assert props["samples"] == ["2020-01-01", "2020-02-15", "2021-12-31T08:30:00"]


def test_distinct_ratio_category():
    # 30 distinct values exceed the count cap but sit under the 5% ratio
    rows = [[f"id{i % 30}"] for i in range(1000)]
    props = column(build_csv_preview(csv_bytes(["tag"], rows)), "tag")
    assert props["dtype"] == "category"


def test_high_cardinality_strings():
    rows = [[f"id{i}"] for i in range(30)]
    props = column(build_csv_preview(csv_bytes(["tag"], rows)), "tag")
    assert props["dtype"] == "string"
    assert len(props["samples"]) == 3


def test_blank_cells_ignored():
    data = b"v\n\n5\n\n7\n"
    props = column(build_csv_preview(data), "v")
    assert props["dtype"] == "number"
    assert props["min"] == 5 and props["max"] == 7


def test_underscored_token_is_not_a_number():
    props = column(build_csv_preview(csv_bytes(["v"], [["1_000"], ["2_000"]])), "v")
    assert props["dtype"] == "category"


def test_all_blank_column_is_string():
    props = column(build_csv_preview(b"v,w\n,1\n,2\n"), "v")
    assert props == {"dtype": "string", "samples": [], "num_unique_values": 0}


def test_csv_errors():
    with pytest.raises(PreviewError):
        build_csv_preview(b"\xff\xfe broken")
    with pytest.raises(PreviewError):
        build_csv_preview(b"")
    with pytest.raises(PreviewError):
        build_csv_preview(b"\n\n")


GEO = {
    "type": "FeatureCollection",
    "features": [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [-73.9, 40.7]},
            "properties": {"name": "New York", "population": 8804190, "area": 783.8},
        },
        {
            "type": "Feature",
            "geometry": {
                "type": "Polygon",
                "coordinates": [[[-118.7, 33.7], [-118.1, 33.7], [-118.1, 34.3], [-118.7, 33.7]]],
            },
            "properties": {"name": "Los Angeles", "population": 3898747, "area": 1302},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [-87.6, 41.8]},
            "properties": {"name": "Chicago", "population": 2746388, "area": 606.1},
        },
    ],
}


def geo_bytes(doc=None):
    return json.dumps(doc or GEO).encode()


def test_geojson_schema_keys_exact():
    preview = build_geojson_preview(geo_bytes())
    assert list(preview) == [
        "type",
        "feature_count",
        "geometry_types",
        "property_fields",
        "feature_samples",
        "bbox",
        "coordinate_stats",
        "file_size_kb",
    ]
    assert list(preview["coordinate_stats"]["lat"]) == ["min", "max", "mean"]


def test_geojson_content():
    data = geo_bytes()
    preview = build_geojson_preview(data)
    assert preview["type"] == "FeatureCollection"
    assert preview["feature_count"] == 3
    assert preview["geometry_types"] == ["Point", "Polygon"]
    assert preview["property_fields"] == ["name", "population", "area"]
    sample = preview["feature_samples"][0]
    assert sample == {
        "type": "Feature",
        "geometry_type": "Point",
        "properties": {"name": "New York", "population": 8804190, "area": 783.8},
    }
    assert preview["file_size_kb"] == round(len(data) / 1024, 1)


def test_geojson_coordinate_stats_oracle():
    preview = build_geojson_preview(geo_bytes())
    lngs = [-73.9, -118.7, -118.1, -118.1, -118.7, -87.6]
    lats = [40.7, 33.7, 33.7, 34.3, 33.7, 41.8]
    stats = preview["coordinate_stats"]
    assert stats["lng"]["min"] == round_stat(min(lngs))
    assert stats["lng"]["max"] == round_stat(max(lngs))
    assert stats["lng"]["mean"] == round_stat(sum(lngs) / len(lngs))
    assert stats["lat"]["mean"] == round_stat(sum(lats) / len(lats))
    assert preview["bbox"] == [round_stat(min(lngs)), round_stat(min(lats)), round_stat(max(lngs)), round_stat(max(lats))]


def test_geojson_samples_capped_at_three():
    doc = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "geometry": {"type": "Point", "coordinates": [i, i]}, "properties": {"i": i}}
            for i in range(5)
        ],
    }
    preview = build_geojson_preview(geo_bytes(doc))
    assert preview["feature_count"] == 5
    assert len(preview["feature_samples"]) == 3


def test_geojson_provided_bbox_wins():
    doc = dict(GEO)
    doc["bbox"] = [-180, -90, 180, 90]
    preview = build_geojson_preview(geo_bytes(doc))
    assert preview["bbox"] == [-180, -90, 180, 90]


def test_geojson_bare_feature_and_geometry():
    feature = GEO["features"][0]
    preview = build_geojson_preview(geo_bytes(feature))
    assert preview["type"] == "Feature"
    assert preview["feature_count"] == 1
    geometry = {"type": "Point", "coordinates": [10.0, 20.0]}
    preview = build_geojson_preview(geo_bytes(geometry))
    assert preview["geometry_types"] == ["Point"]
    assert preview["coordinate_stats"]["lat"]["mean"] == 20


def test_geojson_without_coordinates():
    doc = {"type": "FeatureCollection", "features": []}
    preview = build_geojson_preview(geo_bytes(doc))
    assert preview["feature_count"] == 0
    assert preview["bbox"] is None
    assert preview["coordinate_stats"] == {"lat": None, "lng": None}


def test_geojson_errors():
    with pytest.raises(PreviewError):
        build_geojson_preview(b"not json")
    with pytest.raises(PreviewError):
        build_geojson_preview(b"[1, 2]")
    with pytest.raises(PreviewError):
        build_geojson_preview(json.dumps({"type": "FeatureCollection"}).encode())


def test_binary_stub():
    preview = build_preview("png_image", b"\x89PNG" + b"\x00" * 2044)
    assert preview == {"type": "binary resource", "file_type": "png_image", "file_size_kb": 2.0}
    assert build_preview("json_topojson", b"{}")["type"] == "binary resource"


def bundle_fixture():
    csv_data = csv_bytes(["sex", "salary"], [["female", 778], ["male", 9684], ["female", 2545]])
    geo_data = geo_bytes()
    png_data = b"\x89PNG fake image bytes" * 40
    files = [
        {"file_name": "salaries.csv", "file_type": "csv_table", "description": "Faculty salaries by sex."},
        {"file_name": "cities.geojson", "file_type": "json_geojson", "description": "City locations."},
        {"file_name": "legend.png", "file_type": "png_image", "description": "Legend sprite."},
    ]
    previews = [
        {"file_name": "salaries.csv", "preview": build_preview("csv_table", csv_data)},
        {"file_name": "cities.geojson", "preview": build_preview("json_geojson", geo_data)},
        {"file_name": "legend.png", "preview": build_preview("png_image", png_data)},
    ]
    return files, previews


def test_illustration_empty_bundle():
    assert build_illustration([], []) == "# Data Illustration\n"


def test_illustration_contains_columns_verbatim():
    files, previews = bundle_fixture()
    text = build_illustration(files[:1], previews[:1])
    assert '"column": "sex"' in text
    assert '"column": "salary"' in text
    assert "## salaries.csv (csv_table)" in text
    assert "Description: Faculty salaries by sex." in text


def test_illustration_deterministic():
    files, previews = bundle_fixture()
    assert build_illustration(files, previews) == build_illustration(files, previews)


def test_illustration_golden():
    files, previews = bundle_fixture()
    assert build_illustration(files, previews) == GOLDEN.read_text()
