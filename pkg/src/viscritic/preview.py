"""Standardized previews for exported data files.

A preview is a compact JSON-able summary of one data file:

- csv_table: a list of per-column entries
  {"column": name, "properties": {...}} where numeric columns carry
  dtype/std/min/max/samples/num_unique_values and all other columns carry
  dtype/samples/num_unique_values.
- json_geojson: a single object with exactly eight keys: type,
  feature_count, geometry_types, property_fields, feature_samples, bbox,
  coordinate_stats, file_size_kb.
- everything else (images, topojson): a "binary resource" stub.

Column dtype inference, in order: every non-blank cell parses as a finite
number -> number; every cell is an ISO-like date -> date; at most 20
distinct values or a distinct ratio of at most 5% -> category; otherwise
string. Blank cells are ignored for typing, stats, and samples.

Statistics are population statistics (no degrees-of-freedom correction).
Numbers round to whole integers at magnitude >= 100 and to one decimal
below that; integral results collapse to plain ints. file_size_kb always
keeps one decimal.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import statistics
from datetime import datetime

from .errors import PreviewError

MAX_SAMPLES = 3
CATEGORY_MAX_DISTINCT = 20
CATEGORY_MAX_RATIO = 0.05

_DATE_PREFIX_RE = re.compile(r"\d{4}-\d{2}-\d{2}")


def round_stat(value: float):
    """Round a statistic: integers at |x| >= 100, one decimal below."""
    if abs(value) >= 100:
        return int(round(value))
    rounded = round(value, 1)
    if rounded == int(rounded):
        return int(rounded)
    return rounded


def file_size_kb(num_bytes: int) -> float:
    return float(round(num_bytes / 1024, 1))


def _is_iso_date(cell: str) -> bool:
    if not _DATE_PREFIX_RE.match(cell):
        return False
    probe = cell[:-1] + "+00:00" if cell.endswith("Z") else cell
    try:
        datetime.fromisoformat(probe)
        return True
    except ValueError:
        return False


def _parse_numbers(cells: list[str]):
    """All cells as finite floats, or None if any cell is not a number."""
    values = []
    for cell in cells:
        if "_" in cell:
            return None
        try:
            value = float(cell)
        except ValueError:
            return None
        if not math.isfinite(value):
            return None
        values.append(value)
    return values


def _ordered_distinct(values):
    seen = set()
    out = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def column_properties(cells: list[str]) -> dict:
    """Property dict for one column; cells are non-blank strings."""
    numbers = _parse_numbers(cells) if cells else None
    if numbers is not None:
        distinct = _ordered_distinct(numbers)
        return {
            "dtype": "number",
            "std": round_stat(statistics.pstdev(numbers)),
            "min": round_stat(min(numbers)),
            "max": round_stat(max(numbers)),
            "samples": [round_stat(v) for v in distinct[:MAX_SAMPLES]],
            "num_unique_values": len(distinct),
        }
    distinct = _ordered_distinct(cells)
    dtype = "string"
    if cells and all(_is_iso_date(c) for c in cells):
        dtype = "date"
    elif cells and (
        len(distinct) <= CATEGORY_MAX_DISTINCT
        or len(distinct) <= CATEGORY_MAX_RATIO * len(cells)
    ):
        dtype = "category"
    return {
        "dtype": dtype,
        "samples": distinct[:MAX_SAMPLES],
        "num_unique_values": len(distinct),
    }


def build_csv_preview(data: bytes) -> list[dict]:
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise PreviewError("csv table is not utf-8 text") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise PreviewError("csv table has no header row")
    header = rows[0]
    columns = []
    for idx, name in enumerate(header):
        cells = [row[idx].strip() for row in rows[1:] if idx < len(row)]
        cells = [c for c in cells if c != ""]
        columns.append({"column": name, "properties": column_properties(cells)})
    return columns


def _walk_coordinates(node, out: list) -> None:
    if not isinstance(node, list) or not node:
        return
    if (
        len(node) >= 2
        and isinstance(node[0], (int, float))
        and isinstance(node[1], (int, float))
    ):
        out.append((float(node[0]), float(node[1])))
        return
    for child in node:
        _walk_coordinates(child, out)


def _collect_positions(geometry, out: list) -> None:
    if not isinstance(geometry, dict):
        return
    if geometry.get("type") == "GeometryCollection":
        for sub in geometry.get("geometries") or []:
            _collect_positions(sub, out)
        return
    _walk_coordinates(geometry.get("coordinates"), out)


def build_geojson_preview(data: bytes) -> dict:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PreviewError("geojson file is not valid json") from exc
    if not isinstance(doc, dict) or not doc.get("type"):
        raise PreviewError("geojson document must be an object with a type")
    if doc["type"] == "FeatureCollection":
        features = doc.get("features")
        if not isinstance(features, list):
            raise PreviewError("FeatureCollection without a features list")
    elif doc["type"] == "Feature":
        features = [doc]
    else:
        # bare geometry
        features = [{"type": "Feature", "geometry": doc, "properties": {}}]

    geometry_types: list[str] = []
    property_fields: list[str] = []
    positions: list[tuple[float, float]] = []
    samples: list[dict] = []
    for feature in features:
        if not isinstance(feature, dict):
            raise PreviewError("feature entries must be objects")
        geometry = feature.get("geometry") or {}
        gtype = geometry.get("type") if isinstance(geometry, dict) else None
        if gtype and gtype not in geometry_types:
            geometry_types.append(gtype)
        props = feature.get("properties") or {}
        for key in props:
            if key not in property_fields:
                property_fields.append(key)
        _collect_positions(geometry, positions)
        if len(samples) < MAX_SAMPLES:
            samples.append(
                {"type": "Feature", "geometry_type": gtype, "properties": props}
            )

    lngs = [p[0] for p in positions]
    lats = [p[1] for p in positions]
    bbox = doc.get("bbox")
    if bbox is None and positions:
        bbox = [min(lngs), min(lats), max(lngs), max(lats)]
    if bbox is not None:
        bbox = [round_stat(float(v)) for v in bbox]

    def axis(values):
        return {
            "min": round_stat(min(values)),
            "max": round_stat(max(values)),
            "mean": round_stat(statistics.fmean(values)),
        }

    stats = (
        {"lat": axis(lats), "lng": axis(lngs)}
        if positions
        else {"lat": None, "lng": None}
    )
    return {
        "type": doc["type"],
        "feature_count": len(features),
        "geometry_types": geometry_types,
        "property_fields": property_fields,
        "feature_samples": samples,
        "bbox": bbox,
        "coordinate_stats": stats,
        "file_size_kb": file_size_kb(len(data)),
    }


def binary_stub(file_type: str, data: bytes) -> dict:
    return {
        "type": "binary resource",
        "file_type": file_type,
        "file_size_kb": file_size_kb(len(data)),
    }


def build_preview(file_type: str, data: bytes):
    if file_type == "csv_table":
        return build_csv_preview(data)
    if file_type == "json_geojson":
        return build_geojson_preview(data)
    return binary_stub(file_type, data)


def build_illustration(files: list[dict], previews: list[dict]) -> str:
    """Deterministic text block bound into generation prompts.

    files: [{file_name, file_type, description}], previews: [{file_name,
    preview}]. Files render in list order.
    """
    by_name = {p["file_name"]: p["preview"] for p in previews}
    lines = ["# Data Illustration", ""]
    for f in files:
        lines.append(f"## {f['file_name']} ({f['file_type']})")
        description = f.get("description") or ""
        if description:
            lines.append(f"Description: {description}")
        lines.append("Preview:")
        lines.append(json.dumps(by_name[f["file_name"]], indent=4))
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"
