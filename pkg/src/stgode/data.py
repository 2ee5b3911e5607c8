"""CSV ingestion and export: node series, road edge lists, dense matrices."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from stgode.errors import ValidationError
from stgode.graph import RoadNetwork
from stgode.model import atomic_write_bytes


class ParseError(ValidationError):
    """Malformed input file; the message carries the path and line number."""


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as f:
        return list(csv.reader(f))


def read_series_csv(path) -> tuple[list[str], np.ndarray]:
    """Header of node ids, then one row of flow values per time step -> ``(ids, (time, nodes))``."""
    rows = _read_rows(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise ParseError(f"{path}:1: header must list unique, non-empty node ids")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} values, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{path}:{lineno}: non-finite value")
        data.append(vals)
    if not data:
        raise ParseError(f"{path}: no data rows")
    return header, np.asarray(data, dtype=np.float64)


def read_feature_series(paths) -> tuple[list[str], np.ndarray]:
    """Read one or more aligned series files -> ``(ids, (time, nodes, features))``."""
    paths = list(paths)
    ids, first = read_series_csv(paths[0])
    stack = [first]
    for p in paths[1:]:
        other_ids, arr = read_series_csv(p)
        if other_ids != ids:
            raise ParseError(f"{p}: node ids differ from {paths[0]}")
        if arr.shape != first.shape:
            raise ParseError(f"{p}: {arr.shape[0]} rows, but {paths[0]} has {first.shape[0]}")
        stack.append(arr)
    return ids, np.stack(stack, axis=-1)


def write_series_csv(path, node_ids, series: np.ndarray):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(node_ids)
    for row in series:
        w.writerow([repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_edges_csv(path, node_ids) -> RoadNetwork:
    """``from,to,distance`` rows keyed by node id; unknown ids are parse errors."""
    rows = _read_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["from", "to", "distance"]:
        raise ParseError(f"{path}:1: header must be 'from,to,distance'")
    index = {n: i for i, n in enumerate(node_ids)}
    edges = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        a, b, d = (c.strip() for c in row)
        if a not in index or b not in index:
            raise ParseError(f"{path}:{lineno}: unknown node id {a if a not in index else b!r}")
        try:
            dist = float(d)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad distance {d!r}") from None
        if not math.isfinite(dist) or dist < 0:
            raise ParseError(f"{path}:{lineno}: distance must be finite and non-negative")
        key = (index[a], index[b])
        if key in seen:
            raise ParseError(f"{path}:{lineno}: duplicate edge {a} -> {b}")
        seen.add(key)
        edges.append((key[0], key[1], dist))
    return RoadNetwork(node_ids=node_ids, edges=edges)


def write_edges_csv(path, net: RoadNetwork):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["from", "to", "distance"])
    for i, j, d in net.edges:
        w.writerow([net.node_ids[i], net.node_ids[j], repr(d)])
    atomic_write_text(path, buf.getvalue())


def write_matrix_csv(path, m: np.ndarray):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(m):
        w.writerow([repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_matrix_csv(path) -> np.ndarray:
    rows = [r for r in _read_rows(path) if r]
    try:
        m = np.asarray([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParseError(f"{path}: expected a square matrix, got shape {m.shape}")
    return m


def write_csv_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
