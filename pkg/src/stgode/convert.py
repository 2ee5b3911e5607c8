"""Convert a locally downloaded PeMS-style archive into the CSV layout used here.

Nothing is downloaded.  The expected inputs are the layout most public copies
of PeMS04/PeMS08 use:

* ``<name>.npz`` holding ``data`` with shape ``(time, nodes, channels)``,
  channel 0 being flow (5-minute counts);
* ``<name>.csv`` with header ``from,to,cost`` where ``from``/``to`` are
  0-based node indices and ``cost`` is road distance.

Usage::

    python3 -m stgode.convert PEMS08.npz PEMS08.csv --out data/

writes ``data/series.csv`` (plus ``series_f<k>.csv`` for each extra channel
requested with ``--channel``) and ``data/edges.csv``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import click
import numpy as np

from stgode.data import ParseError, write_edges_csv, write_series_csv
from stgode.graph import RoadNetwork


def read_distance_csv(path, n_nodes: int) -> list[tuple[int, int, float]]:
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header[:2] != ["from", "to"] or len(header) < 3:
            raise ParseError(f"{path}:1: expected header from,to,cost")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, d = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise ParseError(f"{path}:{lineno}: node index out of range 0..{n_nodes - 1}")
            edges.append((i, j, d))
    return edges


def convert(npz_path, distance_path, out_dir, channels=(0,)) -> dict:
    data = np.load(npz_path)["data"]
    if data.ndim == 2:
        data = data[:, :, None]
    _, n_nodes, n_channels = data.shape
    if any(c >= n_channels for c in channels):
        raise ParseError(f"{npz_path}: has {n_channels} channels, asked for {list(channels)}")
    ids = [f"n{i}" for i in range(n_nodes)]
    seen, edges = set(), []
    for i, j, d in read_distance_csv(distance_path, n_nodes):
        key = (min(i, j), max(i, j))
        if i != j and key not in seen:  # edge lists often carry both directions
            seen.add(key)
            edges.append((i, j, d))
    out = Path(out_dir)
    files = []
    for k, c in enumerate(channels):
        path = out / ("series.csv" if k == 0 else f"series_f{c}.csv")
        write_series_csv(path, ids, data[:, :, c].astype(np.float64))
        files.append(str(path))
    write_edges_csv(out / "edges.csv", RoadNetwork(ids, edges))
    return {"series": files, "edges": str(out / "edges.csv"), "nodes": n_nodes, "steps": int(data.shape[0])}


@click.command()
@click.argument("npz_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("distance_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default="data", show_default=True)
@click.option("--channel", "channels", type=int, multiple=True, default=(0,), show_default=True,
              help="Channel(s) to export; the first becomes series.csv.")
def main(npz_path, distance_path, out_dir, channels):
    info = convert(npz_path, distance_path, out_dir, channels)
    click.echo(f"wrote {', '.join(info['series'])} and {info['edges']} ({info['steps']} steps x {info['nodes']} nodes)")


if __name__ == "__main__":
    main()
