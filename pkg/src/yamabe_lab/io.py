"""JSON container for grid fields.

Layout::

    {
      "format": "yamabe_lab.field/1",
      "dim": n,
      "points_per_axis": [N_1, ..., N_n],
      "periods": [P_1, ..., P_n],
      "rank": 0 | 1 | 2 | 3,
      "kind": "scalar" | "one_form" | "sym_tensor" | "metric" | "three_tensor",
      "components": [[i, j], ...],
      "data": [[...], ...]
    }

``data`` has one flat list per component.  Grid points are in row-major
order (the last axis varies fastest), i.e. ``values.reshape(-1)``.
Components are listed lexicographically: rank 1 by ``i``, rank 2 by
``(i, j)`` with ``i <= j`` (the lower triangle is implied by symmetry),
rank 3 by ``(a, b, c)`` over all index triples.  Indices are 0-based.
"""
from __future__ import annotations

import itertools
import json

import numpy as np

from .grid import (
    GeometryError, MetricField, OneFormField, PeriodicGrid, ScalarField, SymTensorField, ThreeTensorField,
)

FORMAT = "yamabe_lab.field/1"

_KINDS = {
    ScalarField: ("scalar", 0),
    OneFormField: ("one_form", 1),
    MetricField: ("metric", 2),
    SymTensorField: ("sym_tensor", 2),
    ThreeTensorField: ("three_tensor", 3),
}
_CLASSES = {kind: cls for cls, (kind, _) in _KINDS.items()}


def component_order(dim: int, rank: int) -> list[tuple[int, ...]]:
    if rank == 0:
        return [()]
    if rank == 1:
        return [(i,) for i in range(dim)]
    if rank == 2:
        return [(i, j) for i in range(dim) for j in range(i, dim)]
    if rank == 3:
        return list(itertools.product(range(dim), repeat=3))
    raise ValueError(f"unsupported rank {rank}")


def field_to_dict(f) -> dict:
    kind, rank = _KINDS[type(f)]
    grid = f.grid
    comps = component_order(grid.dim, rank)
    data = [f.values[(Ellipsis, *c)].reshape(-1).tolist() for c in comps]
    return {
        "format": FORMAT, "dim": grid.dim, "points_per_axis": list(grid.points),
        "periods": list(grid.periods), "rank": rank, "kind": kind,
        "components": [list(c) for c in comps], "data": data,
    }


def field_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise GeometryError(f"unknown field format {d.get('format')!r}")
    grid = PeriodicGrid(tuple(int(p) for p in d["points_per_axis"]), tuple(float(p) for p in d["periods"]))
    if grid.dim != d["dim"]:
        raise GeometryError("dim does not match points_per_axis")
    rank, kind = int(d["rank"]), d["kind"]
    comps = component_order(grid.dim, rank)
    if [tuple(c) for c in d["components"]] != comps or len(d["data"]) != len(comps):
        raise GeometryError("component list does not match the documented order")
    values = np.zeros(grid.points + (grid.dim,) * rank)
    for c, flat in zip(comps, d["data"]):
        arr = np.asarray(flat, dtype=float)
        if arr.size != int(np.prod(grid.points)):
            raise GeometryError(f"component {c} has {arr.size} values")
        values[(Ellipsis, *c)] = arr.reshape(grid.points)
        if rank == 2:
            values[(Ellipsis, c[1], c[0])] = values[(Ellipsis, *c)]
    return _CLASSES[kind](grid, values)


def save_field(f, path) -> None:
    with open(path, "w") as fh:
        json.dump(field_to_dict(f), fh)


def load_field(path):
    with open(path) as fh:
        return field_from_dict(json.load(fh))
