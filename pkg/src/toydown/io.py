"""CSV readers and writers for counts, adjacency, and election returns.

counts:     ``unit_path,type,count``; unit_path is ``root/.../leaf``. Rows for
            internal units are optional and must agree with their leaves.
adjacency:  ``unit_a,unit_b`` naming leaves by full path or by unique last segment.
election:   ``precinct_id,group_vap,other_vap,votes_cast,candidate_votes``.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IngestionError
from .er import PrecinctRecord
from .hierarchy import CountTable, Hierarchy, TypeSchema

COUNTS_HEADER = ["unit_path", "type", "count"]
ADJACENCY_HEADER = ["unit_a", "unit_b"]
ELECTION_HEADER = ["precinct_id", "group_vap", "other_vap", "votes_cast", "candidate_votes"]


def _reader(path, header: Sequence[str]):
    path = str(path)
    fh = open(path, newline="")
    rows = csv.reader(fh)
    first = next(rows, None)
    if first is None:
        fh.close()
        return fh, iter(())
    if [c.strip() for c in first] != list(header):
        fh.close()
        raise IngestionError(f"expected header {','.join(header)}, got {','.join(first)}", path, 1)
    return fh, ((i, row) for i, row in enumerate(rows, start=2) if any(c.strip() for c in row))


def _count_value(text: str, path: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise IngestionError(f"count {text!r} is not a number", path, line) from None
    if not math.isfinite(v) or v < 0 or v != int(v):
        raise IngestionError(f"count {text!r} must be a non-negative integer", path, line)
    return v


def load_counts(path) -> tuple[Hierarchy, CountTable]:
    """Read a counts CSV, build the hierarchy from the paths, and aggregate."""
    src = str(path)
    fh, rows = _reader(path, COUNTS_HEADER)
    entries: dict[tuple[str, ...], dict[str, tuple[float, int]]] = {}
    types: list[str] = []
    with fh:
        for line, row in rows:
            if len(row) != 3:
                raise IngestionError(f"expected 3 fields, got {len(row)}", src, line)
            unit, typ, raw = (c.strip() for c in row)
            parts = tuple(unit.split("/"))
            if any(p == "" for p in parts):
                raise IngestionError(f"empty segment in unit path {unit!r}", src, line)
            cell = entries.setdefault(parts, {})
            if typ in cell:
                raise IngestionError(f"duplicate row for ({unit}, {typ})", src, line)
            cell[typ] = (_count_value(raw, src, line), line)
            if typ not in types:
                types.append(typ)
    if not entries:
        raise IngestionError("no count rows", src)

    roots = {p[0] for p in entries}
    if len(roots) != 1:
        raise IngestionError(f"paths must share one root, found {sorted(roots)}", src)

    # children in first-appearance order
    kids: dict[tuple[str, ...], list[tuple[str, ...]]] = {}
    for parts in entries:
        for i in range(1, len(parts)):
            lst = kids.setdefault(parts[:i], [])
            if parts[:i + 1] not in lst:
                lst.append(parts[:i + 1])
    leaves = [p for p in entries if p not in kids]
    depth = len(leaves[0])
    for p in entries:
        if p not in kids and len(p) != depth:
            raise IngestionError(
                f"ragged hierarchy: leaf {'/'.join(p)} at depth {len(p)}, expected {depth}",
                src, min(ln for _, ln in entries[p].values()),
            )

    levels = [[(next(iter(roots)),)]]
    for _ in range(depth - 1):
        levels.append([c for node in levels[-1] for c in kids[node]])
    order = [n for lv in levels for n in lv]
    index = {n: i for i, n in enumerate(order)}
    child_counts = [[len(kids[n]) for n in lv] for lv in levels[:-1]]
    h = Hierarchy.from_level_counts(child_counts, labels=[n[-1] for n in order])

    schema = TypeSchema(tuple(types))
    values = np.zeros((h.n_nodes, len(types)))
    given = np.full((h.n_nodes, len(types)), np.nan)
    for parts, cell in entries.items():
        for typ, (v, _) in cell.items():
            given[index[parts], schema.index(typ)] = v
    values[h.leaves.start:] = np.nan_to_num(given[h.leaves.start:])
    table = CountTable(h, schema, h.sum_up(values), consistent=True)

    internal = ~np.isnan(given[:h.leaves.start])
    mismatch = internal & (given[:h.leaves.start] != table.values[:h.leaves.start])
    if mismatch.any():
        n, t = np.argwhere(mismatch)[0]
        node = order[int(n)]
        line = entries[node][types[int(t)]][1]
        raise IngestionError(
            f"{'/'.join(node)} {types[int(t)]} = {given[n, t]:g} but its leaves sum to "
            f"{table.values[n, t]:g}", src, line,
        )
    return h, table


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_counts(table: CountTable, path, include_internal: bool = False) -> None:
    h = table.hierarchy
    nodes = range(h.n_nodes) if include_internal else h.leaves
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTS_HEADER)
        for n in nodes:
            p = h.path(n)
            for t, typ in enumerate(table.schema.types):
                w.writerow([p, typ, _fmt(table.values[n, t])])


def load_adjacency(path, h: Hierarchy) -> list[tuple[int, int]]:
    """Symmetric, de-duplicated leaf edges as sorted (a, b) id pairs with a < b."""
    src = str(path)
    by_path = {h.path(n): n for n in h.leaves}
    by_label: dict[str, int | None] = {}
    for n in h.leaves:
        lab = h.labels[n]
        by_label[lab] = None if lab in by_label else n

    def resolve(name: str, line: int) -> int:
        if name in by_path:
            return by_path[name]
        hit = by_label.get(name)
        if hit is None:
            raise IngestionError(f"unknown or ambiguous leaf {name!r}", src, line)
        return hit

    if Path(src).stat().st_size == 0:
        return []
    fh, rows = _reader(path, ADJACENCY_HEADER)
    edges = set()
    with fh:
        for line, row in rows:
            if len(row) != 2:
                raise IngestionError(f"expected 2 fields, got {len(row)}", src, line)
            a, b = (resolve(c.strip(), line) for c in row)
            if a != b:
                edges.add((min(a, b), max(a, b)))
    return sorted(edges)


def write_adjacency(h: Hierarchy, edges: Iterable[tuple[int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADJACENCY_HEADER)
        for a, b in edges:
            w.writerow([h.path(int(a)), h.path(int(b))])


def load_election(path) -> list[PrecinctRecord]:
    src = str(path)
    fh, rows = _reader(path, ELECTION_HEADER)
    out = []
    seen = set()
    with fh:
        for line, row in rows:
            if len(row) != len(ELECTION_HEADER):
                raise IngestionError(f"expected {len(ELECTION_HEADER)} fields", src, line)
            pid = row[0].strip()
            if pid in seen:
                raise IngestionError(f"duplicate precinct {pid!r}", src, line)
            seen.add(pid)
            try:
                nums = [_count_value(c.strip(), src, line) for c in row[1:]]
                out.append(PrecinctRecord(pid, nums[0], nums[1], int(nums[2]), int(nums[3])))
            except ValueError as exc:
                if isinstance(exc, IngestionError):
                    raise
                raise IngestionError(str(exc), src, line) from None
    return out


def write_election(records: Iterable[PrecinctRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ELECTION_HEADER)
        for r in records:
            w.writerow([r.precinct_id, _fmt(r.group_vap), _fmt(r.other_vap),
                        r.votes_cast, r.candidate_votes])
