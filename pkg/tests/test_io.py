import numpy as np
import pytest

from toydown import io as tio
from toydown.districts import grid_graph
from toydown.er import synthetic_county
from toydown.errors import IngestionError
from toydown.hierarchy import Hierarchy, TypeSchema, build_homogeneous


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_leaf_file(tmp_path):
    p = write(tmp_path, "c.csv", "unit_path,type,count\nus/a,total,3\nus/b,total,4\n")
    h, table = tio.load_counts(p)
    assert h.n_nodes == 3
    assert table.values[:, 0].tolist() == [7, 3, 4]
    assert h.labels == ("us", "a", "b")


def test_internal_rows_checked(tmp_path):
    ok = write(tmp_path, "ok.csv", "unit_path,type,count\nus,total,7\nus/a,total,3\nus/b,total,4\n")
    assert tio.load_counts(ok)[1].values[0, 0] == 7
    bad = write(tmp_path, "bad.csv",
                "unit_path,type,count\nus,total,8\nus/a,total,3\nus/b,total,4\n")
    with pytest.raises(IngestionError, match=":2:"):
        tio.load_counts(bad)


@pytest.mark.parametrize("body,line", [
    ("us/a,total,3\nus/a,total,4\n", 3),
    ("us/a,total,-1\n", 2),
    ("us/a,total,1.5\n", 2),
    ("us/a,total,x\n", 2),
    ("us/a/x,total,1\nus/b,total,1\n", 3),
])
def test_ingestion_errors_have_line_numbers(tmp_path, body, line):
    p = write(tmp_path, "c.csv", "unit_path,type,count\n" + body)
    with pytest.raises(IngestionError) as info:
        tio.load_counts(p)
    assert info.value.line == line


def test_wrong_header(tmp_path):
    p = write(tmp_path, "c.csv", "path,type,count\nus/a,total,1\n")
    with pytest.raises(IngestionError, match=":1:"):
        tio.load_counts(p)


def test_two_roots(tmp_path):
    p = write(tmp_path, "c.csv", "unit_path,type,count\nus/a,total,1\nca/b,total,1\n")
    with pytest.raises(IngestionError):
        tio.load_counts(p)


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    schema = TypeSchema(("a", "b"))
    h, table = build_homogeneous([10, 10], leaf_populations=rng.integers(0, 50, (100, 2)),
                                 schema=schema)
    p = tmp_path / "c.csv"
    tio.write_counts(table, p)
    h2, back = tio.load_counts(p)
    assert np.array_equal(h2.parent, h.parent)
    assert back.schema == schema
    assert np.array_equal(back.values, table.values)
    tio.write_counts(table, p, include_internal=True)
    assert np.array_equal(tio.load_counts(p)[1].values, table.values)


def test_grid_adjacency_round_trip(tmp_path):
    r, c = 4, 6
    labels = ["root"] + [f"r{i}c{j}" for i in range(r) for j in range(c)]
    h = Hierarchy.from_level_counts([[r * c]], labels=labels)
    g = grid_graph(r, c)
    p = tmp_path / "adj.csv"
    tio.write_adjacency(h, g.edges + 1, p)
    edges = tio.load_adjacency(p, h)
    assert len(edges) == 2 * r * c - r - c


def test_adjacency_empty_and_duplicates(tmp_path):
    h = Hierarchy.from_level_counts([[3]], labels=["root", "a", "b", "c"])
    empty = write(tmp_path, "e.csv", "")
    assert tio.load_adjacency(empty, h) == []
    dup = write(tmp_path, "d.csv", "unit_a,unit_b\na,b\nb,a\nroot/a,b\nb,c\n")
    assert tio.load_adjacency(dup, h) == [(1, 2), (2, 3)]


def test_adjacency_unknown_label(tmp_path):
    h = Hierarchy.from_level_counts([[2]], labels=["root", "a", "b"])
    p = write(tmp_path, "d.csv", "unit_a,unit_b\na,zz\n")
    with pytest.raises(IngestionError, match=":2:"):
        tio.load_adjacency(p, h)


def test_election_round_trip(tmp_path):
    county = synthetic_county(30, seed=1)
    p = tmp_path / "e.csv"
    tio.write_election(county, p)
    assert tio.load_election(p) == county


def test_election_errors(tmp_path):
    head = ",".join(tio.ELECTION_HEADER) + "\n"
    p = write(tmp_path, "e.csv", head + "p1,10,10,5,6\n")
    with pytest.raises(IngestionError, match=":2:"):
        tio.load_election(p)
    p = write(tmp_path, "e2.csv", head + "p1,10,10,5,2\np1,1,1,1,1\n")
    with pytest.raises(IngestionError, match=":3:"):
        tio.load_election(p)
