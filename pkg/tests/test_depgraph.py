import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from sdprel.depgraph import (DOWN, DependencyGraph, SdpExample, SdpPath, UP,
                             build_graph, read_examples, render_sdp,
                             shortest_dependency_path, write_examples)
from sdprel.errors import DataError, FormatError, GraphError

from oracles import decode_pruefer, enumerate_path, paths_from, unwind


def chain_graph(n):
    # 1 <- 2 <- ... <- n with 1 as root
    return DependencyGraph([f"w{i}" for i in range(n)],
                           [0] + list(range(1, n)),
                           ["ROOT"] + [f"L{i}" for i in range(1, n)])


# ------------------------------------------------------------ construction

def test_graph_rejects_length_mismatch():
    with pytest.raises(GraphError):
        DependencyGraph(["a", "b"], [0], ["ROOT", "X"])


def test_graph_rejects_empty():
    with pytest.raises(GraphError):
        DependencyGraph([], [], [])


def test_graph_rejects_two_roots():
    with pytest.raises(GraphError, match="root"):
        DependencyGraph(["a", "b"], [0, 0], ["ROOT", "ROOT"])


def test_graph_rejects_no_root():
    with pytest.raises(GraphError):
        DependencyGraph(["a", "b"], [2, 1], ["X", "Y"])


def test_graph_rejects_cycle():
    with pytest.raises(GraphError, match="cycle"):
        DependencyGraph(["a", "b", "c"], [0, 3, 2], ["ROOT", "X", "Y"])


def test_graph_rejects_head_out_of_range():
    with pytest.raises(GraphError, match="outside"):
        DependencyGraph(["a", "b"], [0, 5], ["ROOT", "X"])


def test_graph_rejects_empty_label():
    with pytest.raises(GraphError, match="label"):
        DependencyGraph(["a", "b"], [0, 1], ["ROOT", ""])


def test_adjacency_is_symmetric():
    g = chain_graph(5)
    for v in range(1, 6):
        for u in g.adjacency[v]:
            assert v in g.adjacency[u]


# ------------------------------------------------------------ conll parsing

CONLL = """1\tThe\t_\t_\t_\t_\t2\tNMOD\t_\t_
2\tcat\t_\t_\t_\t_\t3\tSBJ\t_\t_
3\tsat\t_\t_\t_\t_\t0\tROOT\t_\t_"""


def test_build_graph_happy_path():
    g = build_graph(CONLL)
    assert g.forms == ("The", "cat", "sat")
    assert g.heads == (2, 3, 0)
    assert g.labels == ("NMOD", "SBJ", "ROOT")
    assert g.root == 3


def test_build_graph_accepts_space_separated_rows():
    rows = [line.replace("\t", "  ") for line in CONLL.splitlines()]
    assert build_graph(rows).forms == ("The", "cat", "sat")


def test_build_graph_reports_source_and_line():
    rows = CONLL.splitlines()
    rows[1] = "2\tcat\tbroken"
    with pytest.raises(FormatError) as exc:
        build_graph(rows, source="parses.conll", first_line=40)
    assert "parses.conll:41" in str(exc.value)


def test_build_graph_rejects_bad_id_sequence():
    rows = CONLL.splitlines()
    rows[2] = rows[2].replace("3\tsat", "7\tsat", 1)
    with pytest.raises(FormatError, match="1..n"):
        build_graph(rows)


def test_build_graph_rejects_non_integer_head():
    rows = CONLL.splitlines()
    rows[0] = "1\tThe\t_\t_\t_\t_\tx\tNMOD\t_\t_"
    with pytest.raises(FormatError, match="HEAD"):
        build_graph(rows)


def test_build_graph_rejects_empty_block():
    with pytest.raises(FormatError, match="empty"):
        build_graph([])


# ------------------------------------------------------------ path search

def test_path_on_chain():
    g = chain_graph(4)
    path = shortest_dependency_path(g, 4, 1)
    assert path.nodes == (4, 3, 2, 1)
    assert all(d == UP for d, _ in path.steps)
    back = shortest_dependency_path(g, 1, 4)
    assert back.nodes == (1, 2, 3, 4)
    assert all(d == DOWN for d, _ in back.steps)


def test_path_adjacent_nodes():
    g = chain_graph(3)
    path = shortest_dependency_path(g, 2, 3)
    assert path.nodes == (2, 3)
    assert path.steps == ((DOWN, "L2"),)


def test_path_rejects_equal_endpoints():
    with pytest.raises(DataError, match="differ"):
        shortest_dependency_path(chain_graph(3), 2, 2)


def test_path_rejects_out_of_range_endpoint():
    with pytest.raises(DataError, match="outside"):
        shortest_dependency_path(chain_graph(3), 1, 9)


def test_reverse_is_involution():
    g = chain_graph(5)
    path = shortest_dependency_path(g, 2, 5)
    assert path.reverse().reverse() == path
    assert path.reverse().nodes == tuple(reversed(path.nodes))


def test_reverse_flips_directions():
    g = chain_graph(3)
    path = shortest_dependency_path(g, 1, 3)
    directions = [d for d, _ in path.reverse().steps]
    assert directions == [UP, UP]


@settings(max_examples=150, deadline=None)
@given(st.integers(3, 12), st.data())
def test_path_matches_enumeration_oracle(n, data):
    seq = data.draw(st.lists(st.integers(1, n), min_size=n - 2, max_size=n - 2))
    heads = decode_pruefer(seq, n)
    g = DependencyGraph([f"w{i}" for i in range(n)], heads[1:],
                        [f"L{i}" for i in range(n)])
    a = data.draw(st.integers(1, n))
    b = data.draw(st.integers(1, n).filter(lambda x: x != a))
    path = shortest_dependency_path(g, a, b)
    assert path.nodes == enumerate_path(g.adjacency, a, b)
    # every step crosses a real arc with that arc's own label
    prev = a
    for (direction, label), u in zip(path.steps, path.nodes[1:]):
        if direction == UP:
            assert heads[prev] == u and label == g.labels[prev - 1]
        else:
            assert heads[u] == prev and label == g.labels[u - 1]
        prev = u


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 10), st.data())
def test_path_reverse_equals_swapped_query(n, data):
    seq = data.draw(st.lists(st.integers(1, n), min_size=n - 2, max_size=n - 2))
    heads = decode_pruefer(seq, n)
    g = DependencyGraph([f"w{i}" for i in range(n)], heads[1:],
                        [f"L{i}" for i in range(n)])
    a = data.draw(st.integers(1, n))
    b = data.draw(st.integers(1, n).filter(lambda x: x != a))
    assert shortest_dependency_path(g, a, b).reverse() == \
        shortest_dependency_path(g, b, a)


# ------------------------------------------------------------ rendering

def entity_graph():
    # D.1 aims at applying D.2 to D.3 .
    forms = ["D.1", "aims", "at", "applying", "D.2", "to", "D.3", "."]
    heads = [2, 0, 2, 3, 4, 4, 6, 2]
    labels = ["SBJ", "ROOT", "ADV", "PMOD", "OBJ", "DIR", "PMOD", "P"]
    return DependencyGraph(forms, heads, labels)


SURFACES = {"D.1": ["this", "work"], "D.2": ["statistical", "models"],
            "D.3": ["structured", "data"]}


def test_render_replaces_entities_and_brackets_arcs():
    g = entity_graph()
    path = shortest_dependency_path(g, 5, 7)
    display, tokens = render_sdp(path, g, SURFACES)
    assert display == ("statistical models ← OBJ ← applying → DIR → to "
                       "→ PMOD → structured data")
    assert tokens == ["statistical", "models", "<L>", "dep:obj", "<L>",
                      "applying", "<R>", "dep:dir", "<R>", "to",
                      "<R>", "dep:pmod", "<R>", "structured", "data"]


def test_render_requires_entity_endpoints():
    g = entity_graph()
    path = shortest_dependency_path(g, 2, 4)  # aims .. applying
    with pytest.raises(DataError, match="entity"):
        render_sdp(path, g, SURFACES)


def test_render_keeps_non_entity_interior_forms():
    g = entity_graph()
    path = shortest_dependency_path(g, 1, 5)
    display, tokens = render_sdp(path, g, SURFACES)
    assert "aims" in display and "applying" in display
    assert "this work" in display and "statistical models" in display


# ------------------------------------------------------------ example files

def test_example_roundtrip(tmp_path):
    examples = [
        SdpExample(doc_id="D", sentence_index=0, e1="D.1", e2="D.2",
                   label="USAGE", reverse=False,
                   path_string="a ← X ← b", model_tokens=["a", "<L>", "dep:x", "<L>", "b"]),
        SdpExample(doc_id="D", sentence_index=1, e1="D.3", e2="D.4",
                   label="COMPARE", reverse=False,
                   path_string="c → Y → d", model_tokens=["c", "<R>", "dep:y", "<R>", "d"]),
    ]
    path = tmp_path / "examples.jsonl"
    write_examples(path, examples)
    assert read_examples(path) == examples
    # file is plain JSONL, one object per line
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["label"] == "USAGE"


def test_read_examples_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"doc_id": "D"}\n', encoding="utf-8")
    with pytest.raises((FormatError, DataError)):
        read_examples(path)
