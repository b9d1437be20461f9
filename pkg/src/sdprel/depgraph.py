"""Dependency trees and shortest-path extraction between two tokens.

A sentence parse is a single-rooted labeled tree over tokens 1..n (head 0 is
the artificial root).  The path between two tokens is annotated with the
traversal direction of every arc: UP walks from a dependent to its head,
DOWN from a head to one of its dependents.
"""

import json
from dataclasses import dataclass

from .errors import DataError, FormatError, GraphError

UP = "UP"
DOWN = "DOWN"

LEFT_ARROW = "←"
RIGHT_ARROW = "→"

# Vocabulary items that encode path structure in the model input sequence.
LEFT_TOKEN = "<L>"
RIGHT_TOKEN = "<R>"
DEP_PREFIX = "dep:"


class DependencyGraph:
    """One parsed sentence as a labeled tree.

    Nodes are numbered 1..n; ``heads[i-1]`` is the head of node i (0 for the
    root) and ``labels[i-1]`` the dependency relation of the arc i -> head.
    Instances are immutable after construction and safe to share between
    concurrent path queries.
    """

    __slots__ = ("forms", "heads", "labels", "root", "adjacency")

    def __init__(self, forms, heads, labels, validate=True):
        n = len(forms)
        if not (len(heads) == len(labels) == n):
            raise GraphError("forms, heads and labels must have equal length", kind="range")
        self.forms = tuple(forms)
        self.heads = tuple(heads)
        self.labels = tuple(labels)
        if validate:
            self._validate()
        self.root = self.heads.index(0) + 1
        adjacency = [[] for _ in range(n + 1)]
        for child, head in enumerate(self.heads, start=1):
            if head:
                adjacency[child].append(head)
                adjacency[head].append(child)
        self.adjacency = adjacency

    def _validate(self):
        n = len(self.forms)
        if n == 0:
            raise GraphError("empty graph", kind="range")
        roots = [i for i, h in enumerate(self.heads, start=1) if h == 0]
        for i, head in enumerate(self.heads, start=1):
            if not 0 <= head <= n:
                raise GraphError(f"head {head} of node {i} outside [0, {n}]",
                                 kind="range", node=i)
        if len(roots) != 1:
            raise GraphError(f"expected exactly one root, found {len(roots)}", kind="root")
        for i, label in enumerate(self.labels, start=1):
            if not label:
                raise GraphError(f"node {i} has an empty dependency label",
                                 kind="label", node=i)
        # Walk up from every node; touching 0 proves the chain is rooted.
        state = [0] * (n + 1)  # 0 unseen, 1 on current chain, 2 done
        for start in range(1, n + 1):
            v = start
            chain = []
            while v != 0 and state[v] == 0:
                state[v] = 1
                chain.append(v)
                v = self.heads[v - 1]
            if v != 0 and state[v] == 1:
                raise GraphError(f"cycle through node {v}", kind="cycle", node=v)
            for u in chain:
                state[u] = 2

    def __len__(self):
        return len(self.forms)

    def form(self, node):
        return self.forms[node - 1]


@dataclass(slots=True)
class SdpPath:
    """A path through a tree: node indices plus one (direction, label) per arc."""

    nodes: tuple
    steps: tuple

    @property
    def endpoints(self):
        return self.nodes[0], self.nodes[-1]

    def __len__(self):
        return len(self.steps)

    def reverse(self):
        flipped = tuple((DOWN if d == UP else UP, label) for d, label in reversed(self.steps))
        return SdpPath(tuple(reversed(self.nodes)), flipped)


def build_graph(block, source=None, first_line=1):
    """Parse one CoNLL block (list of row strings) into a validated graph.

    Rows carry 10 columns; only ID, FORM, HEAD and DEPREL are consumed, the
    rest may be ``_``.  Columns are tab-separated, with plain whitespace
    accepted as a fallback.
    """
    if isinstance(block, str):
        block = [line for line in block.splitlines() if line.strip()]
    forms, heads, labels = [], [], []
    for offset, row in enumerate(block):
        lineno = first_line + offset
        cols = row.rstrip("\n").split("\t")
        if len(cols) != 10:
            cols = row.split()
        if len(cols) != 10:
            raise FormatError(f"expected 10 CoNLL columns, got {len(cols)}",
                              source=source, line=lineno)
        try:
            token_id = int(cols[0])
        except ValueError:
            raise FormatError(f"non-integer token ID {cols[0]!r}",
                              source=source, line=lineno) from None
        if token_id != offset + 1:
            raise FormatError(f"token IDs must run 1..n, got {token_id} at row {offset + 1}",
                              source=source, line=lineno)
        try:
            head = int(cols[6])
        except ValueError:
            raise FormatError(f"non-integer HEAD {cols[6]!r}",
                              source=source, line=lineno) from None
        forms.append(cols[1])
        heads.append(head)
        labels.append(cols[7])
    if not forms:
        raise FormatError("empty CoNLL block", source=source, line=first_line)
    return DependencyGraph(forms, heads, labels)


def shortest_dependency_path(graph, a, b):
    """Path between nodes a and b, found by BFS over the undirected arc set.

    In a tree the simple path is unique, so no tie-breaking arises.  Each
    step is annotated UP (dependent to head) or DOWN (head to dependent)
    together with the traversed arc's label.
    """
    n = len(graph.forms)
    if a == b:
        raise DataError(f"path endpoints must differ, got node {a} twice")
    if not 1 <= a <= n or not 1 <= b <= n:
        raise DataError(f"path endpoints ({a}, {b}) outside 1..{n}")
    adjacency = graph.adjacency
    # parent[v] == 0 marks unvisited; parent[a] = a anchors the walk back.
    parent = [0] * (n + 1)
    parent[a] = a
    frontier = [a]
    found = False
    while not found:
        nxt = []
        for v in frontier:
            for u in adjacency[v]:
                if not parent[u]:
                    parent[u] = v
                    if u == b:
                        found = True
                        break
                    nxt.append(u)
            if found:
                break
        frontier = nxt
    nodes = [b]
    v = b
    while v != a:
        v = parent[v]
        nodes.append(v)
    nodes.reverse()
    heads = graph.heads
    labels = graph.labels
    steps = []
    prev = a
    for u in nodes[1:]:
        if heads[prev - 1] == u:
            steps.append((UP, labels[prev - 1]))
        else:
            steps.append((DOWN, labels[u - 1]))
        prev = u
    return SdpPath(tuple(nodes), tuple(steps))


def render_sdp(path, graph, entity_map):
    """Render a path as its display string and its model input tokens.

    ``entity_map`` maps entity ids to surface token lists.  Both endpoints
    must be entity-id tokens; any entity id along the path is replaced by its
    surface tokens.  The display string joins arcs as `` <- LABEL <- `` /
    `` -> LABEL -> `` (with real arrow glyphs); the model token sequence
    flattens surfaces and brackets each arc as <L> dep:label <L> (UP) or
    <R> dep:label <R> (DOWN), labels lowercased.
    """
    first, last = path.endpoints
    for endpoint in (first, last):
        form = graph.form(endpoint)
        if form not in entity_map:
            raise DataError(f"path endpoint {form!r} is not a known entity id")
    pieces = []
    model_tokens = []
    for position, node in enumerate(path.nodes):
        form = graph.form(node)
        surface = entity_map.get(form)
        if surface is not None:
            pieces.append(" ".join(surface))
            model_tokens.extend(surface)
        else:
            pieces.append(form)
            model_tokens.append(form)
        if position < len(path.steps):
            direction, label = path.steps[position]
            if direction == UP:
                pieces.append(f" {LEFT_ARROW} {label} {LEFT_ARROW} ")
                bracket = LEFT_TOKEN
            else:
                pieces.append(f" {RIGHT_ARROW} {label} {RIGHT_ARROW} ")
                bracket = RIGHT_TOKEN
            model_tokens.extend((bracket, DEP_PREFIX + label.lower(), bracket))
    return "".join(pieces), model_tokens


@dataclass(slots=True)
class SdpExample:
    """One rendered path with its label, ready for the classifier."""

    doc_id: str
    sentence_index: int
    e1: str
    e2: str
    label: str
    reverse: bool
    path_string: str
    model_tokens: list

    def key(self):
        return self.doc_id, self.e1, self.e2

    def pair(self):
        return frozenset((self.e1, self.e2))

    def to_json(self):
        return json.dumps(
            {
                "doc_id": self.doc_id,
                "sentence_index": self.sentence_index,
                "e1": self.e1,
                "e2": self.e2,
                "label": self.label,
                "reverse": self.reverse,
                "path_string": self.path_string,
                "model_tokens": self.model_tokens,
            },
            ensure_ascii=False,
        )


def write_examples(path, examples):
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(example.to_json())
            handle.write("\n")


def read_examples(path):
    examples = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                examples.append(SdpExample(
                    doc_id=row["doc_id"],
                    sentence_index=row["sentence_index"],
                    e1=row["e1"],
                    e2=row["e2"],
                    label=row["label"],
                    reverse=bool(row["reverse"]),
                    path_string=row["path_string"],
                    model_tokens=list(row["model_tokens"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad example row: {exc}", source=str(path), line=lineno) from None
    return examples
