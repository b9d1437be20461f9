"""Corpus ingestion: annotated abstracts, relation files, and CoNLL parses.

The raw data is a set of abstracts with inline entity spans, a relation file
naming entity-id pairs, and (externally produced) dependency parses.  This
module encodes entities as opaque id tokens, splits sentences, and aligns
all three inputs into one dataset of relation instances.
"""

import json
import re
from dataclasses import dataclass, field

from .depgraph import build_graph
from .errors import AlignmentError, DataError, FormatError

# Annotated relation names, in the order they are conventionally tabulated.
BASE_LABELS = ("USAGE", "RESULT", "MODEL-FEATURE", "PART_WHOLE", "TOPIC", "COMPARE")
SYMMETRIC_LABELS = frozenset({"COMPARE"})
NONE_LABEL = "NONE"

# Sentinel for relation instances whose entities span sentence boundaries.
DROPPED = None

_TEXT_OPEN = re.compile(r'<text\s+id="([^"<>]+)"\s*>')
_SECTION = re.compile(r"<(title|abstract)>(.*?)</\1>", re.DOTALL)
_ENTITY_TAG = re.compile(r'<entity\s+id="([^"<>]+)"\s*>|</entity>')
_ENTITY_ID = re.compile(r"^\S+\.\d+$")

# Stems whose trailing period is part of the token, not sentence punctuation.
_ABBREVIATIONS = frozenset({
    "al", "cf", "e.g", "eg", "etc", "i.e", "ie", "resp", "vs",
    "Dr", "Eq", "Fig", "Mr", "Mrs", "Ms", "No", "Prof",
})


@dataclass
class EntityMention:
    """One annotated entity span, encoded as a single id token."""

    id: str
    doc_id: str
    surface_tokens: list
    sentence_index: int = None


@dataclass
class Sentence:
    """Encoded sentence: plain words and entity-id tokens.

    doc_id is None for sentences reloaded from disk that contain no entity
    mention; such sentences cannot host relation instances.
    """

    doc_id: str
    index: int
    tokens: list


@dataclass
class RelationInstance:
    label: str
    e1: str
    e2: str
    reverse: bool
    doc_id: str
    sentence_index: int = None

    def pair(self):
        return frozenset((self.e1, self.e2))


@dataclass
class Dataset:
    sentences: list
    entities: dict
    instances: list
    _locations: dict = field(default=None, repr=False)

    def locate(self, entity_id):
        """(doc_id, sentence index, position in sentence list) of an entity token."""
        if self._locations is None:
            locations = {}
            for list_pos, sentence in enumerate(self.sentences):
                for token in sentence.tokens:
                    if token in self.entities:
                        if token in locations:
                            raise DataError(f"entity {token} appears in more than one sentence")
                        locations[token] = (sentence.doc_id, sentence.index, list_pos)
            self._locations = locations
        spot = self._locations.get(entity_id)
        if spot is None:
            if entity_id not in self.entities:
                raise DataError(f"unknown entity id {entity_id}")
            raise DataError(f"entity {entity_id} does not occur in any sentence")
        return spot


def doc_prefix(entity_id):
    head, _, tail = entity_id.rpartition(".")
    if not head or not tail.isdigit() or int(tail) < 1:
        raise FormatError(f"entity id {entity_id!r} is not of the form <doc>.<n>")
    return head


def parse_abstracts(text, source=None):
    """Scan annotated abstracts into entity mentions and encoded documents.

    Returns (entities, documents): a dict id -> EntityMention and a list of
    (doc_id, text) pairs where every entity span is replaced by its id and
    title/abstract are joined by a newline (a hard sentence boundary).
    """
    if hasattr(text, "read"):
        text = text.read()
    entities = {}
    documents = []
    for doc_match in _TEXT_OPEN.finditer(text):
        doc_id = doc_match.group(1)
        close = text.find("</text>", doc_match.end())
        if close < 0:
            raise FormatError(f"unterminated <text> block for {doc_id!r}", source=source)
        body = text[doc_match.end():close]
        parts = []
        for section in _SECTION.finditer(body):
            parts.append(_encode_entities(section.group(2), doc_id, entities, source))
        documents.append((doc_id, "\n".join(parts)))
    return entities, documents


def _encode_entities(section_text, doc_id, entities, source):
    out = []
    pos = 0
    open_id = None
    span_start = 0
    for tag in _ENTITY_TAG.finditer(section_text):
        if tag.group(1) is not None:
            if open_id is not None:
                raise FormatError(f"nested entity tag {tag.group(1)!r} inside {open_id!r}",
                                  source=source)
            open_id = tag.group(1)
            out.append(section_text[pos:tag.start()])
            span_start = tag.end()
        else:
            if open_id is None:
                raise FormatError("</entity> without opening tag", source=source)
            if open_id in entities:
                raise FormatError(f"duplicate entity id {open_id!r}", source=source)
            if doc_prefix(open_id) != doc_id:
                raise FormatError(f"entity id {open_id!r} not prefixed by document id {doc_id!r}",
                                  source=source)
            surface = section_text[span_start:tag.start()].split()
            if not surface:
                raise FormatError(f"entity {open_id!r} has an empty surface span", source=source)
            entities[open_id] = EntityMention(id=open_id, doc_id=doc_id, surface_tokens=surface)
            out.append(open_id)
            open_id = None
        pos = tag.end()
    if open_id is not None:
        raise FormatError(f"unterminated entity tag {open_id!r}", source=source)
    out.append(section_text[pos:])
    return "".join(out)


def _separate_terminal(raw):
    """Split one whitespace token into (stem tokens); terminal . ? ! becomes
    its own token unless an abbreviation or initial keeps the period."""
    last = raw[-1]
    if last not in ".?!" or len(raw) == 1:
        return [raw]
    stem = raw[:-1]
    if last == ".":
        if stem in _ABBREVIATIONS:
            return [raw]
        if len(stem) == 1 and stem.isupper():
            return [raw]
        if stem.endswith("."):  # ellipses and dotted abbreviations like e.g.
            return [raw]
    return [stem, last]


def _is_boundary_follower(token):
    first = token[0]
    return first.isupper() or first.isdigit() or bool(_ENTITY_ID.match(token))


def split_sentences(document_text, doc_id=None):
    """Split an encoded document into Sentence objects.

    Tokens are whitespace-separated with terminal punctuation detached; a
    sentence ends at a detached . ? ! whose following token starts with an
    uppercase letter or digit or is an entity id.  Newlines in the document
    are hard boundaries.  Empty text yields an empty list.
    """
    sentences = []
    for line in document_text.split("\n"):
        tokens = []
        for raw in line.split():
            tokens.extend(_separate_terminal(raw))
        current = []
        for position, token in enumerate(tokens):
            current.append(token)
            if token in (".", "?", "!"):
                nxt = tokens[position + 1] if position + 1 < len(tokens) else None
                if nxt is None or _is_boundary_follower(nxt):
                    sentences.append(current)
                    current = []
        if current:
            sentences.append(current)
    return [Sentence(doc_id=doc_id, index=i, tokens=toks) for i, toks in enumerate(sentences)]


_RELATION_LINE = re.compile(r"^([A-Za-z_\-]+)\(([^(),\s]+),([^(),\s]+)(,REVERSE)?\)$")


def parse_relations(lines, source=None):
    """Parse `LABEL(id1,id2[,REVERSE])` lines; # comments and blanks skipped."""
    if hasattr(lines, "read"):
        lines = lines.read().splitlines()
    elif isinstance(lines, str):
        lines = lines.splitlines()
    instances = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        match = _RELATION_LINE.match(line)
        if not match:
            raise FormatError(f"unparseable relation line {line!r}", source=source, line=lineno)
        label, e1, e2, reverse = match.group(1), match.group(2), match.group(3), bool(match.group(4))
        if label not in BASE_LABELS:
            raise FormatError(f"unknown relation label {label!r}", source=source, line=lineno)
        if reverse and label in SYMMETRIC_LABELS:
            raise FormatError(f"REVERSE is not allowed on symmetric {label}",
                              source=source, line=lineno)
        if e1 == e2:
            raise FormatError(f"relation endpoints must differ, got {e1} twice",
                              source=source, line=lineno)
        d1, d2 = doc_prefix(e1), doc_prefix(e2)
        if d1 != d2:
            raise FormatError(f"relation joins entities of different documents ({d1}, {d2})",
                              source=source, line=lineno)
        instances.append(RelationInstance(label=label, e1=e1, e2=e2, reverse=reverse, doc_id=d1))
    return instances


def render_relation(instance):
    tail = ",REVERSE" if instance.reverse else ""
    return f"{instance.label}({instance.e1},{instance.e2}{tail})"


def ingest_conll(text, sentences, source=None):
    """Parse blank-line-separated CoNLL blocks and align them to sentences.

    Block i must tokenize exactly as sentences[i] (FORM column equals the
    encoded token); any count or form mismatch is an alignment error naming
    the sentence index.
    """
    if hasattr(text, "read"):
        text = text.read()
    blocks = []
    current = []
    start_line = 1
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            if not current:
                start_line = lineno
            current.append(line)
        elif current:
            blocks.append((start_line, current))
            current = []
    if current:
        blocks.append((start_line, current))
    if len(blocks) != len(sentences):
        raise AlignmentError(
            f"{len(blocks)} parse blocks for {len(sentences)} sentences"
            + (f" in {source}" if source else ""))
    graphs = []
    for index, ((first_line, rows), sentence) in enumerate(zip(blocks, sentences)):
        graph = build_graph(rows, source=source, first_line=first_line)
        if list(graph.forms) != list(sentence.tokens):
            detail = _first_form_mismatch(graph.forms, sentence.tokens)
            raise AlignmentError(f"sentence {index}: parse does not match encoded tokens ({detail})")
        graphs.append(graph)
    return graphs


def _first_form_mismatch(forms, tokens):
    if len(forms) != len(tokens):
        return f"{len(forms)} forms vs {len(tokens)} tokens"
    for i, (a, b) in enumerate(zip(forms, tokens)):
        if a != b:
            return f"token {i + 1}: {a!r} vs {b!r}"
    return "identical"


def assign_sentence(instance, dataset):
    """Per-document index of the sentence holding both entities, or DROPPED
    when they lie in different sentences."""
    d1, i1, p1 = dataset.locate(instance.e1)
    d2, i2, p2 = dataset.locate(instance.e2)
    if p1 != p2:
        return DROPPED
    return i1


def dataset_stats(dataset):
    """Per-label instance counts: label -> (forward, reverse, total)."""
    order = BASE_LABELS + (NONE_LABEL,)
    counts = {label: [0, 0] for label in order}
    for instance in dataset.instances:
        if instance.label not in counts:
            raise DataError(f"instance with unknown label {instance.label!r}")
        counts[instance.label][1 if instance.reverse else 0] += 1
    return {label: (fwd, rev, fwd + rev) for label, (fwd, rev) in counts.items()}


def write_sentence_files(sentences, entities, sents_path, map_path):
    """Write the one-sentence-per-line token file and its entity sidecar map."""
    with open(sents_path, "w", encoding="utf-8") as handle:
        for sentence in sentences:
            handle.write(" ".join(sentence.tokens))
            handle.write("\n")
    with open(map_path, "w", encoding="utf-8") as handle:
        for sentence in sentences:
            for token in sentence.tokens:
                entity = entities.get(token)
                if entity is not None:
                    row = {
                        "entity_id": entity.id,
                        "doc_id": sentence.doc_id,
                        "sentence_index": sentence.index,
                        "surface_tokens": entity.surface_tokens,
                    }
                    handle.write(json.dumps(row, ensure_ascii=False))
                    handle.write("\n")


def read_sentence_files(sents_path, map_path):
    """Load sentences and entities back; inverse of write_sentence_files.

    Sentence identity (doc_id, index) is recovered from the entity map, so a
    sentence without entity tokens comes back with doc_id None.
    """
    entities = {}
    with open(map_path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                entity = EntityMention(id=row["entity_id"], doc_id=row["doc_id"],
                                       surface_tokens=list(row["surface_tokens"]),
                                       sentence_index=int(row["sentence_index"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad entity map row: {exc}", source=str(map_path),
                                  line=lineno) from None
            if entity.id in entities:
                raise FormatError(f"duplicate entity id {entity.id!r}", source=str(map_path),
                                  line=lineno)
            entities[entity.id] = entity

    sentences = []
    placed = set()
    with open(sents_path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            tokens = line.split()
            if not tokens:
                continue
            spots = []
            for token in tokens:
                entity = entities.get(token)
                if entity is None:
                    continue
                if token in placed:
                    raise DataError(f"entity {token} appears in more than one sentence "
                                    f"({sents_path}:{lineno})")
                placed.add(token)
                spots.append((entity.doc_id, entity.sentence_index))
            if spots and len(set(spots)) != 1:
                raise DataError(f"sentence at {sents_path}:{lineno} mixes entities of "
                                f"different sentences: {sorted(set(spots))}")
            doc_id, index = spots[0] if spots else (None, len(sentences))
            sentences.append(Sentence(doc_id=doc_id, index=index, tokens=tokens))
    missing = set(entities) - placed
    if missing:
        raise DataError(f"{len(missing)} mapped entities missing from sentence file, "
                        f"e.g. {sorted(missing)[0]}")
    return sentences, entities
