"""Word vectors: pretrained-file loading, vocabulary, embedding channels."""

import logging

import numpy as np

from .depgraph import DEP_PREFIX, LEFT_TOKEN, RIGHT_TOKEN
from .errors import DataError, FormatError

log = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

SOURCE_RANDOM = "random"


def load_w2v_text(stream, source=None):
    """Read the text export of a word2vec-style model.

    First line: `V d`.  Each following line: the word, then d floats,
    space-separated.  Returns (word -> float32 vector map, d).  Duplicate
    words keep the first row with a warning.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise FormatError("empty vector file", source=source, line=1) from None
    fields = header.split()
    if len(fields) != 2:
        raise FormatError(f"header must be `V d`, got {header.strip()!r}", source=source, line=1)
    try:
        count, dim = int(fields[0]), int(fields[1])
    except ValueError:
        raise FormatError(f"non-integer header {header.strip()!r}", source=source, line=1) from None
    if count < 0 or dim < 1:
        raise FormatError(f"bad header values V={count} d={dim}", source=source, line=1)
    vectors = {}
    rows = 0
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != dim + 1:
            raise FormatError(f"expected {dim} values for {parts[0]!r}, got {len(parts) - 1}",
                              source=source, line=lineno)
        rows += 1
        word = parts[0]
        if word in vectors:
            log.warning("duplicate vector for %r (line %d), keeping the first", word, lineno)
            continue
        try:
            vectors[word] = np.array([float(x) for x in parts[1:]], dtype=np.float32)
        except ValueError:
            raise FormatError(f"non-numeric value in row for {word!r}",
                              source=source, line=lineno) from None
    if rows != count:
        raise FormatError(f"header promises {count} rows, file has {rows}", source=source)
    return vectors, dim


def load_w2v_file(path):
    with open(path, "r", encoding="utf-8") as handle:
        return load_w2v_text(handle, source=str(path))


class Vocabulary:
    """Token-to-index bijection with a fixed special-token prefix.

    Index 0 is the padding token, 1 the unknown token, then the two path
    bracket tokens, then dependency-label tokens, then words, both in
    first-seen order over the training sequences.
    """

    def __init__(self, tokens):
        self.index_to_token = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise DataError("vocabulary contains duplicate tokens")
        expected = [PAD_TOKEN, UNK_TOKEN, LEFT_TOKEN, RIGHT_TOKEN]
        if self.index_to_token[:4] != expected:
            raise DataError(f"vocabulary must start with {expected}")

    @classmethod
    def build(cls, token_sequences):
        dep_tokens = []
        word_tokens = []
        seen = set()
        for sequence in token_sequences:
            for token in sequence:
                if token in seen:
                    continue
                seen.add(token)
                if token in (PAD_TOKEN, UNK_TOKEN, LEFT_TOKEN, RIGHT_TOKEN):
                    continue
                if token.startswith(DEP_PREFIX):
                    dep_tokens.append(token)
                else:
                    word_tokens.append(token)
        return cls([PAD_TOKEN, UNK_TOKEN, LEFT_TOKEN, RIGHT_TOKEN] + dep_tokens + word_tokens)

    def __len__(self):
        return len(self.index_to_token)

    def __contains__(self, token):
        return token in self.token_to_index

    def index(self, token):
        return self.token_to_index.get(token, UNK_INDEX)

    def token(self, index):
        return self.index_to_token[index]


class EmbeddingChannel:
    """One V x d embedding matrix plus its training/provenance flags."""

    def __init__(self, matrix, trainable, source, pretrained_hits=0):
        self.matrix = matrix
        self.trainable = trainable
        self.source = source
        self.pretrained_hits = pretrained_hits


def build_channel(vocab, pretrained, trainable, seed, dim=None):
    """Materialize one embedding channel for a vocabulary.

    pretrained is a (vectors, d) pair from load_w2v_text, or None for random
    initialization.  Rows for words found in the pretrained map (exact
    match, then lowercase) are copied; the padding row is zero; every other
    row is uniform in [-0.25, 0.25] drawn from the seed.
    """
    if pretrained is not None:
        vectors, file_dim = pretrained
        if dim is not None and dim != file_dim:
            raise DataError(f"requested dimension {dim} but vector file has {file_dim}")
        dim = file_dim
        source = f"pretrained-d{file_dim}"
    else:
        vectors = {}
        if dim is None:
            raise DataError("dimension is required for random initialization")
        source = SOURCE_RANDOM
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.25, 0.25, size=(len(vocab), dim)).astype(np.float32)
    matrix[PAD_INDEX] = 0.0
    hits = 0
    for index, token in enumerate(vocab.index_to_token):
        if index == PAD_INDEX:
            continue
        row = vectors.get(token)
        if row is None:
            row = vectors.get(token.lower())
        if row is not None:
            matrix[index] = row
            hits += 1
    return EmbeddingChannel(matrix, trainable=trainable, source=source, pretrained_hits=hits)


def coverage_report(vocab, channel):
    return {
        "vocab_size": len(vocab),
        "dim": int(channel.matrix.shape[1]),
        "pretrained_hits": int(channel.pretrained_hits),
        "hit_rate": channel.pretrained_hits / len(vocab) if len(vocab) else 0.0,
    }


def lookup_sequence(vocab, model_tokens, max_length):
    """Map tokens to indices, right-padded (or truncated) to max_length."""
    if max_length < 1:
        raise DataError(f"max_length must be >= 1, got {max_length}")
    indices = [vocab.index(t) for t in model_tokens[:max_length]]
    if len(model_tokens) > max_length:
        log.warning("sequence of %d tokens truncated to %d", len(model_tokens), max_length)
    if len(indices) < max_length:
        indices.extend([PAD_INDEX] * (max_length - len(indices)))
    return np.asarray(indices, dtype=np.int64)
