"""Label encoding for the two task settings and NONE negative generation.

Six relations are annotated, five of them directional.  The classification
setting keeps the 6 base labels (direction is given).  The joint
extraction+classification setting encodes direction into the label with a
prefixed ¬ and adds a NONE class for unrelated entity pairs, giving 12
classes in total.
"""

import enum
from dataclasses import dataclass

from .corpus import BASE_LABELS, NONE_LABEL, SYMMETRIC_LABELS, RelationInstance
from .errors import DataError

REVERSE_PREFIX = "¬"  # ¬


class TaskMode(enum.Enum):
    CLASSIFY_6 = "classify-6"
    EXTRACT_CLASSIFY_12 = "extract-classify-12"


@dataclass(frozen=True)
class RelationSchema:
    """Fixed label inventory for one task mode."""

    task_mode: TaskMode
    base_labels: tuple = BASE_LABELS
    symmetric: frozenset = SYMMETRIC_LABELS

    @property
    def class_set(self):
        if self.task_mode is TaskMode.CLASSIFY_6:
            return self.base_labels
        asymmetric = tuple(l for l in self.base_labels if l not in self.symmetric)
        reversed_ = tuple(REVERSE_PREFIX + l for l in asymmetric)
        rest = tuple(l for l in self.base_labels if l in self.symmetric)
        return asymmetric + reversed_ + rest + (NONE_LABEL,)

    def __contains__(self, class_string):
        return class_string in self.class_set


@dataclass(frozen=True)
class NegativeSamplingConfig:
    """max_gap bounds the count of tokens strictly between the two entity ids."""

    max_gap: int = 6

    def __post_init__(self):
        if self.max_gap < 0:
            raise DataError(f"max_gap must be >= 0, got {self.max_gap}")


def encode_label(instance, schema):
    """Class string for an instance under the schema's task mode."""
    label = instance.label
    if instance.reverse and (label in schema.symmetric or label == NONE_LABEL):
        raise DataError(f"reverse direction is meaningless for {label}")
    if schema.task_mode is TaskMode.CLASSIFY_6:
        if label not in schema.base_labels:
            raise DataError(f"label {label!r} is not classifiable in 6-class mode")
        return label
    if label == NONE_LABEL:
        return NONE_LABEL
    if label not in schema.base_labels:
        raise DataError(f"unknown label {label!r}")
    if instance.reverse:
        return REVERSE_PREFIX + label
    return label


def decode_label(class_string, schema):
    """Inverse of encode_label: class string -> (base label, reverse flag)."""
    if class_string not in schema:
        raise DataError(f"class {class_string!r} not in the {schema.task_mode.value} label set")
    if class_string.startswith(REVERSE_PREFIX):
        return class_string[len(REVERSE_PREFIX):], True
    return class_string, False


def generate_negatives(sentence, entities, gold_pairs, config=None):
    """NONE instances for all unrelated entity pairs close enough in a sentence.

    Pairs are unordered; any pair annotated in either direction is excluded.
    The gap is the number of tokens strictly between the two id tokens, and
    pairs with gap > max_gap are skipped.  Output order is surface order
    with the leftmost entity as e1.
    """
    if config is None:
        config = NegativeSamplingConfig()
    excluded = {frozenset(pair) for pair in gold_pairs}
    positions = [(pos, token) for pos, token in enumerate(sentence.tokens) if token in entities]
    negatives = []
    for left in range(len(positions)):
        p1, e1 = positions[left]
        for right in range(left + 1, len(positions)):
            p2, e2 = positions[right]
            if p2 - p1 - 1 > config.max_gap:
                break  # positions are sorted, later pairs are even further
            if frozenset((e1, e2)) in excluded:
                continue
            negatives.append(RelationInstance(
                label=NONE_LABEL, e1=e1, e2=e2, reverse=False,
                doc_id=sentence.doc_id, sentence_index=sentence.index))
    return negatives
