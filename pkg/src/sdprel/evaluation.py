"""Precision/recall/F1 reports and the two-phase extraction+classification score."""

from dataclasses import dataclass

import numpy as np

from .corpus import NONE_LABEL, RelationInstance
from .errors import DataError
from .labels import encode_label

ZERO_DIV = 0.0  # P, R, and F1 all fall back to 0 on empty denominators


@dataclass
class EvalReport:
    classes: tuple
    macro_classes: tuple
    per_class: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray

    def to_json_dict(self):
        return {
            "classes": list(self.classes),
            "macro_classes": list(self.macro_classes),
            "per_class": {label: dict(stats) for label, stats in self.per_class.items()},
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }


def macro_f1(gold, predicted, class_set, macro_classes=None):
    """Per-class P/R/F1 and their unweighted mean over macro_classes.

    Classes absent from both gold and predictions still contribute F1 = 0 to
    the macro average; empty denominators yield 0 throughout.
    macro_classes defaults to the full class_set.
    """
    gold = list(gold)
    predicted = list(predicted)
    if len(gold) != len(predicted):
        raise DataError(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    class_set = tuple(class_set)
    if macro_classes is None:
        macro_classes = class_set
    macro_classes = tuple(macro_classes)
    index = {label: i for i, label in enumerate(class_set)}
    if len(index) != len(class_set):
        raise DataError("duplicate labels in class set")
    for label in macro_classes:
        if label not in index:
            raise DataError(f"macro class {label!r} outside the class set")

    confusion = np.zeros((len(class_set), len(class_set)), dtype=np.int64)
    for g, p in zip(gold, predicted):
        if g not in index:
            raise DataError(f"gold label {g!r} outside the class set")
        if p not in index:
            raise DataError(f"predicted label {p!r} outside the class set")
        confusion[index[g], index[p]] += 1

    per_class = {}
    for label in class_set:
        i = index[label]
        tp = int(confusion[i, i])
        fp = int(confusion[:, i].sum()) - tp
        fn = int(confusion[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else ZERO_DIV
        recall = tp / (tp + fn) if tp + fn else ZERO_DIV
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else ZERO_DIV
        per_class[label] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": tp + fn,
            "predicted": tp + fp,
        }

    rows = [per_class[label] for label in macro_classes]
    return EvalReport(
        classes=class_set,
        macro_classes=macro_classes,
        per_class=per_class,
        macro_precision=sum(r["precision"] for r in rows) / len(rows) if rows else ZERO_DIV,
        macro_recall=sum(r["recall"] for r in rows) / len(rows) if rows else ZERO_DIV,
        macro_f1=sum(r["f1"] for r in rows) / len(rows) if rows else ZERO_DIV,
        confusion=confusion,
    )


def oriented_gold_label(gold_instance, e1, e2, schema):
    """The gold class string for a candidate pair read in (e1, e2) order.

    An asymmetric relation annotated on (a, b) reads as its reverse on
    (b, a); symmetric relations are order-insensitive.
    """
    if (e1, e2) == (gold_instance.e1, gold_instance.e2):
        return encode_label(gold_instance, schema)
    if (e2, e1) != (gold_instance.e1, gold_instance.e2):
        raise DataError(f"candidate ({e1}, {e2}) does not match gold pair "
                        f"({gold_instance.e1}, {gold_instance.e2})")
    if gold_instance.label in schema.symmetric:
        return encode_label(gold_instance, schema)
    flipped = RelationInstance(
        label=gold_instance.label, e1=e2, e2=e1, reverse=not gold_instance.reverse,
        doc_id=gold_instance.doc_id, sentence_index=gold_instance.sentence_index)
    return encode_label(flipped, schema)


def subtask2_eval(gold_instances, candidates, predicted, schema):
    """Two-phase scoring of joint extraction + classification.

    Extraction: binary P/R/F1 where a candidate is extracted iff its
    predicted label is not NONE and relevant iff its unordered pair carries
    a gold relation.  Classification: macro-F1 over the non-NONE classes,
    restricted to candidates that are gold-related or predicted non-NONE.
    Returns (extraction dict, classification EvalReport).
    """
    if len(candidates) != len(predicted):
        raise DataError(f"{len(candidates)} candidates vs {len(predicted)} predictions")
    gold_by_pair = {}
    for instance in gold_instances:
        if instance.label == NONE_LABEL:
            continue
        pair = instance.pair()
        if pair in gold_by_pair:
            raise DataError(f"two gold relations on the pair {sorted(pair)}")
        gold_by_pair[pair] = instance

    seen = set()
    extracted = 0
    correct = 0
    matched_pairs = set()
    class_gold = []
    class_pred = []
    for candidate, label in zip(candidates, predicted):
        pair = candidate.pair()
        if pair in seen:
            raise DataError(f"duplicate candidate pair {sorted(pair)}")
        seen.add(pair)
        gold_instance = gold_by_pair.get(pair)
        if label != NONE_LABEL:
            extracted += 1
            if gold_instance is not None:
                correct += 1
        if gold_instance is not None:
            matched_pairs.add(pair)
        if gold_instance is not None or label != NONE_LABEL:
            gold_label = (NONE_LABEL if gold_instance is None
                          else oriented_gold_label(gold_instance, candidate.e1,
                                                   candidate.e2, schema))
            class_gold.append(gold_label)
            class_pred.append(label)

    relevant = len(gold_by_pair)
    uncovered = relevant - len(matched_pairs)
    if uncovered:
        raise DataError(f"{uncovered} gold pairs missing from the candidate set")
    precision = correct / extracted if extracted else ZERO_DIV
    recall = correct / relevant if relevant else ZERO_DIV
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else ZERO_DIV
    extraction = {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "relevant": relevant,
        "extracted": extracted,
        "correct": correct,
    }
    macro_set = tuple(c for c in schema.class_set if c != NONE_LABEL)
    classification = macro_f1(class_gold, class_pred, schema.class_set, macro_set)
    return extraction, classification
