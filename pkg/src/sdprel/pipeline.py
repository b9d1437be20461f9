"""Cross-validation orchestration: stratified folds, per-fold training,
ensembling, and the run directory layout."""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import NONE_LABEL
from .depgraph import read_examples
from .embeddings import Vocabulary, coverage_report
from .errors import DataError
from .evaluation import macro_f1, subtask2_eval
from .labels import TaskMode, encode_label
from .network import CnnModel, ModelConfig, save_model
from .training import encode_dataset, predict_strings, train_with_early_stopping
from .variants import build_variant_channels, get_variant

log = logging.getLogger(__name__)

PROTOCOL_DEVELOPMENT = "development"  # per run: k-2 train folds, 1 dev, 1 test
PROTOCOL_EVALUATION = "evaluation"    # per run: k-1 train folds, 1 dev
PROTOCOLS = (PROTOCOL_DEVELOPMENT, PROTOCOL_EVALUATION)


@dataclass
class FoldSplit:
    """k disjoint index lists partitioning the dataset."""

    folds: list
    seed: int = None

    @property
    def k(self):
        return len(self.folds)

    def roles(self, run_index, protocol):
        """(train, dev, test) index lists for one cross-validation run.

        The development protocol holds out one test fold and uses the next
        fold (cyclically) for early stopping; the evaluation protocol uses
        every fold but the dev fold for training and has no test fold.
        """
        k = self.k
        if not 0 <= run_index < k:
            raise DataError(f"run index {run_index} outside 0..{k - 1}")
        if protocol == PROTOCOL_DEVELOPMENT:
            test = run_index
            dev = (run_index + 1) % k
            train = [i for i in range(k) if i not in (test, dev)]
            if not train:
                raise DataError(f"k={k} leaves no training folds in the development protocol")
            train_idx = [j for i in train for j in self.folds[i]]
            return train_idx, list(self.folds[dev]), list(self.folds[test])
        if protocol == PROTOCOL_EVALUATION:
            dev = run_index
            train_idx = [j for i in range(k) if i != dev for j in self.folds[i]]
            return train_idx, list(self.folds[dev]), None
        raise DataError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")

    def to_json_dict(self):
        return {"k": self.k, "seed": self.seed, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_json_dict(cls, data):
        return cls(folds=[list(f) for f in data["folds"]], seed=data.get("seed"))


def stratified_kfold(labels, k, seed):
    """Partition indices into k folds preserving class proportions within 1.

    Greedy assignment: shuffle with the seed, take classes from rarest to
    most frequent, and put each instance into the fold currently holding the
    fewest of its class (ties: smaller fold total, then lower fold index).
    """
    labels = list(labels)
    n = len(labels)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > n:
        raise DataError(f"cannot split {n} instances into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    by_class = {}
    for idx in order:
        by_class.setdefault(labels[idx], []).append(int(idx))
    # rarest classes placed first; label string breaks count ties
    class_order = sorted(by_class, key=lambda c: (len(by_class[c]), str(c)))
    folds = [[] for _ in range(k)]
    totals = [0] * k
    per_class = [dict() for _ in range(k)]
    for cls in class_order:
        for idx in by_class[cls]:
            best = min(range(k), key=lambda f: (per_class[f].get(cls, 0), totals[f], f))
            folds[best].append(idx)
            totals[best] += 1
            per_class[best][cls] = per_class[best].get(cls, 0) + 1
    return FoldSplit(folds=[sorted(f) for f in folds], seed=seed)


def majority_vote(predictions, probabilities, classes):
    """Combine per-model predictions: most votes, then the largest summed
    probability among tied labels, then the smallest label string."""
    if not predictions:
        raise DataError("majority vote needs at least one model")
    if len(predictions) != len(probabilities):
        raise DataError("predictions and probabilities disagree on model count")
    classes = tuple(classes)
    index = {label: i for i, label in enumerate(classes)}
    n = len(predictions[0])
    votes = np.zeros((n, len(classes)))
    summed = np.zeros((n, len(classes)))
    for preds, probs in zip(predictions, probabilities):
        if len(preds) != n:
            raise DataError("models predicted different instance counts")
        probs = np.asarray(probs)
        if probs.shape != (n, len(classes)):
            raise DataError(f"probability matrix shape {probs.shape} does not match "
                            f"({n}, {len(classes)})")
        for i, label in enumerate(preds):
            if label not in index:
                raise DataError(f"prediction {label!r} outside the shared label set")
            votes[i, index[label]] += 1
        summed += probs
    out = []
    for i in range(n):
        top = votes[i].max()
        tied = [c for c in range(len(classes)) if votes[i, c] == top]
        if len(tied) > 1:
            best_p = max(summed[i, c] for c in tied)
            tied = [c for c in tied if summed[i, c] == best_p]
        out.append(min((classes[c] for c in tied)))
    return out


def _stable_json(data):
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_atomic(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _run_fold(fold_index, fold_seed, train_examples, dev_examples, score_examples,
              schema, variant, pretrained, model_overrides, train_config, out_dir):
    """Train one fold end to end; returns the report entry, the scored
    predictions, and their probabilities."""
    vocab = Vocabulary.build(ex.model_tokens for ex in train_examples)
    max_length = max(len(ex.model_tokens) for ex in train_examples)
    channels = build_variant_channels(variant, vocab, pretrained, fold_seed,
                                      model_overrides.get("embedding_dim"))
    dim = channels[0].matrix.shape[1]
    config = ModelConfig(
        embedding_dim=dim,
        max_length=max_length,
        num_classes=len(schema.class_set),
        filter_widths=model_overrides.get("filter_widths", (3, 4, 5)),
        filters_per_width=model_overrides.get("filters_per_width", 128),
        dropout_rate=model_overrides.get("dropout_rate", 0.5),
        norm_cap=model_overrides.get("norm_cap", 3.0),
    )
    model = CnnModel.initialize(config, channels, vocab, schema.class_set,
                                seed=[fold_seed, 20])
    X_train, y_train = encode_dataset(train_examples, vocab, max_length, schema)
    X_dev, y_dev = encode_dataset(dev_examples, vocab, max_length, schema)
    result = train_with_early_stopping(model, X_train, y_train, X_dev, y_dev,
                                       train_config, seed=[fold_seed, 30])

    out_dir = Path(out_dir)
    save_model(result.model, out_dir / f"model_fold{fold_index}.sdprel")
    write_atomic(out_dir / f"log_fold{fold_index}.jsonl",
                 "".join(json.dumps(row, sort_keys=True) + "\n" for row in result.log))

    X_score, _ = encode_dataset(score_examples, vocab, max_length, schema)
    predictions, probs = predict_strings(result.model, X_score)
    entry = {
        "fold": fold_index,
        "seed": fold_seed,
        "epochs_run": len(result.log),
        "best_epoch": result.best_epoch,
        "best_dev_macro_f1": result.best_dev_f1,
        "vocab_size": len(vocab),
        "max_length": max_length,
        "channels": [coverage_report(vocab, ch) for ch in channels],
    }
    return entry, predictions, probs


def cross_validate(examples, schema, variant, pretrained, model_overrides,
                   train_config, k, seed, protocol, out_dir, jobs=1):
    """k-fold cross-validation of one variant; writes the run directory and
    returns the report dict.

    Every example is scored exactly once by a model whose training never saw
    it: the held-out test fold under the development protocol, the dev fold
    under the evaluation protocol.
    """
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if isinstance(variant, str):
        variant = get_variant(variant)
    examples = list(examples)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    encoded_gold = [encode_label(ex, schema) for ex in examples]
    split = stratified_kfold(encoded_gold, k, seed)
    write_atomic(out_dir / "folds.json", _stable_json(split.to_json_dict()))

    tasks = []
    score_slices = []
    for r in range(k):
        train_idx, dev_idx, test_idx = split.roles(r, protocol)
        score_idx = test_idx if protocol == PROTOCOL_DEVELOPMENT else dev_idx
        score_slices.append(score_idx)
        tasks.append((r, seed + r,
                      [examples[i] for i in train_idx],
                      [examples[i] for i in dev_idx],
                      [examples[i] for i in score_idx],
                      schema, variant, pretrained, model_overrides, train_config,
                      str(out_dir)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold_star, tasks))
    else:
        outcomes = [_run_fold(*task) for task in tasks]

    predictions = [None] * len(examples)
    fold_entries = []
    for (entry, preds, probs), score_idx in zip(outcomes, score_slices):
        fold_entries.append(entry)
        for i, label in zip(score_idx, preds):
            predictions[i] = label
        if protocol == PROTOCOL_DEVELOPMENT:
            gold = [encoded_gold[i] for i in score_idx]
            entry["test_macro_f1"] = macro_f1(gold, preds, schema.class_set).macro_f1

    lines = ["doc_id\te1\te2\tlabel"]
    for ex, label in zip(examples, predictions):
        lines.append(f"{ex.doc_id}\t{ex.e1}\t{ex.e2}\t{label}")
    write_atomic(out_dir / "predictions.tsv", "\n".join(lines) + "\n")

    overall = macro_f1(encoded_gold, predictions, schema.class_set)
    report = {
        "task_mode": schema.task_mode.value,
        "variant": variant.name,
        "protocol": protocol,
        "k": k,
        "seed": seed,
        "num_examples": len(examples),
        "classes": list(schema.class_set),
        "folds": fold_entries,
        "mean_dev_macro_f1": float(np.mean([f["best_dev_macro_f1"] for f in fold_entries])),
        "overall": overall.to_json_dict(),
    }
    if protocol == PROTOCOL_DEVELOPMENT:
        report["mean_test_macro_f1"] = float(np.mean([f["test_macro_f1"]
                                                      for f in fold_entries]))
    if schema.task_mode is TaskMode.EXTRACT_CLASSIFY_12:
        gold_related = [ex for ex in examples if ex.label != NONE_LABEL]
        extraction, classification = subtask2_eval(gold_related, examples,
                                                   predictions, schema)
        report["subtask2"] = {
            "extraction": extraction,
            "classification": classification.to_json_dict(),
        }
    write_atomic(out_dir / "report.json", _stable_json(report))
    return report


def _run_fold_star(task):
    return _run_fold(*task)


def run_variant_matrix(example_sets, variant_specs, schema, pretrained_by_source,
                       model_overrides, train_config, k, seed, out_dir, jobs=1,
                       protocol=PROTOCOL_DEVELOPMENT):
    """Cross-validate every (variant, representation) cell; returns and
    writes the table of mean dev macro-F1 scores.

    example_sets maps a representation name to its example list or example
    file path; pretrained_by_source maps `wiki`/`acl` to loaded vector maps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = {}
    for repr_name, examples in example_sets.items():
        if isinstance(examples, (str, Path)):
            if not Path(examples).exists():
                raise DataError(f"no example file for representation {repr_name!r}: {examples}")
            examples = read_examples(examples)
        table[repr_name] = {}
        for variant in variant_specs:
            pretrained = None
            if variant.pretrained_source is not None:
                pretrained = pretrained_by_source.get(variant.pretrained_source)
                if pretrained is None:
                    raise DataError(f"variant {variant.name} needs {variant.pretrained_source} "
                                    f"vectors; none were supplied")
            cell_dir = out_dir / repr_name / variant.name
            report = cross_validate(examples, schema, variant, pretrained,
                                    model_overrides, train_config, k, seed,
                                    protocol, cell_dir, jobs=jobs)
            table[repr_name][variant.name] = report["mean_dev_macro_f1"]
    write_atomic(out_dir / "table.json", _stable_json(table))
    return table
