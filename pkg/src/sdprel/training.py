"""Training loop: class weighting, minibatch epochs, early stopping on dev macro-F1."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .embeddings import lookup_sequence
from .errors import DataError
from .evaluation import macro_f1
from .labels import encode_label
from .network import (TrainState, adam_step, backward, forward_batch,
                      loss_and_logit_grad, predict_batch)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    batch_size: int = 50
    max_epochs: int = 200
    patience: int = 20
    stop_at_dev_f1: float = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DataError("lr, batch_size, max_epochs and patience must be positive")


def class_weights(counts):
    """Per-class loss weight w_c = N / (K * n_c) from a label -> count mapping."""
    if not counts:
        raise DataError("no classes to weight")
    for label, n in counts.items():
        if n < 1:
            raise DataError(f"class {label!r} has no instances; drop it or fix the data")
    total = sum(counts.values())
    k = len(counts)
    return {label: total / (k * n) for label, n in counts.items()}


def weight_vector(y, num_classes):
    """class_weights over integer-encoded labels, as an index-aligned array.

    Classes absent from y are dropped before weighting (their weight never
    multiplies a loss term) and come back as 0.
    """
    counts = np.bincount(np.asarray(y), minlength=num_classes)
    present = {i: int(c) for i, c in enumerate(counts) if c > 0}
    if len(present) < num_classes:
        absent = sorted(set(range(num_classes)) - set(present))
        log.warning("%d of %d classes have no training instances: %s",
                    len(absent), num_classes, absent)
    weights = class_weights(present)
    return np.array([weights.get(i, 0.0) for i in range(num_classes)])


def encode_dataset(examples, vocab, max_length, schema):
    """(index matrix, class-index vector) for a list of rendered path examples."""
    classes = schema.class_set
    class_index = {label: i for i, label in enumerate(classes)}
    X = np.stack([lookup_sequence(vocab, ex.model_tokens, max_length) for ex in examples])
    y = np.array([class_index[encode_label(ex, schema)] for ex in examples], dtype=np.int64)
    return X, y


def predict_strings(model, X):
    pred, probs = predict_batch(model, X)
    return [model.classes[i] for i in pred], probs


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0


def train_with_early_stopping(model, train_X, train_y, dev_X, dev_y, config, seed):
    """Fit the model, snapshotting the epoch with the best dev macro-F1.

    Training stops after `patience` consecutive epochs without strict
    improvement, at max_epochs, or once dev macro-F1 reaches
    config.stop_at_dev_f1 when that target is set.  Returns the best
    snapshot together with the per-epoch log.
    """
    n = len(train_X)
    if n == 0:
        raise DataError("empty training set")
    if len(dev_X) == 0:
        raise DataError("early stopping needs a non-empty development set")
    weights = weight_vector(train_y, len(model.classes))
    dev_gold = [model.classes[i] for i in dev_y]

    rng = np.random.default_rng(seed)
    state = TrainState.for_model(model)
    result = TrainResult(model=model.copy())
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        sizes = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            cache = forward_batch(model, train_X[batch], train_mode=True, rng=rng)
            loss, dlogits = loss_and_logit_grad(cache.probs, train_y[batch], weights)
            grads = backward(model, cache, dlogits)
            adam_step(model, state, grads, lr=config.lr)
            losses.append(loss)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))

        dev_pred, _ = predict_strings(model, dev_X)
        dev_f1 = macro_f1(dev_gold, dev_pred, model.classes).macro_f1
        result.log.append({"epoch": epoch, "train_loss": train_loss, "dev_macro_f1": dev_f1})

        if dev_f1 > result.best_dev_f1 or result.best_epoch == 0:
            result.best_dev_f1 = dev_f1
            result.best_epoch = epoch
            result.model = model.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.info("stopping at epoch %d, no dev improvement since epoch %d",
                         epoch, result.best_epoch)
                break
        if config.stop_at_dev_f1 is not None and dev_f1 >= config.stop_at_dev_f1:
            break
    return result
