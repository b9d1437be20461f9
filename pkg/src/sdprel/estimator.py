"""Scikit-learn style wrapper around the convolutional sequence classifier.

Takes token sequences (lists of strings) as samples and arbitrary label
strings as targets, so it slots into sklearn tooling (clone, grid search,
pipelines) without the file-based plumbing of the command line interface.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .embeddings import Vocabulary, build_channel, load_w2v_file, lookup_sequence
from .errors import DataError
from .network import CnnModel, ModelConfig
from .pipeline import stratified_kfold
from .training import TrainingConfig, predict_strings, train_with_early_stopping


class SdpCnnClassifier(BaseEstimator, ClassifierMixin):
    """Multi-width convolutional classifier over padded token sequences.

    Parameters mirror the training pipeline's defaults.  `pretrained` may
    name a word-vector file in text format; `multichannel=True` adds a
    static copy of the embedding layer alongside the fine-tuned one.
    `dev_fraction` of the training data (stratified) drives early stopping;
    0 stops on training-set F1 instead.
    """

    def __init__(self, filter_widths=(3, 4, 5), filters_per_width=128,
                 dropout_rate=0.5, norm_cap=3.0, embedding_dim=100,
                 lr=1e-3, batch_size=50, max_epochs=200, patience=20,
                 dev_fraction=0.1, pretrained=None, multichannel=False, seed=0):
        self.filter_widths = filter_widths
        self.filters_per_width = filters_per_width
        self.dropout_rate = dropout_rate
        self.norm_cap = norm_cap
        self.embedding_dim = embedding_dim
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.dev_fraction = dev_fraction
        self.pretrained = pretrained
        self.multichannel = multichannel
        self.seed = seed

    def fit(self, X, y):
        X = [list(tokens) for tokens in X]
        y = list(y)
        if len(X) != len(y):
            raise DataError(f"{len(X)} sequences but {len(y)} labels")
        if not X:
            raise DataError("empty training set")
        if len(set(y)) < 2:
            raise DataError("training data must contain at least two classes")

        self.classes_ = np.array(sorted(set(str(label) for label in y)))
        class_index = {label: i for i, label in enumerate(self.classes_)}
        self.vocab_ = Vocabulary.build(X)
        self.max_length_ = max(len(tokens) for tokens in X)

        pretrained = load_w2v_file(self.pretrained) if self.pretrained else None
        dim = pretrained[1] if pretrained else self.embedding_dim
        channels = []
        if self.multichannel:
            channels.append(build_channel(self.vocab_, pretrained, trainable=False,
                                          seed=[self.seed, 10], dim=dim))
        channels.append(build_channel(self.vocab_, pretrained, trainable=True,
                                      seed=[self.seed, 11], dim=dim))

        self.config_ = ModelConfig(
            embedding_dim=dim,
            max_length=self.max_length_,
            num_classes=len(self.classes_),
            filter_widths=tuple(self.filter_widths),
            filters_per_width=self.filters_per_width,
            dropout_rate=self.dropout_rate,
            norm_cap=self.norm_cap,
        )
        model = CnnModel.initialize(self.config_, channels, self.vocab_,
                                    tuple(self.classes_), seed=[self.seed, 20])

        encoded = self._encode(X)
        targets = np.array([class_index[str(label)] for label in y], dtype=np.int64)
        if self.dev_fraction > 0:
            k = int(round(1.0 / self.dev_fraction))
            k = max(2, min(k, len(X)))
            split = stratified_kfold(y, k, seed=self.seed)
            dev_idx = np.array(split.folds[0])
            train_idx = np.array([i for f in split.folds[1:] for i in f])
        else:
            train_idx = np.arange(len(X))
            dev_idx = train_idx

        result = train_with_early_stopping(
            model, encoded[train_idx], targets[train_idx],
            encoded[dev_idx], targets[dev_idx],
            TrainingConfig(lr=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience),
            seed=[self.seed, 30])
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        return self

    def _encode(self, X):
        return np.stack([lookup_sequence(self.vocab_, tokens, self.max_length_)
                         for tokens in X])

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise DataError("classifier is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        labels, _ = predict_strings(self.model_, self._encode([list(t) for t in X]))
        return np.array(labels)

    def predict_proba(self, X):
        self._check_fitted()
        _, probs = predict_strings(self.model_, self._encode([list(t) for t in X]))
        return probs
