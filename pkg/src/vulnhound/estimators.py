"""Scikit-learn-style wrappers around the embedding trainer and classifier.

These keep the numeric cores composable with sklearn pipelines and
model-selection utilities; the cores themselves live in embed and rnn.
X for the embedder is an iterable of token-text sequences; for the
classifier it is a list of (T, dim) float arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import embed, rnn
from .errors import VulnhoundError


def check_token_sequences(X) -> list[list[str]]:
    out = []
    for i, sent in enumerate(X):
        sent = list(sent)
        if not all(isinstance(t, str) for t in sent):
            raise ValueError(f"sequence {i} holds non-string tokens")
        out.append(sent)
    if not out:
        raise ValueError("X must hold at least one token sequence")
    return out


def check_vector_sequences(X) -> list[np.ndarray]:
    out = []
    dim = None
    for i, seq in enumerate(X):
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError(f"sequence {i} must be a non-empty (T, dim) array")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ValueError(f"sequence {i} has dim {arr.shape[1]}, expected {dim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sequence {i} holds non-finite values")
        out.append(arr)
    if not out:
        raise ValueError("X must hold at least one vector sequence")
    return out


class SkipGramEmbedder(BaseEstimator, TransformerMixin):
    """fit() trains skip-gram embeddings; transform() maps token
    sequences to (T, dim) float32 matrices (UNK for out-of-vocabulary)."""

    def __init__(self, dim=100, window=5, negatives=5, epochs=5,
                 learning_rate=0.025, min_count=2, seed=0):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.seed = seed

    def fit(self, X, y=None):
        config = embed.SgConfig(
            dim=self.dim, window=self.window, negatives=self.negatives,
            epochs=self.epochs, learning_rate=self.learning_rate,
            min_count=self.min_count, seed=self.seed,
        )
        self.table_ = embed.train_skipgram(check_token_sequences(X), config)
        return self

    def transform(self, X):
        if not hasattr(self, "table_"):
            raise VulnhoundError("SkipGramEmbedder is not fitted")
        rows = self.table_.input_vectors.astype(np.float32)
        return [
            rows[[self.table_.index(t) for t in sent]]
            for sent in check_token_sequences(X)
        ]


class LstmWindowClassifier(BaseEstimator, ClassifierMixin):
    """Binary sequence classifier over per-token vector windows."""

    def __init__(self, hidden=100, epochs=100, batch_size=128, dropout_rate=0.20,
                 learning_rate=1e-3, threshold=0.5, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.seed = seed

    def _config(self):
        return rnn.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, hidden=self.hidden,
            dropout_rate=self.dropout_rate, learning_rate=self.learning_rate,
            threshold=self.threshold, seed=self.seed,
        )

    def fit(self, X, y):
        seqs = check_vector_sequences(X)
        labels = np.asarray(y, dtype=np.float64)
        if labels.shape != (len(seqs),):
            raise ValueError("y must be one binary label per sequence")
        if not set(np.unique(labels)) <= {0.0, 1.0}:
            raise ValueError("labels must be binary")
        Xb, mask = rnn.batch_arrays(seqs)
        self.report_ = rnn.train(Xb, mask, labels, self._config())
        self.params_ = self.report_.params
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        if not hasattr(self, "params_"):
            raise VulnhoundError("LstmWindowClassifier is not fitted")
        seqs = check_vector_sequences(X)
        Xb, mask = rnn.batch_arrays(seqs)
        pos = rnn.forward_batch(self.params_, Xb, mask)
        return np.column_stack([1.0 - pos, pos])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)
