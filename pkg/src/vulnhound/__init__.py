"""vulnhound: mine vulnerability-fix commits, train an embedding + LSTM
SQL-injection classifier, and benchmark it against SAST tool verdicts."""

from .cvec import VectorEntry, VectorSequence, load_vectors, store_vectors
from .dataset import (
    DatasetSplit,
    LabeledWindow,
    WindowSpec,
    dedup,
    label_tokens,
    make_windows,
    split,
)
from .embed import EmbeddingTable, SgConfig, embed_stream, train_skipgram
from .estimators import LstmWindowClassifier, SkipGramEmbedder
from .evalkit import Confusion, Metrics, compute_metrics, score_files, score_windows
from .miner import KeywordFilter, MinedChange, match_commit, mine_repository
from .pylex import Token, TokenKind, TokenStream, line_spans, tokenize
from .rnn import LstmParams, TrainConfig, forward, predict, train

__version__ = "0.1.0"

__all__ = [
    "Confusion",
    "DatasetSplit",
    "EmbeddingTable",
    "KeywordFilter",
    "LabeledWindow",
    "LstmParams",
    "LstmWindowClassifier",
    "Metrics",
    "MinedChange",
    "SgConfig",
    "SkipGramEmbedder",
    "Token",
    "TokenKind",
    "TokenStream",
    "TrainConfig",
    "VectorEntry",
    "VectorSequence",
    "WindowSpec",
    "compute_metrics",
    "dedup",
    "embed_stream",
    "forward",
    "label_tokens",
    "line_spans",
    "load_vectors",
    "make_windows",
    "match_commit",
    "mine_repository",
    "predict",
    "score_files",
    "score_windows",
    "split",
    "store_vectors",
    "tokenize",
    "train",
    "train_skipgram",
]
