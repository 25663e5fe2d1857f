"""Shared fixtures: a tiny locally built Roberta-style checkpoint.

The real CodeBERT checkpoint is hundreds of megabytes and needs network
access, so the tests build a one-layer stand-in with the same hidden size
(768) and tokenizer family, which exercises every code path identically.
"""

import struct

import pytest
import torch
from tokenizers import ByteLevelBPETokenizer
from transformers import RobertaConfig, RobertaModel, RobertaTokenizerFast

CORPUS = [
    "import sqlite3\n",
    "def get_user(db, uid):\n",
    '    q = "SELECT * FROM users WHERE id=" + uid\n',
    "    return db.execute(q)\n",
    "cursor.execute(query, (value,))\n",
    "for row in rows:\n    print(row)\n",
    "total = count + 1\n",
    "name = input()\n",
] * 20


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("checkpoint")
    tok = ByteLevelBPETokenizer()
    tok.train_from_iterator(
        CORPUS, vocab_size=400, min_frequency=1,
        special_tokens=["<s>", "<pad>", "</s>", "<unk>", "<mask>"],
    )
    tok.save(str(path / "tokenizer.json"))
    fast = RobertaTokenizerFast(tokenizer_file=str(path / "tokenizer.json"))
    fast.save_pretrained(path)
    config = RobertaConfig(
        vocab_size=fast.vocab_size, hidden_size=768, num_hidden_layers=1,
        num_attention_heads=12, intermediate_size=256,
        max_position_embeddings=514, type_vocab_size=1,
        pad_token_id=1, bos_token_id=0, eos_token_id=2,
    )
    torch.manual_seed(0)
    RobertaModel(config).save_pretrained(path)
    return str(path)


def read_cvec(path):
    """Minimal independent CVEC reader used to inspect exporter output."""
    data = path.read_bytes() if hasattr(path, "read_bytes") else open(path, "rb").read()
    assert data[:4] == b"CVEC"
    version, dim, nseq = struct.unpack_from("<III", data, 4)
    assert version == 1
    pos = 16
    sequences = []
    for _ in range(nseq):
        (plen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        fpath = data[pos : pos + plen].decode("utf-8")
        pos += plen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        entries = []
        for _ in range(count):
            (tlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            token = data[pos : pos + tlen].decode("utf-8")
            pos += tlen
            start, end = struct.unpack_from("<QQ", data, pos)
            pos += 16
            vector = struct.unpack_from(f"<{dim}f", data, pos)
            pos += 4 * dim
            entries.append((token, start, end, vector))
        sequences.append((fpath, entries))
    assert pos == len(data)
    return dim, sequences
