"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line and enforcing its stated tolerance and time budget."""

import math
import shutil
import struct
import time
from contextlib import contextmanager

import numpy as np
import pytest

from vulnhound import cvec, dataset as ds, embed, evalkit, miner, pipeline, pylex, rnn
from vulnhound.errors import (
    BadMagicError,
    NonFiniteVectorError,
    NonMonotoneSpanError,
    TruncatedRecordError,
    VersionMismatchError,
)
from vulnhound.providers import TableProvider, windows_to_arrays

from conftest import PRE_FIX_APP, POST_FIX_APP


@contextmanager
def criterion(number, name, budget_s=None):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {name}: FAIL")
        raise
    elapsed = time.monotonic() - start
    if budget_s is not None and elapsed > budget_s:
        print(f"ACCEPTANCE {number} {name}: FAIL (took {elapsed:.1f}s > {budget_s}s)")
        raise AssertionError(f"criterion {number} exceeded {budget_s}s budget")
    print(f"ACCEPTANCE {number} {name}: PASS ({elapsed:.1f}s)")


def test_criterion_1_gradient_oracle():
    with criterion(1, "BPTT gradient vs central differences", budget_s=10):
        from test_rnn import max_rel_error, numeric_gradient

        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            dim = int(rng.integers(1, 6))
            hidden = int(rng.integers(1, 5))
            T = int(rng.integers(1, 8))
            params = rnn.init_params(dim, hidden, rng)
            X = rng.normal(0, 1, (1, T, dim))
            mask = np.ones((1, T), dtype=bool)
            labels = rng.integers(0, 2, 1).astype(float)
            _, grads = rnn.backward(params, X, mask, labels)
            numeric = numeric_gradient(params, X, mask, labels)
            worst = max(worst, max_rel_error(grads, numeric))
        assert worst < 1e-4, f"max relative error {worst:.2e}"


def test_criterion_2_metric_consistency_with_reported_values():
    with criterion(2, "metric consistency with published tables"):
        # rounded P/R pairs reproduce the rounded F1 within 0.15 pp
        f1_a = evalkit.f1_from(0.862, 0.800)
        assert abs(f1_a - 0.831) < 0.0015, f"F1 {f1_a:.4f}"
        f1_b = evalkit.f1_from(0.980, 0.942)
        assert abs(f1_b - 0.961) < 0.0015, f"F1 {f1_b:.4f}"
        # a tool with zero flagged files renders an undefined precision as "-"
        text, _ = evalkit.comparison_table(
            [("bandit", evalkit.Confusion(tp=0, fp=0, fn=3, tn=10))]
        )
        assert "-" in text.splitlines()[1].split()


def test_criterion_3_exhaustive_metrics_oracle():
    with criterion(3, "exhaustive confusion-matrix oracle", budget_s=1):
        for tp in range(7):
            for fp in range(7):
                for fn in range(7):
                    for tn in range(7):
                        total = tp + fp + fn + tn
                        if total == 0:
                            continue
                        m = evalkit.compute_metrics(evalkit.Confusion(tp, fp, fn, tn))
                        assert m.accuracy == (tp + tn) / total
                        expect_p = tp / (tp + fp) if tp + fp else None
                        expect_r = tp / (tp + fn) if tp + fn else None
                        assert m.precision == expect_p
                        assert m.recall == expect_r
                        if expect_p is None or expect_r is None or expect_p + expect_r == 0:
                            assert m.f1 is None
                        else:
                            direct = 2 * expect_p * expect_r / (expect_p + expect_r)
                            assert abs(m.f1 - direct) <= math.ulp(direct)


def test_criterion_4_overfit_oracle():
    with criterion(4, "overfit on 64 marker windows", budget_s=120):
        rng = np.random.default_rng(0)
        n, T, dim = 64, 12, 8
        X = rng.normal(0, 0.3, (n, T, dim))
        labels = np.zeros(n)
        marker = np.full(dim, 2.0)
        for k in range(n // 2):
            X[k, rng.integers(0, T)] = marker
            labels[k] = 1.0
        mask = np.ones((n, T), dtype=bool)
        # Table-1 hyperparameters, batch clamped to the dataset size
        config = rnn.TrainConfig(
            epochs=200, batch_size=64, hidden=100, dropout_rate=0.20,
            learning_rate=1e-3, seed=1,
        )
        report = rnn.train(X, mask, labels, config)
        _, verdicts = rnn.predict_batch(report.params, X, mask)
        metrics = evalkit.compute_metrics(
            evalkit.score_windows(verdicts.tolist(), labels.tolist())
        )
        assert metrics.f1 is not None and metrics.f1 >= 0.95, f"F1 {metrics.f1}"


TABLES = ("users", "orders", "items", "logs", "events", "posts")
COLUMNS = ("id", "name", "owner", "email", "price", "status")
VARS = ("uid", "name", "term", "value", "param", "arg")


def synthetic_snippet(rng, positive):
    table = TABLES[rng.integers(len(TABLES))]
    column = COLUMNS[rng.integers(len(COLUMNS))]
    var = VARS[rng.integers(len(VARS))]
    filler = [
        f"count = {rng.integers(100)}\n",
        f"logger.info('{table}')\n",
        f"total = count + {rng.integers(9)}\n",
    ]
    if positive:
        body = (
            f'query = "SELECT {column} FROM {table} WHERE {column}=" + {var}\n'
            "cursor.execute(query)\n"
        )
    else:
        body = (
            f'query = "SELECT {column} FROM {table} WHERE {column}=?"\n'
            f"cursor.execute(query, ({var},))\n"
        )
    parts = [filler[rng.integers(len(filler))], body, filler[rng.integers(len(filler))]]
    return "".join(parts)


def synthetic_window(rng, positive, repo_id, spec):
    source = synthetic_snippet(rng, positive)
    stream = pylex.tokenize(source)
    labels = [0] * len(stream.tokens)
    windows = ds.make_windows(
        stream, labels, spec, repo_id=repo_id, commit_id="syn", file_path="syn.py"
    )
    w = windows[0]
    return ds.LabeledWindow(
        tokens=w.tokens,
        token_spans=w.token_spans,
        label=int(positive),
        repo_id=repo_id,
        commit_id=w.commit_id,
        file_path=w.file_path,
        start_index=0,
        pad_len=w.pad_len,
    )


def test_criterion_5_qualitative_table2_mirror():
    with criterion(5, "held-out F1 on synthetic concat-into-execute corpus",
                   budget_s=600):
        rng = np.random.default_rng(42)
        spec = ds.WindowSpec(window_len=48, stride=48)
        windows = []
        for repo in range(60):
            for k in range(10):
                windows.append(
                    synthetic_window(rng, positive=k % 2 == 0, repo_id=f"repo{repo}",
                                     spec=spec)
                )
        assert len(windows) >= 500
        split = ds.split(windows, (0.70, 0.15, 0.15), seed=42)
        table = embed.train_skipgram(
            [list(w.tokens) for w in split.train],
            embed.SgConfig(dim=32, epochs=2, min_count=1, seed=42),
        )
        provider = TableProvider(table)
        X, mask, labels = windows_to_arrays(split.train, provider)
        config = rnn.TrainConfig(
            epochs=30, batch_size=128, hidden=32, dropout_rate=0.20,
            learning_rate=1e-3, seed=42,
        )
        report = rnn.train(X, mask, labels, config)
        tX, tmask, tlabels = windows_to_arrays(split.test, provider)
        _, verdicts = rnn.predict_batch(report.params, tX, tmask)
        metrics = evalkit.compute_metrics(
            evalkit.score_windows(verdicts.tolist(), tlabels.tolist())
        )
        assert metrics.f1 is not None and metrics.f1 >= 0.80, f"held-out F1 {metrics.f1}"


def test_criterion_6_mining_fixture(fixture_repo):
    with criterion(6, "hand-enumerated mining fixture", budget_s=5):
        changes = miner.mine_repository(fixture_repo)
        assert len(changes) == 1
        change = changes[0]
        assert change.repo_id == "repo"
        assert change.file_path == "app.py"
        assert change.pre_image == PRE_FIX_APP
        assert change.changed_lines == (4, 5)
        # hand-enumerated token/window counts for the pre-fix image at (16, 8):
        # 39 tokens -> window starts 0,8,16,24,32; changed lines cover token
        # indices 12..26, so the first four windows are positive
        stream = pylex.tokenize(change.pre_image)
        assert len(stream.tokens) == 39
        labels = ds.label_tokens(change, stream, pylex.line_spans(change.pre_image))
        windows = ds.make_windows(stream, labels, ds.WindowSpec(16, 8))
        assert len(windows) == 5
        assert [w.label for w in windows] == [1, 1, 1, 1, 0]


def test_criterion_7_pipeline_determinism(fixture_repo, tmp_path):
    with criterion(7, "byte-identical pipeline artifacts", budget_s=120):
        scan_dir = tmp_path / "scanme"
        scan_dir.mkdir()
        (scan_dir / "vulnerable.py").write_text(PRE_FIX_APP, encoding="utf-8")
        (scan_dir / "clean.py").write_text(POST_FIX_APP, encoding="utf-8")
        out = tmp_path / "out"
        config = pipeline.PipelineConfig(
            repos=[str(fixture_repo)],
            out_dir=str(out),
            window_len=16, stride=8, seed=11,
            sg_dim=8, sg_epochs=1, sg_min_count=1,
            epochs=3, batch_size=8, hidden=4, dropout_rate=0.20,
            scan_paths=[str(scan_dir)],
        )
        artifacts = (
            "train.jsonl", "validation.jsonl", "test.jsonl",
            "model.vlsm", "scan_report.json",
        )
        pipeline.run_pipeline(config, echo=lambda *a: None)
        first = {a: (out / a).read_bytes() for a in artifacts}
        shutil.rmtree(out)
        pipeline.run_pipeline(config, echo=lambda *a: None)
        second = {a: (out / a).read_bytes() for a in artifacts}
        for name in artifacts:
            assert first[name] == second[name], f"{name} differs between runs"


def test_criterion_8_skipgram_properties():
    with criterion(8, "skip-gram gradient + cosine ordering", budget_s=60):
        from test_embed import ALT_CORPUS, TestPairGradients, cosine

        checker = TestPairGradients()
        for seed in range(5):
            rng = np.random.default_rng(seed)
            v_c = rng.normal(0, 0.5, 6)
            u_o = rng.normal(0, 0.5, 6)
            u_n = rng.normal(0, 0.5, (4, 6))
            _, g_c, g_o, g_n = embed.pair_gradients(v_c, u_o, u_n)
            fd_c, fd_o, fd_n = checker._finite_diff(v_c, u_o, u_n)
            for analytic, numeric in ((g_c, fd_c), (g_o, fd_o), (g_n, fd_n)):
                denom = np.maximum(np.abs(numeric), 1e-8)
                err = np.max(np.abs(analytic - numeric) / denom)
                assert err < 1e-6, f"pair-loss gradient error {err:.2e}"

        wins = 0
        for seed in range(20):
            table = embed.train_skipgram(
                ALT_CORPUS, embed.SgConfig(dim=16, epochs=2, min_count=2, seed=seed)
            )
            same = cosine(table.vector("exec"), table.vector("query"))
            diff = cosine(table.vector("exec"), table.vector("rare"))
            wins += same > diff
        assert wins >= 19, f"cosine ordering held in only {wins}/20 runs"


def _cvec_bytes(n=2):
    """Hand-assembled valid CVEC file: 1 sequence, dim 2, n entries."""
    out = bytearray()
    out += b"CVEC" + struct.pack("<III", 1, 2, 1)
    out += struct.pack("<H", 4) + b"f.py" + struct.pack("<I", n)
    for i in range(n):
        tok = f"t{i}".encode()
        out += struct.pack("<H", len(tok)) + tok
        out += struct.pack("<QQ", i * 2, i * 2 + 1)
        out += np.array([i, i + 0.5], dtype="<f4").tobytes()
    return out


def test_criterion_9_cvec_round_trip(tmp_path):
    with criterion(9, "CVEC round-trip and malformed-file rejection", budget_s=60):
        rng = np.random.default_rng(7)
        for trial in range(100):
            dim = int(rng.integers(1, 8))
            seqs = []
            for s in range(rng.integers(0, 4)):
                n = int(rng.integers(0, 6))
                starts = np.sort(rng.integers(0, 1000, n))
                entries = [
                    cvec.VectorEntry(
                        f"tok{k}",
                        int(starts[k]),
                        int(starts[k]) + int(rng.integers(1, 5)),
                        tuple(
                            float(v)
                            for v in rng.normal(0, 1, dim).astype(np.float32)
                        ),
                    )
                    for k in range(n)
                ]
                seqs.append(cvec.VectorSequence(f"f{s}.py", "external", dim, entries))
            path = tmp_path / f"t{trial}.cvec"
            cvec.store_vectors(seqs, path)
            loaded = cvec.load_vectors(path)
            assert [s.file_path for s in loaded] == [s.file_path for s in seqs]
            assert [s.entries for s in loaded] == [s.entries for s in seqs]
            # store(load(x)) is also an identity at the byte level
            path2 = tmp_path / f"t{trial}b.cvec"
            cvec.store_vectors(loaded, path2)
            assert path.read_bytes() == path2.read_bytes()

        def expect(raw, exc_type):
            p = tmp_path / "bad.cvec"
            p.write_bytes(bytes(raw))
            with pytest.raises(exc_type) as exc:
                cvec.load_vectors(p)
            assert hasattr(exc.value, "offset")

        raw = _cvec_bytes()
        bad_magic = bytearray(raw); bad_magic[:4] = b"NOPE"
        expect(bad_magic, BadMagicError)
        bad_version = bytearray(raw); bad_version[4:8] = struct.pack("<I", 2)
        expect(bad_version, VersionMismatchError)
        expect(raw[:-5], TruncatedRecordError)
        bad_vec = bytearray(_cvec_bytes(1))
        bad_vec[-8:] = np.array([np.inf, 0], dtype="<f4").tobytes()
        expect(bad_vec, NonFiniteVectorError)
        bad_span = bytearray(raw)
        bad_span[30:38] = struct.pack("<Q", 99)  # first entry start > second
        expect(bad_span, NonMonotoneSpanError)


TEN_LINE_FIXTURE = """\
import sqlite3

def get_user(db, uid):
    q = "SELECT * FROM users WHERE id=" + uid
    return db.execute(q)

def put_user(db, name):
    q = "INSERT INTO users (name) VALUES (?)"
    return db.execute(q, (name,))
"""


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    """Local stand-in checkpoint: same tokenizer family and hidden size (768)
    as the default public one, built offline."""
    import torch
    from tokenizers import ByteLevelBPETokenizer
    from transformers import RobertaConfig, RobertaModel, RobertaTokenizerFast

    path = tmp_path_factory.mktemp("checkpoint")
    corpus = TEN_LINE_FIXTURE.splitlines(keepends=True) * 20
    tok = ByteLevelBPETokenizer()
    tok.train_from_iterator(
        corpus, vocab_size=400, min_frequency=1,
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


def test_criterion_10_exporter_conformance(tiny_checkpoint, tmp_path):
    cbx = pytest.importorskip(
        "cbx_exporter",
        reason="cbx-exporter is not installed; install it from exporter/ "
        "to run the exporter conformance criterion",
    )
    from vulnhound.providers import SequenceProvider

    with criterion(10, "exporter output conforms to the CVEC contract"):
        fixture = tmp_path / "hotspot.py"
        fixture.write_text(TEN_LINE_FIXTURE, encoding="utf-8")
        out = tmp_path / "vectors.cvec"
        cbx.export(
            cbx.ExportJob(
                inputs=[str(fixture)], out_path=str(out),
                model_id=tiny_checkpoint, offline=True,
            ),
            echo=lambda msg: None,
        )
        sequences = cvec.load_vectors(out)
        assert len(sequences) == 1
        seq = sequences[0]
        assert seq.dim == 768
        assert seq.entries
        size = len(TEN_LINE_FIXTURE.encode("utf-8"))
        prev = -1
        for e in seq.entries:
            assert 0 <= e.start < e.end <= size
            assert e.start >= prev
            prev = e.start

        # end-to-end scan over the exported vectors
        rng = np.random.default_rng(3)
        params = rnn.init_params(768, 4, rng)
        report = pipeline.scan(
            [fixture], params, threshold=0.5,
            provider=SequenceProvider(sequences),
            spec=ds.WindowSpec(16, 8), model_id="acceptance",
        )
        entry = report["files"][0]
        assert entry["path"] == str(fixture)
        assert entry.get("error") is None
        assert entry["verdict"] in (True, False)
        assert entry["windows"]

        # long-file fixture (> 512 subtokens): spans stay strictly monotone
        long_src = tmp_path / "long.py"
        long_src.write_text(
            "".join(f"variable_{k} = query_{k} + {k}\n" for k in range(300))
        )
        long_out = tmp_path / "long.cvec"
        cbx.export(
            cbx.ExportJob(
                inputs=[str(long_src)], out_path=str(long_out),
                model_id=tiny_checkpoint, offline=True,
            ),
            echo=lambda msg: None,
        )
        (long_seq,) = cvec.load_vectors(long_out)
        assert len(long_seq.entries) > 512
        spans = [(e.start, e.end) for e in long_seq.entries]
        assert len(spans) == len(set(spans))
        assert all(a[0] < b[0] for a, b in zip(spans, spans[1:]))
