import json

import numpy as np
import pytest
import torch

from cbx_exporter import (
    CheckpointUnavailableError,
    ExportJob,
    checkpoint_hash,
    encode_text,
    export,
    load_checkpoint,
)
from cbx_exporter.cli import main

from conftest import read_cvec

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
def loaded(checkpoint):
    return load_checkpoint(checkpoint, offline=True)


def run_export(checkpoint, tmp_path, files, **kw):
    out = tmp_path / "out.cvec"
    job = ExportJob(inputs=[str(f) for f in files], out_path=str(out),
                    model_id=checkpoint, offline=True, **kw)
    result = export(job, echo=lambda msg: None)
    return out, result


class TestExport:
    def test_empty_file_yields_zero_entries(self, checkpoint, tmp_path):
        src = tmp_path / "empty.py"
        src.write_text("")
        out, _ = run_export(checkpoint, tmp_path, [src])
        dim, sequences = read_cvec(out)
        assert dim == 768
        assert sequences == [(str(src), [])]

    def test_ten_line_fixture(self, checkpoint, tmp_path):
        src = tmp_path / "app.py"
        src.write_text(TEN_LINE_FIXTURE)
        out, result = run_export(checkpoint, tmp_path, [src])
        assert result.sequences == 1 and not result.skipped
        dim, sequences = read_cvec(out)
        assert dim == 768
        path, entries = sequences[0]
        assert path == str(src)
        assert entries
        size = len(TEN_LINE_FIXTURE.encode("utf-8"))
        prev = -1
        for _, start, end, vector in entries:
            assert 0 <= start < end <= size
            assert start >= prev
            prev = start
            assert len(vector) == 768
            assert all(np.isfinite(vector))

    def test_spans_cover_expected_source_bytes(self, checkpoint, tmp_path):
        src = tmp_path / "uni.py"
        text = 'label = "café"\nvalue = 1\n'
        src.write_text(text, encoding="utf-8")
        raw = text.encode("utf-8")
        out, _ = run_export(checkpoint, tmp_path, [src])
        _, sequences = read_cvec(out)
        for _, start, end, _ in sequences[0][1]:
            piece = raw[start:end]
            piece.decode("utf-8")  # spans sit on utf-8 boundaries
            assert piece.strip() or piece  # never zero-width

    def test_long_file_strictly_monotone(self, checkpoint, tmp_path, loaded):
        tokenizer, _ = loaded
        lines = [f"variable_{k} = query_{k} + {k}\n" for k in range(200)]
        text = "".join(lines)
        enc = tokenizer(text, add_special_tokens=False)
        assert len(enc["input_ids"]) > 512
        src = tmp_path / "long.py"
        src.write_text(text)
        out, _ = run_export(checkpoint, tmp_path, [src])
        _, sequences = read_cvec(out)
        entries = sequences[0][1]
        spans = [(s, e) for _, s, e, _ in entries]
        assert len(spans) == len(set(spans))
        assert all(a < b for (a, _), (b, _) in zip(spans, spans[1:]))

    def test_chunk_merge_keeps_innermost_vector(self, checkpoint, tmp_path, loaded):
        tokenizer, model = loaded
        text = "".join(f"alpha_{k} = beta_{k}\n" for k in range(12))
        entries = encode_text(text, tokenizer, model, max_len=18, overlap=6)
        # oracle: recompute every chunk and keep the vector whose position is
        # farthest from its chunk's edges
        enc = tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
        ids = enc["input_ids"]
        n = len(ids)
        content, step = 16, 10
        best = np.full(n, -1)
        expected = np.zeros((n, 768), dtype=np.float32)
        start = 0
        with torch.no_grad():
            while True:
                end = min(start + content, n)
                chunk = torch.tensor([[0, *ids[start:end], 2]])
                hidden = model(chunk).last_hidden_state[0, 1:-1].numpy()
                for i in range(start, end):
                    dist = min(i - start, end - 1 - i)
                    if dist > best[i]:
                        best[i] = dist
                        expected[i] = hidden[i - start]
                if end == n:
                    break
                start += step
        kept = [e for e, (cs, ce) in zip(expected, enc["offset_mapping"]) if cs != ce]
        assert len(entries) == len(kept)
        for entry, vec in zip(entries, kept):
            np.testing.assert_array_equal(
                np.asarray(entry.vector, dtype=np.float32), vec
            )

    def test_unreadable_file_skipped_and_logged(self, checkpoint, tmp_path):
        good = tmp_path / "good.py"
        good.write_text("x = 1\n")
        binary = tmp_path / "bad.py"
        binary.write_bytes(b"\xff\xfe\x00garbage")
        missing = tmp_path / "missing.py"
        out, result = run_export(checkpoint, tmp_path, [good, binary, missing])
        assert result.sequences == 1
        assert {s["path"] for s in result.skipped} == {str(binary), str(missing)}
        meta = json.loads((tmp_path / "out.cvec.meta.json").read_text())
        assert {s["path"] for s in meta["skipped"]} == {str(binary), str(missing)}

    def test_meta_sidecar_records_checkpoint(self, checkpoint, tmp_path, loaded):
        src = tmp_path / "a.py"
        src.write_text("x = 1\n")
        run_export(checkpoint, tmp_path, [src])
        meta = json.loads((tmp_path / "out.cvec.meta.json").read_text())
        assert meta["checkpoint"] == checkpoint
        assert meta["dim"] == 768
        _, model = loaded
        assert meta["checkpoint_sha256"] == checkpoint_hash(model)
        assert len(meta["checkpoint_sha256"]) == 64

    def test_export_is_deterministic(self, checkpoint, tmp_path):
        src = tmp_path / "a.py"
        src.write_text(TEN_LINE_FIXTURE)
        out1, _ = run_export(checkpoint, tmp_path / "r1", [src])
        out2, _ = run_export(checkpoint, tmp_path / "r2", [src])
        assert out1.read_bytes() == out2.read_bytes()

    def test_missing_checkpoint_is_hard_error(self, tmp_path):
        with pytest.raises(CheckpointUnavailableError):
            load_checkpoint(str(tmp_path / "nope"), offline=True)

    def test_bad_overlap_rejected(self):
        with pytest.raises(ValueError):
            ExportJob(inputs=[], out_path="x.cvec", max_len=10, overlap=8)


@pytest.fixture(autouse=True)
def make_dirs(tmp_path):
    (tmp_path / "r1").mkdir(exist_ok=True)
    (tmp_path / "r2").mkdir(exist_ok=True)


class TestCli:
    def test_export_via_cli(self, checkpoint, tmp_path, capsys):
        src = tmp_path / "a.py"
        src.write_text("x = 1\n")
        listing = tmp_path / "files.txt"
        listing.write_text(f"{src}\n")
        out = tmp_path / "out.cvec"
        code = main([
            "--input", str(listing), "--out", str(out),
            "--model", checkpoint, "--offline",
        ])
        assert code == 0
        assert "wrote 1 sequence(s)" in capsys.readouterr().out
        dim, sequences = read_cvec(out)
        assert dim == 768 and sequences[0][0] == str(src)

    def test_direct_py_inputs(self, checkpoint, tmp_path):
        a = tmp_path / "a.py"
        a.write_text("x = 1\n")
        b = tmp_path / "b.py"
        b.write_text("y = 2\n")
        out = tmp_path / "out.cvec"
        code = main([
            "--input", str(a), "--input", str(b), "--out", str(out),
            "--model", checkpoint, "--offline",
        ])
        assert code == 0
        _, sequences = read_cvec(out)
        assert [s[0] for s in sequences] == [str(a), str(b)]

    def test_unavailable_checkpoint_exit_2(self, tmp_path, capsys):
        src = tmp_path / "a.py"
        src.write_text("x = 1\n")
        code = main([
            "--input", str(src), "--out", str(tmp_path / "o.cvec"),
            "--model", str(tmp_path / "nope"), "--offline",
        ])
        assert code == 2

    def test_bad_overlap_exit_1(self, checkpoint, tmp_path):
        src = tmp_path / "a.py"
        src.write_text("x = 1\n")
        code = main([
            "--input", str(src), "--out", str(tmp_path / "o.cvec"),
            "--model", checkpoint, "--offline",
            "--max-len", "10", "--overlap", "9",
        ])
        assert code == 1
