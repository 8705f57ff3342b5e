"""Codec tests: golden byte layouts, round trips, and error classification."""

import numpy as np
import pytest

from dcmq import io_formats
from dcmq.errors import CorruptFileError, UnsupportedFormatError
from dcmq.index_search import build_index
from dcmq.numerics import SeededRng
from dcmq.quantizer import init_codebooks
from dcmq.student import TrainConfig, train


class TestEmbeddings:
    def test_golden_bytes(self, tmp_path):
        """1x2 matrix [1.5, -2.0]: magic, LE u32 dims, LE f32 payload."""
        path = tmp_path / "a.emb"
        io_formats.write_embeddings(path, [[1.5, -2.0]])
        expected = (b"DCMQEMB1"
                    + bytes.fromhex("01000000" "02000000")
                    + bytes.fromhex("0000c03f" "000000c0"))
        assert path.read_bytes() == expected

    def test_round_trip_bitwise(self, tmp_path):
        rng = SeededRng(0)
        mat = rng.normal(size=(8, 16)).astype(np.float32)
        path = tmp_path / "b.emb"
        io_formats.write_embeddings(path, mat)
        back = io_formats.read_embeddings(path)
        assert np.array_equal(back.astype(np.float32), mat)
        io_formats.write_embeddings(tmp_path / "b2.emb", back)
        assert (tmp_path / "b2.emb").read_bytes() == path.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"XXXXXXXX" + bytes(8))
        with pytest.raises(UnsupportedFormatError):
            io_formats.read_embeddings(path)

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "t.emb"
        io_formats.write_embeddings(path, np.ones((2, 3)))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(CorruptFileError) as err:
            io_formats.read_embeddings(path)
        assert "need" in str(err.value) and "has" in str(err.value)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.emb"
        io_formats.write_embeddings(path, np.ones((2, 3)))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptFileError):
            io_formats.read_embeddings(path)


class TestLabels:
    def test_golden_bytes_lsb_first(self, tmp_path):
        path = tmp_path / "a.lbl"
        io_formats.write_labels(path, [[1, 0, 1]])
        expected = (b"DCMQLBL1"
                    + bytes.fromhex("01000000" "03000000") + b"\x05")
        assert path.read_bytes() == expected

    def test_round_trip(self, tmp_path):
        rng = SeededRng(1)
        labels = (rng.uniform(size=(10, 13)) < 0.4).astype(np.uint8)
        path = tmp_path / "b.lbl"
        io_formats.write_labels(path, labels)
        np.testing.assert_array_equal(io_formats.read_labels(path), labels)

    def test_nonzero_padding_rejected(self, tmp_path):
        path = tmp_path / "bad.lbl"
        # header says L=3 but the row byte sets bit 5
        path.write_bytes(b"DCMQLBL1"
                         + bytes.fromhex("01000000" "03000000") + b"\x25")
        with pytest.raises(CorruptFileError):
            io_formats.read_labels(path)


class TestCodebooks:
    def test_round_trip(self, tmp_path):
        books = init_codebooks(4, 8, 16, SeededRng(2))
        path = tmp_path / "c.cbk"
        io_formats.write_codebooks(path, books)
        back = io_formats.read_codebooks(path)
        assert back.codewords.shape == (4, 8, 4)
        assert np.array_equal(back.codewords.astype(np.float32),
                              books.codewords.astype(np.float32))

    def test_version_byte_checked(self, tmp_path):
        books = init_codebooks(2, 4, 8, SeededRng(3))
        path = tmp_path / "c.cbk"
        io_formats.write_codebooks(path, books)
        data = bytearray(path.read_bytes())
        data[8] = 9  # bump version
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedFormatError):
            io_formats.read_codebooks(path)


def tiny_trained_model():
    rng = SeededRng(4)
    fi = rng.normal(size=(32, 6))
    ft = rng.normal(size=(32, 7))
    ti = rng.normal(size=(32, 5))
    tt = rng.normal(size=(32, 5))
    cfg = TrainConfig(M=2, K=4, D=8, img_hidden=(5,), txt_hidden=(6, 5),
                      epochs=2, batch_size=16, lr=1e-3, seed=11)
    return train(cfg, fi, ft, ti, tt)


class TestModel:
    def test_round_trip_structurally_equal(self, tmp_path):
        model = tiny_trained_model()
        path = tmp_path / "m.mdl"
        io_formats.write_model(path, model)
        back = io_formats.read_model(path)
        assert back.config == model.config
        for (name, p), (_, q) in zip(sorted(model.parameters().items()),
                                     sorted(back.parameters().items())):
            assert np.array_equal(p.astype(np.float32),
                                  q.astype(np.float32)), name

    def test_rewrite_is_byte_identical(self, tmp_path):
        model = tiny_trained_model()
        path1 = tmp_path / "m1.mdl"
        path2 = tmp_path / "m2.mdl"
        io_formats.write_model(path1, model)
        io_formats.write_model(path2, io_formats.read_model(path1))
        assert path1.read_bytes() == path2.read_bytes()

    def test_truncation_detected(self, tmp_path):
        model = tiny_trained_model()
        path = tmp_path / "m.mdl"
        io_formats.write_model(path, model)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(CorruptFileError):
            io_formats.read_model(path)


class TestIndexFile:
    def test_round_trip_with_labels(self, tmp_path):
        rng = SeededRng(5)
        books = init_codebooks(2, 4, 8, rng)
        labels = (rng.uniform(size=(20, 3)) < 0.5).astype(np.uint8)
        index = build_index(rng.normal(size=(20, 8)), books, labels=labels)
        path = tmp_path / "g.idx"
        io_formats.write_index(path, index)
        back = io_formats.read_index(path)
        assert np.array_equal(back.codes, index.codes)
        assert np.array_equal(back.ids, index.ids)
        assert np.array_equal(back.labels, labels)
        assert np.array_equal(back.sub_indices, index.sub_indices)

    def test_round_trip_without_labels_and_empty(self, tmp_path):
        rng = SeededRng(6)
        books = init_codebooks(2, 4, 8, rng)
        for n in (0, 7):
            index = build_index(rng.normal(size=(n, 8)), books)
            path = tmp_path / f"g{n}.idx"
            io_formats.write_index(path, index)
            back = io_formats.read_index(path)
            assert back.size == n
            assert back.labels is None
            assert np.array_equal(back.codes, index.codes)

    def test_wrong_magic_for_reader(self, tmp_path):
        path = tmp_path / "c.cbk"
        io_formats.write_codebooks(path, init_codebooks(2, 4, 8, SeededRng(7)))
        with pytest.raises(UnsupportedFormatError):
            io_formats.read_index(path)
