import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haed import data
from haed.errors import BadMagic, EmptyCorpus, Truncated


class TestLoadTextCorpus:
    def test_ascii_bytes(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_bytes(b"ab")
        seq = data.load_text_corpus(p)
        assert seq.tokens.tolist() == [97, 98]
        assert seq.source == "text"

    def test_utf8_multibyte(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("é", encoding="utf-8")
        assert data.load_text_corpus(p).tokens.tolist() == [195, 169]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_bytes(b"")
        with pytest.raises(EmptyCorpus):
            data.load_text_corpus(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_text_corpus(tmp_path / "nope.txt")


class TestHaimContainer:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "c.haim"
        imgs = data.make_synth_images(0, 2, 2, 2)
        data.save_image_corpus(p, imgs)
        seqs = data.load_image_corpus(p)
        assert len(seqs) == 2
        assert len(seqs[0]) == 2 * 2 * 3
        assert seqs[0].tokens.tolist() == imgs[0].reshape(-1).tolist()

    def test_single_image_length(self, tmp_path):
        p = tmp_path / "c.haim"
        data.save_image_corpus(p, data.make_synth_images(1, 1, 2, 2))
        (seq,) = data.load_image_corpus(p)
        assert len(seq) == 12

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.haim"
        p.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(BadMagic):
            data.load_image_corpus(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "c.haim"
        data.save_image_corpus(p, data.make_synth_images(0, 1, 2, 2))
        raw = bytearray(p.read_bytes())
        raw[4] = 2  # claim two images, payload holds one
        p.write_bytes(bytes(raw))
        with pytest.raises(Truncated):
            data.load_image_corpus(p)

    def test_zero_images(self, tmp_path):
        p = tmp_path / "c.haim"
        import struct
        p.write_bytes(b"HAIM" + struct.pack("<III", 0, 2, 2))
        with pytest.raises(EmptyCorpus):
            data.load_image_corpus(p)


def _text_seq(b: bytes):
    return data.TokenSequence(np.frombuffer(b, dtype=np.uint8).astype(np.int64), "text")


class TestSegmentFixed:
    @pytest.mark.parametrize("n,k,expected", [
        (24, 12, [12, 12]),
        (25, 12, [12, 12, 1]),
        (5, 12, [5]),
    ])
    def test_lengths(self, n, k, expected):
        seq = data.TokenSequence(np.arange(n) % 256, "image")
        seg = data.segment_fixed(seq, k)
        assert seg.lengths.tolist() == expected
        seg.check(k)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            data.segment_fixed(_text_seq(b"abc"), 0)


class TestSegmentWords:
    def test_whitespace_attaches_to_word(self):
        seg = data.segment_words(_text_seq(b"to be"))
        pieces = [bytes(seg.segment(i).astype(np.uint8)) for i in range(seg.n_segments)]
        assert pieces == [b"to ", b"be"]

    def test_long_word_split(self):
        seg = data.segment_words(_text_seq(b"a" * 26))
        assert seg.lengths.tolist() == [12, 12, 2]

    def test_newline_is_boundary(self):
        seg = data.segment_words(_text_seq(b"a\nb"))
        pieces = [bytes(seg.segment(i).astype(np.uint8)) for i in range(seg.n_segments)]
        assert pieces == [b"a\n", b"b"]

    def test_rejects_image_source(self):
        seq = data.TokenSequence(np.zeros(4, dtype=np.int64), "image")
        with pytest.raises(ValueError):
            data.segment_words(seq)


@given(st.binary(min_size=1, max_size=400))
@settings(max_examples=100, deadline=None)
def test_word_segmentation_roundtrip(raw):
    seq = _text_seq(raw)
    seg = data.segment_words(seq)
    seg.check(12)
    joined = np.concatenate([seg.segment(i) for i in range(seg.n_segments)])
    assert joined.tolist() == seq.tokens.tolist()


@given(st.binary(min_size=1, max_size=400), st.integers(1, 20))
@settings(max_examples=100, deadline=None)
def test_fixed_segmentation_roundtrip(raw, k):
    seq = _text_seq(raw)
    seg = data.segment_fixed(seq, k)
    seg.check(k)
    joined = np.concatenate([seg.segment(i) for i in range(seg.n_segments)])
    assert joined.tolist() == seq.tokens.tolist()


class TestBatching:
    def _docs(self, n_docs=2, segs=2, k=12):
        docs = []
        for i in range(n_docs):
            seq = data.TokenSequence((np.arange(segs * k) + i) % 256, "image")
            docs.append(data.segment_fixed(seq, k))
        return docs

    def test_doc_batching_segment_count(self):
        stream = data.make_batches(self._docs(), data.BatchSpec(docs_per_batch=2), 12, 0)
        batch = stream[0]
        assert batch.n_segments == 4
        assert batch.n_docs == 2

    def test_padding_and_mask(self):
        seq = data.TokenSequence(np.arange(5), "image")
        docs = [data.segment_fixed(seq, 12)]
        stream = data.make_batches(docs, data.BatchSpec(docs_per_batch=1), 12, 0)
        row = stream[0].tokens[0]
        assert row[:5].tolist() == list(range(5))
        assert (row[5:] == data.PAD).all()
        assert stream[0].pad_mask[0].tolist() == [False] * 5 + [True] * 7

    def test_determinism(self):
        a = data.make_batches(self._docs(6), data.BatchSpec(docs_per_batch=2), 12, 7)
        b = data.make_batches(self._docs(6), data.BatchSpec(docs_per_batch=2), 12, 7)
        for i in range(len(a)):
            assert np.array_equal(a[i].tokens, b[i].tokens)
            assert np.array_equal(a[i].doc_index, b[i].doc_index)

    def test_seed_changes_order(self):
        a = data.make_batches(self._docs(8), data.BatchSpec(docs_per_batch=2), 12, 0)
        b = data.make_batches(self._docs(8), data.BatchSpec(docs_per_batch=2), 12, 1)
        assert any(not np.array_equal(a[i].tokens, b[i].tokens) for i in range(len(a)))

    def test_window_cap(self):
        seq = data.TokenSequence(np.arange(250 * 12) % 256, "image")
        docs = [data.segment_fixed(seq, 12)]  # 250 segments -> windows of <= 100
        stream = data.make_batches(docs, data.BatchSpec(docs_per_batch=1), 12, 0)
        for i in range(len(stream)):
            assert stream[i].doc_seg_counts.max() <= 100

    def test_too_small_corpus(self):
        with pytest.raises(ValueError):
            data.make_batches(self._docs(1), data.BatchSpec(docs_per_batch=5), 12, 0)

    def test_segments_per_batch_mode(self):
        stream = data.make_batches(self._docs(4, segs=3),
                                   data.BatchSpec(segments_per_batch=6), 12, 0)
        assert stream[0].n_segments >= 6


class TestSynth:
    def test_text_deterministic(self):
        assert data.make_synth_text(3, 1000) == data.make_synth_text(3, 1000)
        assert data.make_synth_text(3, 1000) != data.make_synth_text(4, 1000)

    def test_images_deterministic(self):
        a = data.make_synth_images(5, 2, 4, 4)
        b = data.make_synth_images(5, 2, 4, 4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
