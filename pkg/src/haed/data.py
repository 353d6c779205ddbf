"""Corpus loading, hard-coded hierarchies, and deterministic batch assembly.

Token streams are byte-level: text files contribute their raw bytes, images
contribute R,G,B channel values per pixel in row-major order. Id 256 is the PAD
token; it fills segment rows to length k and is never a prediction target.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, EmptyCorpus, Truncated

PAD = 256
VOCAB = 257
WHITESPACE = frozenset((0x20, 0x0A, 0x09, 0x0D))
MAX_SEGMENTS_PER_WINDOW = 100
HAIM_MAGIC = b"HAIM"


@dataclass
class TokenSequence:
    tokens: np.ndarray  # int64, values in [0, 255]
    source: str  # "text" | "image"

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.size == 0:
            raise EmptyCorpus("token sequence is empty")
        if self.tokens.min() < 0 or self.tokens.max() > 255:
            raise ValueError("token ids must lie in [0, 255]")

    def __len__(self):
        return int(self.tokens.size)


@dataclass
class HierarchyConfig:
    mode: str = "word"  # "word" | "fixed_k"
    k: int = 12

    def __post_init__(self):
        if self.mode not in ("word", "fixed_k"):
            raise ValueError(f"unknown hierarchy mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class SegmentedSequence:
    """Contiguous, non-overlapping partition of a TokenSequence into segments."""

    parent: TokenSequence
    starts: np.ndarray  # int64 [n_seg]
    lengths: np.ndarray  # int64 [n_seg]

    @property
    def n_segments(self):
        return int(self.lengths.size)

    def segment(self, i: int) -> np.ndarray:
        s = int(self.starts[i])
        return self.parent.tokens[s:s + int(self.lengths[i])]

    def check(self, k: int):
        assert self.lengths.min() >= 1 and self.lengths.max() <= k
        assert self.starts[0] == 0
        assert np.all(self.starts[1:] == self.starts[:-1] + self.lengths[:-1])
        assert self.starts[-1] + self.lengths[-1] == len(self.parent)


def load_text_corpus(path) -> TokenSequence:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        raise EmptyCorpus(f"{path} is empty")
    return TokenSequence(np.frombuffer(raw, dtype=np.uint8).astype(np.int64), "text")


def load_image_corpus(path) -> list[TokenSequence]:
    """Read a HAIM container: "HAIM" | count:u32le | H:u32le | W:u32le | count*H*W*3 RGB bytes."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != HAIM_MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise Truncated(f"{path}: header truncated")
    count, h, w = struct.unpack_from("<III", raw, 4)
    if count == 0:
        raise EmptyCorpus(f"{path}: zero images")
    per_image = h * w * 3
    payload = raw[16:]
    if len(payload) < count * per_image:
        raise Truncated(f"{path}: expected {count * per_image} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload[:count * per_image], dtype=np.uint8).astype(np.int64)
    return [TokenSequence(data[i * per_image:(i + 1) * per_image], "image") for i in range(count)]


def save_image_corpus(path, images: list[np.ndarray]):
    """Write a HAIM container from [H, W, 3] uint8 arrays (all the same shape)."""
    h, w, _ = images[0].shape
    with open(path, "wb") as f:
        f.write(HAIM_MAGIC)
        f.write(struct.pack("<III", len(images), h, w))
        for img in images:
            f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def segment_fixed(seq: TokenSequence, k: int) -> SegmentedSequence:
    """Consecutive segments of length k; a nonzero tail is kept as a short segment."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(seq)
    starts = np.arange(0, n, k, dtype=np.int64)
    lengths = np.minimum(k, n - starts)
    return SegmentedSequence(seq, starts, lengths)


def segment_words(seq: TokenSequence, max_len: int = 12) -> SegmentedSequence:
    """Word segmentation: a segment ends right after each whitespace byte.

    Whitespace attaches to the preceding word so the segments partition the
    stream exactly. Chunks longer than max_len split into max_len-sized pieces.
    """
    if seq.source != "text":
        raise ValueError("word segmentation requires a text source")
    tokens = seq.tokens
    ws = np.isin(tokens, list(WHITESPACE))
    boundaries = np.flatnonzero(ws) + 1  # segment ends (exclusive)
    if boundaries.size == 0 or boundaries[-1] != tokens.size:
        boundaries = np.append(boundaries, tokens.size)
    starts, lengths = [], []
    prev = 0
    for end in boundaries:
        chunk = int(end - prev)
        while chunk > 0:
            take = min(chunk, max_len)
            starts.append(prev)
            lengths.append(take)
            prev += take
            chunk -= take
    return SegmentedSequence(seq, np.array(starts, dtype=np.int64),
                             np.array(lengths, dtype=np.int64))


def segment(seq: TokenSequence, hierarchy: HierarchyConfig) -> SegmentedSequence:
    if hierarchy.mode == "word":
        return segment_words(seq, hierarchy.k)
    return segment_fixed(seq, hierarchy.k)


@dataclass
class Batch:
    """Padded segment grid plus the bookkeeping to regroup segments by document."""

    tokens: np.ndarray       # int64 [B_seg, k], PAD-filled
    lengths: np.ndarray      # int64 [B_seg]
    doc_index: np.ndarray    # int64 [B_seg], 0..n_docs-1, doc-major row order
    pos_in_doc: np.ndarray   # int64 [B_seg], segment position within its document window
    doc_seg_counts: np.ndarray  # int64 [n_docs]

    @property
    def n_segments(self):
        return int(self.tokens.shape[0])

    @property
    def n_docs(self):
        return int(self.doc_seg_counts.size)

    @property
    def pad_mask(self) -> np.ndarray:
        k = self.tokens.shape[1]
        return np.arange(k)[None, :] >= self.lengths[:, None]

    @property
    def real_tokens(self):
        return int(self.lengths.sum())


@dataclass
class BatchSpec:
    """Either documents-per-batch (images) or segments-per-batch (text)."""

    docs_per_batch: int | None = None
    segments_per_batch: int | None = None

    def __post_init__(self):
        if (self.docs_per_batch is None) == (self.segments_per_batch is None):
            raise ValueError("specify exactly one of docs_per_batch / segments_per_batch")


def _windows(doc: SegmentedSequence, cap: int = MAX_SEGMENTS_PER_WINDOW):
    """Split a document into windows of at most `cap` segments."""
    out = []
    for lo in range(0, doc.n_segments, cap):
        hi = min(lo + cap, doc.n_segments)
        out.append((doc, lo, hi))
    return out


class BatchStream:
    """Deterministic, indexable stream of batches over segmented documents.

    Window order is a seeded permutation; batch contents are then fixed, so the
    same (corpus, spec, seed) always yields byte-identical batches and training
    can resume from a bare step counter.
    """

    def __init__(self, docs: list[SegmentedSequence], spec: BatchSpec, k: int, seed: int):
        self.k = k
        windows = [w for d in docs for w in _windows(d)]
        order = np.random.default_rng(seed).permutation(len(windows))
        windows = [windows[i] for i in order]
        self._groups = []
        group = []
        seg_count = 0
        for w in windows:
            group.append(w)
            seg_count += w[2] - w[1]
            full = (len(group) >= spec.docs_per_batch if spec.docs_per_batch is not None
                    else seg_count >= spec.segments_per_batch)
            if full:
                self._groups.append(group)
                group, seg_count = [], 0
        if not self._groups:
            raise ValueError("corpus smaller than one batch")

    def __len__(self):
        return len(self._groups)

    def __getitem__(self, i: int) -> Batch:
        group = self._groups[i % len(self._groups)]
        rows, lengths, doc_index, pos_in_doc, counts = [], [], [], [], []
        for d, (doc, lo, hi) in enumerate(group):
            counts.append(hi - lo)
            for p, s in enumerate(range(lo, hi)):
                seg = doc.segment(s)
                row = np.full(self.k, PAD, dtype=np.int64)
                row[:seg.size] = seg
                rows.append(row)
                lengths.append(seg.size)
                doc_index.append(d)
                pos_in_doc.append(p)
        return Batch(np.stack(rows), np.array(lengths, dtype=np.int64),
                     np.array(doc_index, dtype=np.int64),
                     np.array(pos_in_doc, dtype=np.int64),
                     np.array(counts, dtype=np.int64))


def make_batches(docs, spec: BatchSpec, k: int, seed: int) -> BatchStream:
    return BatchStream(docs, spec, k, seed)


def make_synth_text(seed: int, size: int) -> bytes:
    """Deterministic synthetic text: seeded word soup over a small vocabulary.

    Word choice follows a sticky first-order chain so there is learnable
    structure well below the unigram byte entropy.
    """
    rng = np.random.default_rng(seed)
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    vocab = []
    while len(vocab) < 40:
        n = int(rng.integers(2, 9))
        w = "".join(alphabet[int(c)] for c in rng.integers(0, 26, size=n))
        if w not in vocab:
            vocab.append(w)
    out = bytearray()
    prev = 0
    while len(out) < size:
        if rng.random() < 0.7:
            cur = (prev + 1) % len(vocab)  # sticky successor
        else:
            cur = int(rng.integers(0, len(vocab)))
        out += vocab[cur].encode()
        out += b"\n" if rng.random() < 0.1 else b" "
        prev = cur
    return bytes(out[:size])


def make_synth_images(seed: int, count: int, h: int, w: int) -> list[np.ndarray]:
    """Deterministic synthetic images: smooth per-channel gradients plus noise."""
    rng = np.random.default_rng(seed)
    images = []
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(count):
        base = rng.integers(0, 128, size=3)
        img = np.stack([(base[c] + 4 * xx + 2 * yy) % 256 for c in range(3)], axis=-1)
        img = (img + rng.integers(0, 8, size=img.shape)) % 256
        images.append(img.astype(np.uint8))
    return images
