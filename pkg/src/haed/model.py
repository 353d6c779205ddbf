"""Hierarchical encoder / main model / decoder.

The encoder maps each segment to a vector with no cross-segment context, the
main model runs causally over the segment-encoding stream (one learned BOS
vector prepended, so prediction i sees only segments < i), and the recurrent
decoder emits token logits for one segment conditioned on its context vector.
"""

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .data import PAD, VOCAB, Batch
from .errors import WindowTooLong


@dataclass
class EncoderConfig:
    kind: str = "mlp"  # "mlp" | "rnn"
    mlp_hidden: tuple = (256, 256)
    rnn_units: int = 1024
    embed_dim: int = 10

    def __post_init__(self):
        if self.rnn_units < 1 or self.embed_dim < 1:
            raise ValueError("encoder widths must be >= 1")


@dataclass
class MainConfig:
    kind: str = "transformer"  # "transformer" | "rnn"
    layers: int = 6
    dim: int = 356
    ff_dim: int = 1424
    heads: int = 8
    head_dim: int = 32
    max_positions: int = 100
    rnn_units: int = 1500


@dataclass
class DecoderConfig:
    units: int = 1024
    vocab: int = VOCAB

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("decoder units must be >= 1")


@dataclass
class ModelConfig:
    k: int = 12
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    main: MainConfig = field(default_factory=MainConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


def adapt_width(v: torch.Tensor, d: int) -> torch.Tensor:
    """Zero-pad or truncate the last axis to width d."""
    w = v.shape[-1]
    if w == d:
        return v
    if w > d:
        return v[..., :d]
    pad = v.new_zeros(*v.shape[:-1], d - w)
    return torch.cat([v, pad], dim=-1)


class TokenEmbedding(nn.Module):
    """Learned embedding for the 256 byte values plus PAD (its own learned row)."""

    def __init__(self, dim: int):
        super().__init__()
        self.table = nn.Embedding(VOCAB, dim)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (ids.min() < 0 or ids.max() >= VOCAB):
            raise IndexError(f"token id out of range [0, {VOCAB})")
        return self.table(ids)


class MlpEncoder(nn.Module):
    """Two-layer MLP over the k concatenated token embeddings (PAD rows fill the tail)."""

    def __init__(self, cfg: EncoderConfig, k: int, out_dim: int):
        super().__init__()
        h1, h2 = cfg.mlp_hidden
        self.net = nn.Sequential(
            nn.Linear(k * cfg.embed_dim, h1), nn.ReLU(),
            nn.Linear(h1, h2), nn.ReLU(),
        )
        self.out_dim = out_dim

    def forward(self, emb: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        b = emb.shape[0]
        return adapt_width(self.net(emb.reshape(b, -1)), self.out_dim)


class RnnEncoder(nn.Module):
    """LSTM over the first `length` positions of each segment; final hidden state."""

    def __init__(self, cfg: EncoderConfig, out_dim: int):
        super().__init__()
        self.cell = nn.LSTMCell(cfg.embed_dim, cfg.rnn_units)
        self.out_dim = out_dim

    def forward(self, emb: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        b, k, _ = emb.shape
        h = emb.new_zeros(b, self.cell.hidden_size)
        c = emb.new_zeros(b, self.cell.hidden_size)
        states = []
        for t in range(k):
            h, c = self.cell(emb[:, t], (h, c))
            states.append(h)
        stacked = torch.stack(states, dim=1)  # [b, k, units]
        idx = (lengths - 1).clamp(min=0)
        final = stacked[torch.arange(b), idx]
        return adapt_width(final, self.out_dim)


class CappedLSTMCell(nn.Module):
    """LSTM cell with the input gate capped at 1 minus the forget gate.

    The effective input gate min(i, 1-f) bounds the cell state in [-1, 1]
    whenever it starts there.
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden_size, input_size))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.zeros(4 * hidden_size))
        bound = 1.0 / math.sqrt(hidden_size)
        for w in (self.weight_ih, self.weight_hh):
            nn.init.uniform_(w, -bound, bound)

    def forward(self, x, state):
        h, c = state
        z = x @ self.weight_ih.T + h @ self.weight_hh.T + self.bias
        i, f, g, o = z.chunk(4, dim=-1)
        i = torch.sigmoid(i)
        f = torch.sigmoid(f)
        g = torch.tanh(g)
        o = torch.sigmoid(o)
        i_eff = torch.minimum(i, 1.0 - f)
        c = f * c + i_eff * g
        h = o * torch.tanh(c)
        return h, c


class SelfAttention(nn.Module):
    def __init__(self, cfg: MainConfig):
        super().__init__()
        inner = cfg.heads * cfg.head_dim
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.qkv = nn.Linear(cfg.dim, 3 * inner)
        self.out = nn.Linear(inner, cfg.dim)

    def forward(self, x, mask):
        b, m, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (b, m, self.heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att + mask
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, m, -1)
        return self.out(y)


class TransformerBlock(nn.Module):
    def __init__(self, cfg: MainConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.dim, cfg.ff_dim), nn.ReLU(), nn.Linear(cfg.ff_dim, cfg.dim))

    def forward(self, x, mask):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


class MainTransformer(nn.Module):
    """Causal transformer over segment encodings with learned absolute positions."""

    def __init__(self, cfg: MainConfig):
        super().__init__()
        self.cfg = cfg
        self.bos = nn.Parameter(torch.zeros(cfg.dim))
        self.pos = nn.Embedding(cfg.max_positions, cfg.dim)
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.dim)

    def forward(self, encodings: torch.Tensor) -> torch.Tensor:
        """[D, m, dim] segment encodings -> [D, m, dim] context vectors.

        Input position i consumes encoding i-1 (position 0 consumes BOS), so
        output i depends only on segments strictly before i.
        """
        d, m, dim = encodings.shape
        if m > self.cfg.max_positions:
            raise WindowTooLong(f"{m} segments exceed the {self.cfg.max_positions}-position table")
        x = torch.cat([self.bos.expand(d, 1, dim), encodings[:, :-1]], dim=1)
        x = x + self.pos(torch.arange(m, device=x.device))
        mask = torch.full((m, m), float("-inf"), dtype=x.dtype).triu(1)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.ln_f(x)


class MainRnn(nn.Module):
    """Capped-input-gate LSTM over segment encodings, output projected to model width."""

    def __init__(self, cfg: MainConfig):
        super().__init__()
        self.cfg = cfg
        self.bos = nn.Parameter(torch.zeros(cfg.dim))
        self.cell = CappedLSTMCell(cfg.dim, cfg.rnn_units)
        self.proj = nn.Linear(cfg.rnn_units, cfg.dim)

    def forward(self, encodings: torch.Tensor) -> torch.Tensor:
        d, m, dim = encodings.shape
        x = torch.cat([self.bos.expand(d, 1, dim), encodings[:, :-1]], dim=1)
        h = x.new_zeros(d, self.cfg.rnn_units)
        c = x.new_zeros(d, self.cfg.rnn_units)
        outs = []
        for t in range(m):
            h, c = self.cell(x[:, t], (h, c))
            outs.append(h)
        return self.proj(torch.stack(outs, dim=1))


class SegmentDecoder(nn.Module):
    """LSTM decoder: context vector seeds the initial state, tokens teacher-force the rest."""

    def __init__(self, cfg: DecoderConfig, embed: TokenEmbedding, main_dim: int):
        super().__init__()
        self.cfg = cfg
        self.embed = embed
        self.init_proj = nn.Linear(main_dim, 2 * cfg.units)
        self.cell = nn.LSTMCell(embed.table.embedding_dim, cfg.units)
        self.bos_token = nn.Parameter(torch.zeros(embed.table.embedding_dim))
        self.out = nn.Linear(cfg.units, cfg.vocab)

    def forward(self, contexts: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """[B, dim] contexts, [B, k] token ids -> [B, k, vocab] logits.

        Step t consumes the embedding of token t-1 (step 0 consumes the learned
        BOS embedding) and predicts token t.
        """
        b, k = tokens.shape
        h, c = self.init_proj(contexts).chunk(2, dim=-1)
        emb = self.embed(tokens)
        logits = []
        x = self.bos_token.expand(b, -1)
        for t in range(k):
            h, c = self.cell(x, (h, c))
            logits.append(self.out(h))
            if t + 1 < k:
                x = emb[:, t]
        return torch.stack(logits, dim=1)


class HaedModel(nn.Module):
    """Full hierarchy: embed -> encode segments -> main model -> decode segments."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg.encoder.embed_dim)
        if cfg.encoder.kind == "mlp":
            self.encoder = MlpEncoder(cfg.encoder, cfg.k, cfg.main.dim)
        else:
            self.encoder = RnnEncoder(cfg.encoder, cfg.main.dim)
        self.main = MainTransformer(cfg.main) if cfg.main.kind == "transformer" else MainRnn(cfg.main)
        self.decoder = SegmentDecoder(cfg.decoder, self.embed, cfg.main.dim)

    def _tensors(self, batch: Batch, device=None):
        dtype = next(self.parameters()).dtype
        tokens = torch.from_numpy(batch.tokens)
        return tokens, dtype

    def encode(self, batch: Batch) -> torch.Tensor:
        """[B_seg, main_dim] context-free segment encodings."""
        tokens, _ = self._tensors(batch)
        lengths = torch.from_numpy(batch.lengths)
        return self.encoder(self.embed(tokens), lengths)

    def contexts(self, encodings: torch.Tensor, batch: Batch) -> torch.Tensor:
        """Regroup encodings by document, run the main model, regather per segment."""
        d = batch.n_docs
        m = int(batch.doc_seg_counts.max())
        grid = encodings.new_zeros(d, m, encodings.shape[-1])
        di = torch.from_numpy(batch.doc_index)
        pi = torch.from_numpy(batch.pos_in_doc)
        grid[di, pi] = encodings
        ctx_grid = self.main(grid)
        return ctx_grid[di, pi]

    def decode(self, contexts: torch.Tensor, batch: Batch) -> torch.Tensor:
        tokens, _ = self._tensors(batch)
        return self.decoder(contexts, tokens)

    def forward(self, batch: Batch) -> torch.Tensor:
        """[B_seg, k, vocab] teacher-forced logits for every segment in the batch."""
        enc = self.encode(batch)
        ctx = self.contexts(enc, batch)
        return self.decode(ctx, batch)

    def param_groups(self):
        """(enc_dec, main) parameter name lists; the two learning-rate groups."""
        main_names = [f"main.{n}" for n, _ in self.main.named_parameters()]
        enc_dec = [n for n, _ in self.named_parameters() if n not in main_names]
        return enc_dec, main_names
