"""Training losses: end-to-end token likelihood and the sampled-softmax
implicit-embedding-matrix (IEM) loss with in-batch + extra-batch negatives."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import Batch

LN2 = math.log(2.0)


@dataclass
class LossReport:
    total_nats: float
    count: int          # real (non-PAD) tokens, or segments for the IEM loss
    mean_nats: float
    bpt: float | None   # bits per real token; None for segment-level losses
    segment_count: int

    @classmethod
    def from_token_loss(cls, total_nats: float, tokens: int, segments: int):
        mean = total_nats / tokens
        return cls(total_nats, tokens, mean, mean / LN2, segments)

    @classmethod
    def from_segment_loss(cls, total_nats: float, segments: int):
        return cls(total_nats, segments, total_nats / segments, None, segments)


def e2e_loss(logits: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor):
    """Mean token cross-entropy over real positions.

    logits [B, k, V], targets [B, k], pad_mask true at PAD positions.
    Returns (scalar loss tensor in nats, LossReport).
    """
    real = ~pad_mask
    n_real = int(real.sum())
    if n_real == 0:
        raise ValueError("all positions are masked")
    flat_logits = logits[real]
    flat_targets = targets[real]
    per_pos = F.cross_entropy(flat_logits, flat_targets, reduction="none")
    loss = per_pos.mean()
    return loss, LossReport.from_token_loss(float(per_pos.detach().sum()), n_real, logits.shape[0])


@dataclass
class NegativePool:
    """Rows of the implicit embedding matrix used to estimate the softmax normalizer."""

    encodings: torch.Tensor      # [P, dim]
    positive_index: torch.Tensor  # [B_seg] index of each context's own segment


def build_negative_pool(model, batch: Batch, extra_batches: list[Batch]) -> NegativePool:
    """Encode the gradient batch plus E extra batches; gradients flow into all rows.

    Pool rows start with the gradient batch's own encodings, so context i's
    positive is row i. Duplicate segment contents stay as distinct rows.
    """
    if batch.n_segments == 0:
        raise ValueError("empty batch")
    rows = [model.encode(batch)]
    rows += [model.encode(b) for b in extra_batches]
    pool = torch.cat(rows, dim=0)
    return NegativePool(pool, torch.arange(batch.n_segments))


def iem_loss(contexts: torch.Tensor, pool: NegativePool):
    """Sampled-softmax cross-entropy of context vectors against pool rows.

    Logits are raw dot products (no temperature). Returns (loss tensor,
    LossReport in nats per segment).
    """
    if contexts.shape[-1] != pool.encodings.shape[-1]:
        raise ValueError("context/pool width mismatch")
    logits = contexts @ pool.encodings.T  # [B_seg, P]
    per_ctx = F.cross_entropy(logits, pool.positive_index, reduction="none")
    loss = per_ctx.mean()
    return loss, LossReport.from_segment_loss(float(per_ctx.detach().sum()), contexts.shape[0])


def uniform_bpt(vocab: int) -> float:
    return math.log2(vocab)
