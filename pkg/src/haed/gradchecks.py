"""Registered 64-bit gradient checks for every differentiable operation."""

import numpy as np
import torch

from .data import Batch
from .model import (CappedLSTMCell, DecoderConfig, EncoderConfig, HaedModel,
                    MainConfig, ModelConfig)
from .objectives import NegativePool, e2e_loss, iem_loss
from .substrate import grad_check

TINY_K = 4


def tiny_config(encoder_kind="mlp", main_kind="transformer") -> ModelConfig:
    return ModelConfig(
        k=TINY_K,
        encoder=EncoderConfig(kind=encoder_kind, mlp_hidden=(8, 8), rnn_units=6, embed_dim=4),
        main=MainConfig(kind=main_kind, layers=2, dim=12, ff_dim=16, heads=2, head_dim=4,
                        max_positions=10, rnn_units=6),
        decoder=DecoderConfig(units=8),
    )


def tiny_batch(seed=0, n_docs=2, segs_per_doc=3) -> Batch:
    rng = np.random.default_rng(seed)
    b = n_docs * segs_per_doc
    lengths = rng.integers(1, TINY_K + 1, size=b)
    tokens = np.full((b, TINY_K), 256, dtype=np.int64)
    for i, ln in enumerate(lengths):
        tokens[i, :ln] = rng.integers(0, 256, size=ln)
    return Batch(tokens, lengths.astype(np.int64),
                 np.repeat(np.arange(n_docs), segs_per_doc),
                 np.tile(np.arange(segs_per_doc), n_docs),
                 np.full(n_docs, segs_per_doc, dtype=np.int64))


def _model(encoder_kind="mlp", main_kind="transformer", seed=0) -> HaedModel:
    torch.manual_seed(seed)
    return HaedModel(tiny_config(encoder_kind, main_kind)).double()


def tiny_model_for_tests(encoder_kind="mlp", main_kind="transformer", seed=0) -> HaedModel:
    """Float32 tiny model for unit tests that don't need the 64-bit oracle."""
    torch.manual_seed(seed)
    return HaedModel(tiny_config(encoder_kind, main_kind))


def _params(module, prefix=""):
    return {prefix + n: p for n, p in module.named_parameters()}


def check_embed_and_mlp_encoder(eps=1e-5, seed=0):
    model = _model("mlp", seed=seed)
    batch = tiny_batch(seed)
    mix = torch.randn(6, 12, dtype=torch.float64, generator=torch.Generator().manual_seed(7))

    def loss_fn():
        return (model.encode(batch) * mix).sum()

    names = dict(model.embed.named_parameters(prefix="embed"))
    names.update(model.encoder.named_parameters(prefix="encoder"))
    return grad_check(loss_fn, dict(names), eps=eps, seed=seed)


def check_rnn_encoder(eps=1e-5, seed=0):
    model = _model("rnn", seed=seed)
    batch = tiny_batch(seed)
    mix = torch.randn(6, 12, dtype=torch.float64, generator=torch.Generator().manual_seed(7))

    def loss_fn():
        return (model.encode(batch) * mix).sum()

    return grad_check(loss_fn, dict(model.encoder.named_parameters()), eps=eps, seed=seed)


def check_capped_cell(eps=1e-5, seed=0):
    torch.manual_seed(seed)
    cell = CappedLSTMCell(5, 7).double()
    x = torch.randn(3, 4, 5, dtype=torch.float64)
    mix = torch.randn(4, 7, dtype=torch.float64)

    def loss_fn():
        h = x.new_zeros(4, 7)
        c = x.new_zeros(4, 7)
        for t in range(3):
            h, c = cell(x[t], (h, c))
        return (h * mix).sum()

    return grad_check(loss_fn, dict(cell.named_parameters()), eps=eps, seed=seed)


def check_transformer_main(eps=1e-5, seed=0):
    model = _model("mlp", "transformer", seed=seed)
    batch = tiny_batch(seed)
    enc = model.encode(batch).detach()
    mix = torch.randn_like(enc)

    def loss_fn():
        return (model.contexts(enc, batch) * mix).sum()

    return grad_check(loss_fn, dict(model.main.named_parameters()), eps=eps, seed=seed)


def check_rnn_main(eps=1e-5, seed=0):
    model = _model("mlp", "rnn", seed=seed)
    batch = tiny_batch(seed)
    enc = model.encode(batch).detach()
    mix = torch.randn_like(enc)

    def loss_fn():
        return (model.contexts(enc, batch) * mix).sum()

    return grad_check(loss_fn, dict(model.main.named_parameters()), eps=eps, seed=seed)


def check_decoder_e2e_loss(eps=1e-5, seed=0):
    model = _model("mlp", seed=seed)
    batch = tiny_batch(seed)
    ctx = model.contexts(model.encode(batch), batch).detach()
    targets = torch.from_numpy(batch.tokens)
    mask = torch.from_numpy(batch.pad_mask)

    def loss_fn():
        logits = model.decoder(ctx, targets)
        loss, _ = e2e_loss(logits, targets, mask)
        return loss

    return grad_check(loss_fn, dict(model.decoder.named_parameters()), eps=eps, seed=seed)


def check_iem_loss(eps=1e-5, seed=0):
    model = _model("mlp", seed=seed)
    batch = tiny_batch(seed)
    extra = tiny_batch(seed + 1)

    def loss_fn():
        enc = model.encode(batch)
        pool = NegativePool(torch.cat([enc, model.encode(extra)]),
                            torch.arange(batch.n_segments))
        ctx = model.contexts(enc, batch)
        loss, _ = iem_loss(ctx, pool)
        return loss

    params = {n: p for n, p in model.named_parameters() if not n.startswith("decoder.")}
    return grad_check(loss_fn, params, eps=eps, seed=seed)


def check_full_pipeline(eps=1e-5, seed=0):
    model = _model("mlp", seed=seed)
    batch = tiny_batch(seed)
    targets = torch.from_numpy(batch.tokens)
    mask = torch.from_numpy(batch.pad_mask)

    def loss_fn():
        loss, _ = e2e_loss(model(batch), targets, mask)
        return loss

    return grad_check(loss_fn, dict(model.named_parameters()), eps=eps, seed=seed)


REGISTRY = {
    "embed_mlp_encoder": check_embed_and_mlp_encoder,
    "rnn_encoder": check_rnn_encoder,
    "capped_cell": check_capped_cell,
    "transformer_main": check_transformer_main,
    "rnn_main": check_rnn_main,
    "decoder_e2e_loss": check_decoder_e2e_loss,
    "iem_loss": check_iem_loss,
    "full_pipeline": check_full_pipeline,
}


def run_all(eps=1e-5, seed=0):
    return {name: fn(eps=eps, seed=seed) for name, fn in REGISTRY.items()}
