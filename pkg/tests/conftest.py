import numpy as np
import pytest
import torch

from haed import config as cfgmod
from haed import data as datamod


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(2)


def tiny_model_overlay(**overrides):
    base = {
        "model": {
            "embed_dim": 8,
            "encoder": {"mlp_hidden": [32, 32], "rnn_units": 16},
            "main": {"layers": 2, "dim": 32, "ff_dim": 64, "heads": 2, "head_dim": 16,
                     "max_positions": 100},
            "decoder": {"units": 64},
        },
        "schedule": {"warmup_steps": 0},
        "batch": {"segments_per_batch": 32},
    }
    base.update(overrides)
    return base


def tiny_cfg(corpus_path, out_dir, steps=20, seed=0, eval_every=10, **overlay):
    user = tiny_model_overlay(**overlay)
    user["dataset"] = {"path": str(corpus_path), **user.get("dataset", {})}
    user["run"] = {"steps": steps, "seed": seed, "eval_every": eval_every,
                   "out_dir": str(out_dir), **user.get("run", {})}
    return cfgmod.resolve(user)


@pytest.fixture
def text_corpus(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_bytes(datamod.make_synth_text(0, 40_000))
    return path


def random_batch(seed=0, n_docs=2, segs_per_doc=4, k=12):
    rng = np.random.default_rng(seed)
    b = n_docs * segs_per_doc
    lengths = rng.integers(1, k + 1, size=b).astype(np.int64)
    tokens = np.full((b, k), datamod.PAD, dtype=np.int64)
    for i, ln in enumerate(lengths):
        tokens[i, :ln] = rng.integers(0, 256, size=ln)
    return datamod.Batch(tokens, lengths,
                         np.repeat(np.arange(n_docs), segs_per_doc),
                         np.tile(np.arange(segs_per_doc), n_docs),
                         np.full(n_docs, segs_per_doc, dtype=np.int64))
