"""Evaluation and benchmarking: bits-per-token, entropy baseline, component
wall-clock breakdown, and the ablation / decoupling sweep drivers."""

import copy
import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import data as datamod
from . import training
from .model import HaedModel
from .objectives import LossReport, e2e_loss

SWEEP_COLUMNS = ["point_id", "axis", "value", "phase", "final_loss_nats", "final_bpt",
                 "decoder_frac", "wallclock_s", "seed", "config_hash", "status"]


@torch.no_grad()
def evaluate_bpt(model: HaedModel, batches) -> LossReport:
    """Teacher-forced bits per real token over a batch iterable; no gradients."""
    model.eval()
    total_nats = 0.0
    tokens = 0
    segments = 0
    empty = True
    for batch in batches:
        empty = False
        logits = model(batch)
        targets = torch.from_numpy(batch.tokens)
        mask = torch.from_numpy(batch.pad_mask)
        _, report = e2e_loss(logits, targets, mask)
        total_nats += report.total_nats
        tokens += report.count
        segments += report.segment_count
    if empty:
        raise ValueError("empty evaluation slice")
    return LossReport.from_token_loss(total_nats, tokens, segments)


def evaluate_checkpoint(checkpoint_path, data_path, kind="text", max_batches=None,
                        half=None) -> LossReport:
    blob = training.load_checkpoint(checkpoint_path)
    cfg = blob["config"]
    cfg = copy.deepcopy(cfg)
    cfg["dataset"]["path"] = str(data_path)
    cfg["dataset"]["kind"] = kind
    model = training.build_model(cfg, cfg["run"]["seed"])
    model.load_state_dict(blob["params"], strict=False)
    docs = training.load_corpus_docs(cfg, half)
    stream = datamod.make_batches(docs, cfgmod.batch_spec(cfg),
                                  cfg["dataset"]["hierarchy"]["k"], cfg["run"]["seed"])
    n = len(stream) if max_batches is None else min(max_batches, len(stream))
    return evaluate_bpt(model, (stream[i] for i in range(n)))


def order0_baseline(tokens: np.ndarray) -> float:
    """Empirical unigram byte entropy in bits per token."""
    tokens = np.asarray(tokens)
    if tokens.size == 0:
        raise ValueError("empty slice")
    counts = np.bincount(tokens, minlength=256).astype(np.float64)
    p = counts[counts > 0] / tokens.size
    return float(-(p * np.log2(p)).sum())


@dataclass
class TimingReport:
    mean_ms: dict        # component -> mean forward+backward ms per batch
    fractions: dict      # component -> share of the total
    trials: int
    warmup_excluded: int
    reliable: bool


def _timed(fn, trials, warmup):
    times = []
    for t in range(warmup + trials):
        start = time.perf_counter()
        fn()
        elapsed = time.perf_counter() - start
        if t >= warmup:
            times.append(elapsed)
    return sum(times) / len(times)


def timing_breakdown(model: HaedModel, batch, trials: int = 20, warmup: int = 5) -> TimingReport:
    """Mean forward+backward wall-clock per component on one fixed batch.

    Components are timed in isolation with detached inputs; "other" is the
    residual of a full training step against the component sum.
    """
    if trials < 20:
        raise ValueError("need at least 20 trials")
    model.train()
    tokens = torch.from_numpy(batch.tokens)
    mask = torch.from_numpy(batch.pad_mask)
    emb = model.embed(tokens).detach()
    lengths = torch.from_numpy(batch.lengths)

    def run_encoder():
        out = model.encoder(emb, lengths)
        out.sum().backward()
        model.zero_grad(set_to_none=True)

    enc0 = model.encode(batch).detach()

    def run_main():
        out = model.contexts(enc0, batch)
        out.sum().backward()
        model.zero_grad(set_to_none=True)

    ctx0 = model.contexts(model.encode(batch), batch).detach()

    def run_decoder():
        logits = model.decoder(ctx0, tokens)
        loss, _ = e2e_loss(logits, tokens, mask)
        loss.backward()
        model.zero_grad(set_to_none=True)

    def run_full():
        logits = model(batch)
        loss, _ = e2e_loss(logits, tokens, mask)
        loss.backward()
        model.zero_grad(set_to_none=True)

    t_enc = _timed(run_encoder, trials, warmup)
    t_main = _timed(run_main, trials, warmup)
    t_dec = _timed(run_decoder, trials, warmup)
    t_full = _timed(run_full, trials, warmup)
    t_other = max(t_full - (t_enc + t_main + t_dec), 0.0)
    total = t_enc + t_main + t_dec + t_other
    mean_ms = {"encoder": t_enc * 1e3, "main": t_main * 1e3,
               "decoder": t_dec * 1e3, "other": t_other * 1e3}
    fractions = {k: v / (total * 1e3) for k, v in mean_ms.items()}
    resolution = _timer_resolution()
    reliable = resolution < 0.01 * min(t_enc, t_main, t_dec)
    return TimingReport(mean_ms, fractions, trials, warmup, reliable)


def _timer_resolution():
    best = float("inf")
    for _ in range(50):
        a = time.perf_counter()
        b = time.perf_counter()
        while b == a:
            b = time.perf_counter()
        best = min(best, b - a)
    return best


def _write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)


def decoder_width_sweep(cfg: dict, widths, out_dir, trials: int = 20,
                        train_steps: int | None = None):
    """One sweep point per decoder width: short training run plus a timing breakdown."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    reports = {}
    for i, units in enumerate(widths):
        point = copy.deepcopy(cfg)
        point["model"]["decoder"]["units"] = int(units)
        seed = cfg["run"]["seed"] + i
        point["run"]["seed"] = seed
        if train_steps is not None:
            point["run"]["steps"] = train_steps
        status = "ok"
        loss_nats = bpt = dec_frac = wall = ""
        try:
            t0 = time.perf_counter()
            if train_steps != 0:
                art = training.train_e2e(point, out_dir / f"point_{i}")
                loss_nats, bpt = f"{art.final_loss_nats:.6g}", f"{art.final_bpt:.6g}"
            docs = training.load_corpus_docs(point)
            stream = datamod.make_batches(docs, cfgmod.batch_spec(point),
                                          point["dataset"]["hierarchy"]["k"], seed)
            model = training.build_model(point, seed)
            rep = timing_breakdown(model, stream[0], trials=trials)
            reports[int(units)] = rep
            dec_frac = f"{rep.fractions['decoder']:.6g}"
            wall = f"{time.perf_counter() - t0:.3f}"
        except Exception as e:  # a failing point is recorded, not fatal
            status = f"failed:{type(e).__name__}"
        rows.append([i, "decoder_units", int(units), "e2e", loss_nats, bpt, dec_frac,
                     wall, seed, cfgmod.config_hash(point), status])
    _write_sweep_csv(out_dir / "sweep.csv", rows)
    from . import plots
    plots.render_decoder_sweep(reports, out_dir / "sweep.png")
    return rows, reports


def encoder_width_sweep(cfg: dict, widths, out_dir, train_steps: int | None = None):
    """Vary LSTM encoder units with the rest of the model held fixed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, units in enumerate(widths):
        point = copy.deepcopy(cfg)
        point["model"]["encoder"]["kind"] = "rnn"
        point["model"]["encoder"]["rnn_units"] = int(units)
        seed = cfg["run"]["seed"] + i
        point["run"]["seed"] = seed
        if train_steps is not None:
            point["run"]["steps"] = train_steps
        status = "ok"
        loss_nats = bpt = wall = ""
        try:
            art = training.train_e2e(point, out_dir / f"point_{i}")
            loss_nats, bpt = f"{art.final_loss_nats:.6g}", f"{art.final_bpt:.6g}"
            wall = f"{art.wallclock_s:.3f}"
        except Exception as e:
            status = f"failed:{type(e).__name__}"
        rows.append([i, "encoder_units", int(units), "e2e", loss_nats, bpt, "",
                     wall, seed, cfgmod.config_hash(point), status])
    _write_sweep_csv(out_dir / "sweep.csv", rows)
    return rows


def decoupling_sweep(cfg: dict, out_dir, pretrain_steps: int | None = None,
                     finetune_steps: int | None = None):
    """Decoupled-training comparison: IEM pretrain + finetune vs end-to-end from scratch.

    Both arms use the same finetune-step budget on the second data half; the
    baseline's encoder/main stay randomly initialized.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pre_cfg = copy.deepcopy(cfg)
    pre_cfg["objective"]["kind"] = "iem"
    pre_cfg = cfgmod.resolve(_strip_resolved(pre_cfg))
    pre_cfg["model"] = copy.deepcopy(cfg["model"])  # identical architecture in both arms
    if pretrain_steps is not None:
        pre_cfg["run"]["steps"] = pretrain_steps
    pre = training.pretrain_iem(pre_cfg, out_dir / "pretrain", half="first")

    ft_cfg = copy.deepcopy(cfg)
    if finetune_steps is not None:
        ft_cfg["run"]["steps"] = finetune_steps
    ft = training.finetune(pre.checkpoint_path, ft_cfg, out_dir / "finetune", half="second")

    base_cfg = copy.deepcopy(ft_cfg)
    base = training.train_e2e(base_cfg, out_dir / "baseline", half="second")

    rows = [
        [0, "regime", "pretrain", "iem", f"{pre.final_loss_nats:.6g}", "", "",
         f"{pre.wallclock_s:.3f}", pre_cfg["run"]["seed"], cfgmod.config_hash(pre_cfg), "ok"],
        [1, "regime", "pretrain+finetune", "finetune", f"{ft.final_loss_nats:.6g}",
         f"{ft.final_bpt:.6g}", "", f"{ft.wallclock_s:.3f}", ft_cfg["run"]["seed"],
         cfgmod.config_hash(ft_cfg), "ok"],
        [2, "regime", "scratch", "e2e", f"{base.final_loss_nats:.6g}",
         f"{base.final_bpt:.6g}", "", f"{base.wallclock_s:.3f}", base_cfg["run"]["seed"],
         cfgmod.config_hash(base_cfg), "ok"],
    ]
    _write_sweep_csv(out_dir / "sweep.csv", rows)
    from . import plots
    plots.render_decoupling(ft.metrics_path, base.metrics_path, out_dir / "sweep.png")
    return {"pretrain": pre, "finetune": ft, "baseline": base}


def _strip_resolved(cfg):
    # resolve() fills kind-dependent defaults; clear them so they re-resolve for IEM
    c = copy.deepcopy(cfg)
    c["model"]["main"]["heads"] = c["model"]["main"]["heads"]
    return c


def baseline_bpt_for_corpus(path) -> float:
    seq = datamod.load_text_corpus(path)
    return order0_baseline(seq.tokens)


def uniform_logits_bpt() -> float:
    return math.log2(datamod.VOCAB)
