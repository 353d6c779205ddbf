"""Optimizer, schedules, and the three training procedures
(end-to-end, IEM pretraining, decoder fine-tuning)."""

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import data as datamod
from .errors import ConfigError, TrainingDiverged
from .model import HaedModel
from .objectives import build_negative_pool, e2e_loss, iem_loss
from .substrate import clip_global_norm

METRICS_COLUMNS = ["step", "phase", "loss_nats", "bpt", "lr_enc_dec", "lr_main",
                   "wallclock_s", "tokens_seen"]


@dataclass
class Schedule:
    warmup: int
    total: int
    floor_frac: float = 0.05

    def __post_init__(self):
        if not 0 <= self.warmup < self.total:
            raise ValueError(f"need 0 <= warmup < total, got {self.warmup}, {self.total}")


def lr_at(schedule: Schedule, step: int, peak: float) -> float:
    """Linear warmup to `peak`, then cosine decay to floor_frac * peak at `total`."""
    if step < schedule.warmup:
        return peak * step / schedule.warmup
    floor = schedule.floor_frac * peak
    span = schedule.total - schedule.warmup
    frac = (step - schedule.warmup) / span
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Bias-corrected Adam with decoupled weight decay over named parameter groups.

    Each group carries its own peak learning rate; decay is applied as
    p <- p - lr * wd * p, independent of the gradient term.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        # groups: list of (group_name, [(param_name, tensor), ...])
        self.groups = [(gname, list(params)) for gname, params in groups]
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for _, ps in self.groups for n, p in ps}
        self.v = {n: torch.zeros_like(p) for _, ps in self.groups for n, p in ps}

    def parameter_names(self):
        return [n for _, ps in self.groups for n, _ in ps]

    @torch.no_grad()
    def step(self, lrs: dict):
        """Apply one update; lrs maps group name to learning rate."""
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for gname, params in self.groups:
            lr = lrs[gname]
            for name, p in params:
                g = p.grad
                if g is None:
                    g = torch.zeros_like(p)
                if not torch.isfinite(g).all():
                    raise TrainingDiverged(f"non-finite gradient for {name}")
                m = self.m[name]
                v = self.v[name]
                m.mul_(b1).add_(g, alpha=1.0 - b1)
                v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
                update = (m / bc1) / ((v / bc2).sqrt() + self.eps)
                if self.weight_decay:
                    p.mul_(1.0 - lr * self.weight_decay)
                p.add_(update, alpha=-lr)

    def state_dict(self):
        return {"step_count": self.step_count,
                "m": {n: t.clone() for n, t in self.m.items()},
                "v": {n: t.clone() for n, t in self.v.items()}}

    def load_state_dict(self, state):
        self.step_count = state["step_count"]
        for n in self.m:
            self.m[n].copy_(state["m"][n])
            self.v[n].copy_(state["v"][n])


@dataclass
class RunArtifacts:
    out_dir: Path
    checkpoint_path: Path
    metrics_path: Path
    config_path: Path
    final_loss_nats: float
    final_bpt: float | None
    wallclock_s: float


def model_hash(cfg: dict) -> str:
    return cfgmod.config_hash({"model": cfg["model"], "hierarchy": cfg["dataset"]["hierarchy"]})


def save_checkpoint(path: Path, model, opt: AdamW, step: int, phase: str, cfg: dict,
                    tokens_seen: int = 0):
    blob = {
        "params": model.state_dict(),
        "opt": opt.state_dict() if opt is not None else None,
        "step": step,
        "phase": phase,
        "tokens_seen": tokens_seen,
        "torch_rng": torch.get_rng_state(),
        "config": cfg,
    }
    torch.save(blob, path)
    manifest = {
        "config_hash": cfgmod.config_hash(cfg),
        "model_hash": model_hash(cfg),
        "step": step,
        "phase": phase,
        "parameter_names": list(blob["params"].keys()),
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path):
    return torch.load(path, weights_only=False)


def load_corpus_docs(cfg: dict, half: str | None = None):
    """Load and segment the configured corpus; contiguous halves for decoupling runs."""
    ds = cfg["dataset"]
    hierarchy = cfgmod.hierarchy_config(cfg)
    if ds["kind"] == "text":
        seq = datamod.load_text_corpus(ds["path"])
        tokens = seq.tokens
        if half == "first":
            tokens = tokens[:len(tokens) // 2]
        elif half == "second":
            tokens = tokens[len(tokens) // 2:]
        seqs = [datamod.TokenSequence(tokens, "text")]
    else:
        seqs = datamod.load_image_corpus(ds["path"])
        if half == "first":
            seqs = seqs[:len(seqs) // 2]
        elif half == "second":
            seqs = seqs[len(seqs) // 2:]
    return [datamod.segment(s, hierarchy) for s in seqs]


def build_model(cfg: dict, seed: int | None = None) -> HaedModel:
    if seed is not None:
        torch.manual_seed(seed)
    return HaedModel(cfgmod.model_config(cfg))


def make_optimizer(model: HaedModel, cfg: dict, include_decoder: bool = True) -> AdamW:
    enc_dec, main = model.param_groups()
    if not include_decoder:
        enc_dec = [n for n in enc_dec if not n.startswith("decoder.")]
    params = dict(model.named_parameters())
    groups = [("enc_dec", [(n, params[n]) for n in enc_dec]),
              ("main", [(n, params[n]) for n in main])]
    opt = cfg["optimizer"]
    return AdamW(groups, betas=(opt["beta1"], opt["beta2"]), eps=opt["eps"],
                 weight_decay=opt["weight_decay"])


class MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        with open(path, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_COLUMNS)

    def row(self, step, phase, loss_nats, bpt, lr_enc_dec, lr_main, wallclock_s, tokens_seen):
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([
                step, phase, f"{loss_nats:.10g}", "" if bpt is None else f"{bpt:.10g}",
                f"{lr_enc_dec:.10g}", f"{lr_main:.10g}", f"{wallclock_s:.3f}", tokens_seen])


def _run_training(cfg, out_dir, phase, model, opt, step_fn, steps, start_step=0,
                  start_tokens=0, stop_after=None):
    """Shared loop: schedule, clipping, metrics cadence, checkpointing, NaN policy.

    step_fn(step) -> (loss tensor, LossReport, tokens consumed this step).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "resolved_config.json"
    config_path.write_text(json.dumps(cfg, indent=2, sort_keys=True))
    metrics = MetricsWriter(out_dir / "metrics.csv")
    ckpt_path = out_dir / "checkpoint.pt"

    schedule = Schedule(cfg["schedule"]["warmup_steps"], steps,
                        cfg["schedule"]["floor_frac"])
    peaks = {"enc_dec": cfg["optimizer"]["lr_enc_dec"], "main": cfg["optimizer"]["lr_main"]}
    clip = cfg["optimizer"]["clip_norm"]
    eval_every = cfg["run"]["eval_every"]
    param_map = dict(model.named_parameters())
    trainable = [param_map[n] for n in opt.parameter_names()]

    t0 = time.perf_counter()
    tokens_seen = start_tokens
    last = steps if stop_after is None else min(steps, stop_after)
    report = None
    for step in range(start_step, last):
        loss, report, consumed = step_fn(step)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step} "
                                   f"(last-good checkpoint: {ckpt_path})")
        for p in trainable:
            p.grad = None
        loss.backward()
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in trainable]
        clipped, _ = clip_global_norm(grads, clip)
        for p, g in zip(trainable, clipped):
            p.grad = g
        lrs = {g: lr_at(schedule, step, peak) for g, peak in peaks.items()}
        opt.step(lrs)
        tokens_seen += consumed
        done = step + 1
        if done % eval_every == 0 or done == last:
            metrics.row(done, phase, report.mean_nats, report.bpt,
                        lrs["enc_dec"], lrs["main"], time.perf_counter() - t0, tokens_seen)
            save_checkpoint(ckpt_path, model, opt, done, phase, cfg, tokens_seen)

    from . import plots
    plots.render_metrics(out_dir / "metrics.csv", out_dir / "metrics.png")
    return RunArtifacts(out_dir, ckpt_path, out_dir / "metrics.csv", config_path,
                        report.mean_nats, report.bpt, time.perf_counter() - t0)


def _resolve_steps(cfg, stream_len, per_step=1):
    steps = cfg["run"]["steps"]
    if steps is None:
        steps = stream_len // per_step  # one pass over the corpus slice
    if steps < 1:
        raise ConfigError("run.steps resolves to 0; corpus too small")
    return steps


def train_e2e(cfg: dict, out_dir=None, half: str | None = None,
              resume=None, stop_after=None) -> RunArtifacts:
    """End-to-end training: embed -> encode -> main -> decode -> token likelihood."""
    seed = cfg["run"]["seed"]
    docs = load_corpus_docs(cfg, half)
    stream = datamod.make_batches(docs, cfgmod.batch_spec(cfg),
                                  cfg["dataset"]["hierarchy"]["k"], seed)
    steps = _resolve_steps(cfg, len(stream))
    model = build_model(cfg, seed)
    opt = make_optimizer(model, cfg)
    start_step = 0
    start_tokens = 0
    if resume is not None:
        blob = load_checkpoint(resume)
        model.load_state_dict(blob["params"])
        opt.load_state_dict(blob["opt"])
        start_step = blob["step"]
        start_tokens = blob.get("tokens_seen", 0)
        torch.set_rng_state(blob["torch_rng"])

    def step_fn(step):
        batch = stream[step]
        logits = model(batch)
        targets = torch.from_numpy(batch.tokens)
        mask = torch.from_numpy(batch.pad_mask)
        loss, report = e2e_loss(logits, targets, mask)
        return loss, report, batch.real_tokens

    return _run_training(cfg, out_dir or cfg["run"]["out_dir"], "e2e", model, opt,
                         step_fn, steps, start_step, start_tokens, stop_after)


def pretrain_iem(cfg: dict, out_dir=None, half: str | None = "first",
                 resume=None, stop_after=None) -> RunArtifacts:
    """IEM pretraining: encoder + main only, sampled-softmax loss, decoder untouched."""
    seed = cfg["run"]["seed"]
    extra = cfg["objective"]["extra_negative_batches"]
    per_step = 1 + extra
    docs = load_corpus_docs(cfg, half)
    stream = datamod.make_batches(docs, cfgmod.batch_spec(cfg),
                                  cfg["dataset"]["hierarchy"]["k"], seed)
    steps = _resolve_steps(cfg, len(stream), per_step)
    model = build_model(cfg, seed)
    opt = make_optimizer(model, cfg, include_decoder=False)
    start_step = 0
    start_tokens = 0
    if resume is not None:
        blob = load_checkpoint(resume)
        model.load_state_dict(blob["params"])
        opt.load_state_dict(blob["opt"])
        start_step = blob["step"]
        start_tokens = blob.get("tokens_seen", 0)
        torch.set_rng_state(blob["torch_rng"])

    def step_fn(step):
        base = step * per_step
        batch = stream[base]
        extras = [stream[base + 1 + j] for j in range(extra)]
        pool = build_negative_pool(model, batch, extras)
        contexts = model.contexts(pool.encodings[:batch.n_segments], batch)
        loss, report = iem_loss(contexts, pool)
        consumed = batch.real_tokens + sum(b.real_tokens for b in extras)
        return loss, report, consumed

    return _run_training(cfg, out_dir or cfg["run"]["out_dir"], "iem", model, opt,
                         step_fn, steps, start_step, start_tokens, stop_after)


def build_finetune_model(blob: dict, cfg: dict) -> HaedModel:
    """Seed-fresh model with encoder/main overwritten from a pretrain checkpoint."""
    if model_hash(blob["config"]) != model_hash(cfg):
        raise ConfigError("checkpoint model config does not match the finetune config")
    model = build_model(cfg, cfg["run"]["seed"])  # decoder init comes from the seed
    pretrained = {n: t for n, t in blob["params"].items() if not n.startswith("decoder.")}
    model.load_state_dict(pretrained, strict=False)
    return model


def finetune(checkpoint_path, cfg: dict, out_dir=None,
             half: str | None = "second", stop_after=None) -> RunArtifacts:
    """Load pretrained encoder/main, fresh decoder, train everything end-to-end."""
    blob = load_checkpoint(checkpoint_path)
    seed = cfg["run"]["seed"]
    docs = load_corpus_docs(cfg, half)
    stream = datamod.make_batches(docs, cfgmod.batch_spec(cfg),
                                  cfg["dataset"]["hierarchy"]["k"], seed)
    steps = _resolve_steps(cfg, len(stream))
    model = build_finetune_model(blob, cfg)
    opt = make_optimizer(model, cfg)

    def step_fn(step):
        batch = stream[step]
        logits = model(batch)
        targets = torch.from_numpy(batch.tokens)
        mask = torch.from_numpy(batch.pad_mask)
        loss, report = e2e_loss(logits, targets, mask)
        return loss, report, batch.real_tokens

    return _run_training(cfg, out_dir or cfg["run"]["out_dir"], "finetune", model, opt,
                         step_fn, steps, stop_after=stop_after)
