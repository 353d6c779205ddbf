"""Command-line harness tying the modules together."""

import csv
import json
import os
import sys
from pathlib import Path

import click
import torch

from . import config as cfgmod
from . import data as datamod
from . import evalbench, gradchecks, training
from .errors import HaedError


def _init_threads():
    threads = os.environ.get("HAEL_THREADS")
    if threads:
        torch.set_num_threads(int(threads))


def _load_cfg(config_path, seed, steps, out):
    try:
        cfg = cfgmod.parse_config(config_path) if config_path else cfgmod.resolve({})
    except HaedError as e:
        _fail(e)
    if seed is not None:
        cfg["run"]["seed"] = seed
    if steps is not None:
        cfg["run"]["steps"] = steps
    if out is not None:
        cfg["run"]["out_dir"] = str(out)
    return cfg


def _fail(e):
    click.echo(f"error: {type(e).__name__}: {e}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Hierarchical encoder-decoder training harness."""
    _init_threads()


common = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--seed", type=int, default=None, help="overrides config seed"),
    click.option("--steps", type=int, default=None, help="overrides config step count"),
    click.option("--out", type=click.Path(), default=None, help="output directory"),
]


def with_common(f):
    for opt in reversed(common):
        f = opt(f)
    return f


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True), default=None, help="overrides dataset path")
def train(config_path, seed, steps, out, data):
    """End-to-end training run."""
    cfg = _load_cfg(config_path, seed, steps, out)
    if data:
        cfg["dataset"]["path"] = data
    try:
        art = training.train_e2e(cfg)
    except HaedError as e:
        _fail(e)
    click.echo(f"done: loss_nats={art.final_loss_nats:.6g} bpt={art.final_bpt:.6g} "
               f"out={art.out_dir}")


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--half", type=click.Choice(["first", "second", "all"]), default="first")
def pretrain(config_path, seed, steps, out, data, half):
    """IEM pretraining of encoder + main model (no decoder)."""
    cfg = _load_cfg(config_path, seed, steps, out)
    cfg["objective"]["kind"] = "iem"
    if data:
        cfg["dataset"]["path"] = data
    try:
        art = training.pretrain_iem(cfg, half=None if half == "all" else half)
    except HaedError as e:
        _fail(e)
    click.echo(f"done: loss_nats={art.final_loss_nats:.6g} out={art.out_dir}")


@main.command()
@with_common
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--half", type=click.Choice(["first", "second", "all"]), default="second")
def finetune(config_path, seed, steps, out, checkpoint, data, half):
    """Fine-tune a pretrained checkpoint end-to-end with a fresh decoder."""
    cfg = _load_cfg(config_path, seed, steps, out)
    if data:
        cfg["dataset"]["path"] = data
    try:
        art = training.finetune(checkpoint, cfg, half=None if half == "all" else half)
    except HaedError as e:
        _fail(e)
    click.echo(f"done: loss_nats={art.final_loss_nats:.6g} bpt={art.final_bpt:.6g} "
               f"out={art.out_dir}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(["text", "image"]), default="text")
@click.option("--max-batches", type=int, default=None)
def eval_cmd(checkpoint, data, kind, max_batches):
    """Bits-per-token of a checkpoint on a corpus."""
    try:
        report = evalbench.evaluate_checkpoint(checkpoint, data, kind, max_batches)
    except HaedError as e:
        _fail(e)
    click.echo(f"bpt={report.bpt:.6g}")


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--axis", type=click.Choice(["decoder", "encoder", "decoupling"]),
              default="decoder")
@click.option("--widths", default="128,512,2000", help="comma-separated unit counts")
@click.option("--trials", type=int, default=20)
@click.option("--train-steps", type=int, default=None)
def sweep(config_path, seed, steps, out, data, axis, widths, trials, train_steps):
    """Ablation / decoupling sweeps; emits sweep.csv and sweep.png."""
    cfg = _load_cfg(config_path, seed, steps, out)
    if data:
        cfg["dataset"]["path"] = data
    out_dir = Path(out or cfg["run"]["out_dir"])
    ws = [int(w) for w in widths.split(",")]
    try:
        if axis == "decoder":
            evalbench.decoder_width_sweep(cfg, ws, out_dir, trials=trials,
                                          train_steps=train_steps)
        elif axis == "encoder":
            evalbench.encoder_width_sweep(cfg, ws, out_dir, train_steps=train_steps)
        else:
            evalbench.decoupling_sweep(cfg, out_dir)
    except HaedError as e:
        _fail(e)
    click.echo(f"sweep written to {out_dir / 'sweep.csv'}")


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--trials", type=int, default=20)
def timing(config_path, seed, steps, out, data, trials):
    """Component wall-clock breakdown; emits timing.csv and timing.png."""
    cfg = _load_cfg(config_path, seed, steps, out)
    if data:
        cfg["dataset"]["path"] = data
    out_dir = Path(out or cfg["run"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        docs = training.load_corpus_docs(cfg)
        stream = datamod.make_batches(docs, cfgmod.batch_spec(cfg),
                                      cfg["dataset"]["hierarchy"]["k"], cfg["run"]["seed"])
        model = training.build_model(cfg, cfg["run"]["seed"])
        rep = evalbench.timing_breakdown(model, stream[0], trials=trials)
    except HaedError as e:
        _fail(e)
    with open(out_dir / "timing.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["component", "mean_ms", "fraction", "trials", "warmup_excluded",
                    "reliable"])
        for comp in ("encoder", "main", "decoder", "other"):
            w.writerow([comp, f"{rep.mean_ms[comp]:.4f}", f"{rep.fractions[comp]:.4f}",
                        rep.trials, rep.warmup_excluded, rep.reliable])
    from . import plots
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    comps = ["encoder", "main", "decoder", "other"]
    ax.bar(comps, [rep.fractions[c] for c in comps])
    ax.set_ylabel("fraction of step time")
    fig.tight_layout()
    fig.savefig(out_dir / "timing.png", dpi=120)
    plt.close(fig)
    click.echo(f"timing written to {out_dir / 'timing.csv'}")


@main.command()
@click.option("--eps", type=float, default=1e-5)
@click.option("--seed", type=int, default=0)
def gradcheck(eps, seed):
    """Run every registered 64-bit gradient check; exit 0 iff all pass."""
    reports = gradchecks.run_all(eps=eps, seed=seed)
    ok = True
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        click.echo(f"{status} {name}: max_rel_err={rep.worst:.3g}")
        ok = ok and rep.passed
    sys.exit(0 if ok else 1)


@main.command("make-synth")
@click.option("--kind", type=click.Choice(["text", "image"]), default="text")
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--size", type=int, default=1_000_000, help="text bytes")
@click.option("--count", type=int, default=8, help="image count")
@click.option("--height", type=int, default=8)
@click.option("--width", type=int, default=8)
def make_synth(kind, out, seed, size, count, height, width):
    """Write a deterministic synthetic corpus for tests and demos."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "text":
        out.write_bytes(datamod.make_synth_text(seed, size))
    else:
        datamod.save_image_corpus(out, datamod.make_synth_images(seed, count, height, width))
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
