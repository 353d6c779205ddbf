"""Matplotlib figures rendered alongside the CSV reports."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def render_metrics(csv_path, png_path):
    rows = _read_csv(csv_path)
    if not rows:
        return
    steps = [int(r["step"]) for r in rows]
    nats = [float(r["loss_nats"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, nats, marker="o", ms=3)
    ax.set_xlabel("step")
    ax.set_ylabel("loss (nats)")
    ax.set_title(f"training loss ({rows[0]['phase']})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_decoder_sweep(reports, png_path):
    """Decoder wall-clock fraction vs decoder width."""
    if not reports:
        return
    widths = sorted(reports)
    fracs = [reports[w].fractions["decoder"] for w in widths]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(widths, fracs, marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("decoder units")
    ax.set_ylabel("decoder share of step time")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_decoupling(finetune_csv, baseline_csv, png_path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, path in (("pretrain+finetune", finetune_csv), ("scratch e2e", baseline_csv)):
        rows = [r for r in _read_csv(path) if r["bpt"]]
        if rows:
            ax.plot([int(r["step"]) for r in rows], [float(r["bpt"]) for r in rows],
                    marker="o", ms=3, label=label)
    ax.set_xlabel("finetune step")
    ax.set_ylabel("bits per token")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
