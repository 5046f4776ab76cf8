"""Self-contained SVG diagnostics (text kept as text, no external assets)."""
from __future__ import annotations

import io
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ingest import atomic_write_text  # noqa: E402

_RC = {"svg.fonttype": "none", "svg.hashsalt": "flowtpp"}
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


def _svg(fig) -> str:
    buf = io.StringIO()
    with plt.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _save(fig, path):
    text = _svg(fig)
    if path is not None:
        atomic_write_text(os.fspath(path), text)
    return text


def qq_plot(points, path=None, title="Inter-arrival Q-Q"):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(pts[:, 0], pts[:, 1], s=10)
    pos = pts[(pts > 0).all(axis=1)]
    if len(pos):
        ax.set_xscale("log")
        ax.set_yscale("log")
        lo, hi = pos.min(), pos.max()
        ax.plot([lo, hi], [lo, hi], color="grey", lw=1, ls="--")
    ax.set_xlabel("real quantile (s)")
    ax.set_ylabel("generated quantile (s)")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def _paired_bars(ax, labels, real, synth):
    real = np.asarray(real, dtype=float)
    synth = np.asarray(synth, dtype=float)
    x = np.arange(len(labels))
    ax.bar(x - 0.2, real / max(real.sum(), 1), 0.4, label="real")
    ax.bar(x + 0.2, synth / max(synth.sum(), 1), 0.4, label="generated")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("fraction of events")
    ax.legend()


def hourly_plot(real_counts, synth_counts, path=None):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    _paired_bars(ax, [str(h) for h in range(24)], real_counts, synth_counts)
    ax.set_xlabel("hour of day")
    ax.set_title("Hourly activity")
    fig.tight_layout()
    return _save(fig, path)


def weekday_plot(real_counts, synth_counts, path=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    _paired_bars(ax, WEEKDAYS, real_counts, synth_counts)
    ax.set_xlabel("weekday")
    ax.set_title("Weekly activity")
    fig.tight_layout()
    return _save(fig, path)


def host_pair_plot(rows, path=None):
    """``rows`` are (label, real_fraction, synth_fraction) in rank order."""
    labels = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(8, max(3.0, 0.25 * len(rows) + 1)))
    y = np.arange(len(rows))
    ax.barh(y - 0.2, [r[1] for r in rows], 0.4, label="real")
    ax.barh(y + 0.2, [r[2] for r in rows], 0.4, label="generated")
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("fraction of events")
    ax.set_title("Most active host pairs")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def loss_plot(rows, path=None):
    """Training curves from training-log rows (dicts with epoch and task losses)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    skip = {"epoch", "wall_seconds", "stage"}
    keys = [k for k in rows[0] if k not in skip] if rows else []
    for k in keys:
        ax.plot([r["epoch"] for r in rows], [r[k] for r in rows], label=k, lw=2 if k == "total" else 1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL")
    ax.set_title("Training loss")
    if keys:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
