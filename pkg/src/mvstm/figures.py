"""Matplotlib figures rendered next to report and trace files.

All figures go through Agg with fixed metadata and dpi so re-running a
command with the same inputs writes byte-identical image files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "mvstm"}}


def save_mape_bars(names, mapes, path, reference=None) -> None:
    """Bar chart of per-method MAPE; reference values draw as dashed lines."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.bar(range(len(names)), mapes, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("MAPE")
    ax.set_title("Held-out MAPE by method")
    if reference:
        for i, (name, value) in enumerate(sorted(reference.items())):
            ax.axhline(value, linestyle="--", linewidth=0.8, color=f"C{i + 1}",
                       label=f"reference {name}: {value:.5f}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_trace(trace, path, ylabel="loss", title="training trace") -> None:
    """Line plot of a per-epoch scalar trace."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(range(1, len(trace) + 1), trace, marker="o", markersize=2.5,
            linewidth=1.0, color="#4878a8")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_traces(traces, path, ylabel="loss", title="training traces") -> None:
    """One line per named trace on shared axes."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    for i, (name, trace) in enumerate(sorted(traces.items())):
        ax.plot(range(1, len(trace) + 1), trace, linewidth=1.0,
                color=f"C{i}", label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
