"""Static SVG plots of simulation traces.

The SVG writer is made deterministic (fixed hash salt, no date stamp) so
plots are byte-identical across runs.
"""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_trace(path):
    """Trace CSV as a dict of column name to array (``day`` kept as strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(head):
        col = [r[j] for r in body]
        out[name] = np.array(col) if name == "day" else np.array([float(x) for x in col])
    return out


def plot_traces(path, traces: dict, v_max=1.05):
    """Max node voltage, max branch loading and battery energy per period.

    Parameters
    ----------
    traces : dict
        Method name to a trace from :func:`read_trace`.
    """
    with plt.rc_context({"svg.hashsalt": "gridlocal", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
        for name, tr in traces.items():
            vcols = [k for k in tr if k.startswith("v_")]
            x = np.arange(len(tr["t"]))
            axes[0].plot(x, np.max([tr[k] for k in vcols], axis=0), label=name, lw=1)
            axes[1].plot(x, tr["i_max_pct"], label=name, lw=1)
            for k in (c for c in tr if c.startswith("e_")):
                axes[2].plot(x, tr[k], label=f"{name} {k[2:]}", lw=1)
        axes[0].axhline(v_max, color="k", ls="--", lw=0.8)
        axes[0].set_ylabel("max |V| (pu)")
        axes[1].set_ylabel("max loading (%)")
        axes[2].set_ylabel("stored energy (kWh)")
        axes[2].set_xlabel("period")
        for ax in axes:
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=7)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
