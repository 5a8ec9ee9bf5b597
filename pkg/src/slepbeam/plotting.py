"""Figure rendering for the experiment CLI (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {"slepian": dict(color="tab:blue", marker="o"),
         "encoded": dict(color="tab:cyan", marker="s"),
         "ls": dict(color="tab:blue", marker="o"),
         "nulling": dict(color="tab:green", marker="v"),
         "mvdr": dict(color="tab:red", marker="^"),
         "lcmv": dict(color="tab:purple", marker="d")}


def _method_style(method):
    if method in STYLE:
        return STYLE[method]
    if method.startswith("das"):
        return dict(color="tab:orange", marker="x", alpha=0.85)
    if method.startswith("subarray"):
        return dict(color="tab:brown", marker="+")
    if method.startswith("merge"):
        return dict(marker="o")
    return {}


def plot_gain_curves(agg, extras, path, title, sweep_key="nominal_snr_db",
                     filter_fn=None):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    methods = sorted({r["method"] for r in agg})
    for method in methods:
        pts = [(r[sweep_key], r["mean"]) for r in agg
               if r["method"] == method and (filter_fn is None or filter_fn(r))]
        if not pts:
            continue
        pts.sort()
        x, y = zip(*pts)
        ax.plot(x, y, label=method, **_method_style(method))
    ideal = extras.get("ideal_gain_db")
    if ideal is not None and sweep_key == "nominal_snr_db":
        xs = np.array(sorted({r[sweep_key] for r in agg}))
        ax.plot(xs, xs + ideal, "k-", lw=1.2, label="ideal gain")
    ax.set_xlabel("nominal SNR (dB)" if sweep_key == "nominal_snr_db"
                  else "SIR (dB)")
    ax.set_ylabel("beamformed SNR (dB)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_encode(rows, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    for enc in ("spatial_temporal", "spatial_slepian", "random"):
        pts = sorted((r["measurements"], r["variance_multiplier"])
                     for r in rows if r["encoder"] == enc)
        if not pts:
            continue
        x, y = zip(*pts)
        if enc == "spatial_temporal":
            ax1.axhline(y[0], color="k", ls="--", label=enc)
        else:
            ax1.semilogy(x, y, marker="o", label=enc)
    ax1.set_xlabel("measurements P")
    ax1.set_ylabel("variance multiplier")
    ax1.grid(alpha=0.3)
    ax1.legend(fontsize=8)
    sweep = sorted((r["measurements"], r["variance_multiplier"])
                   for r in rows if r["encoder"] == "margin_sweep")
    if sweep:
        x, y = zip(*sweep)
        ax2.semilogy(x, np.maximum(y, 1e-17), marker="s", color="tab:green")
    ax2.set_xlabel("snapshot margin L1")
    ax2.set_ylabel("encoded vs full coefficient error")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_diag(rows, path):
    budget = [r for r in rows if r.get("table") == "error_budget"]
    merge = [r for r in rows if r.get("table") == "merge_accuracy"]
    n_panels = 1 + bool(merge)
    fig, axs = plt.subplots(1, n_panels, figsize=(5.0 * n_panels, 4.0))
    axs = np.atleast_1d(axs)
    if budget:
        ms = [r["margin"] for r in budget]
        for key in ("truncation_bias", "mismatch_bias", "variance_trace"):
            axs[0].semilogy(ms, [max(r[key], 1e-18) for r in budget],
                            marker="o", label=key)
        axs[0].set_xlabel("margin L")
        axs[0].legend(fontsize=8)
        axs[0].grid(alpha=0.3)
    if merge:
        mps = sorted({r["packet_margin"] for r in merge})
        mms = sorted({r["merged_margin"] for r in merge})
        grid = np.array([[next(r["operator_error"] for r in merge
                               if r["packet_margin"] == mp
                               and r["merged_margin"] == mm)
                          for mm in mms] for mp in mps])
        im = axs[1].imshow(np.log10(grid), cmap="viridis", aspect="auto")
        axs[1].set_xticks(range(len(mms)), [f"+{m}" for m in mms])
        axs[1].set_yticks(range(len(mps)), [f"+{m}" for m in mps])
        axs[1].set_xlabel("merged margin")
        axs[1].set_ylabel("packet margin")
        fig.colorbar(im, ax=axs[1], label="log10 merge error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_dims(rows, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for tol in sorted({r["tolerance"] for r in rows}):
        pts = sorted((r["time_bandwidth"], r["dimension"])
                     for r in rows if r["tolerance"] == tol)
        x, y = zip(*pts)
        ax.step(x, y, where="post", marker=".", label=f"tol={tol:g}")
    x = np.array(sorted({r["time_bandwidth"] for r in rows}))
    ax.plot(x, 2 * x, "k--", lw=1.0, label="2 WT")
    ax.set_xscale("log")
    ax.set_xlabel("time-bandwidth product WT")
    ax.set_ylabel("dimension d(WT)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
