"""Figure rendering for the CLI report paths.

Every subcommand that writes delimited output also renders a small set of
matplotlib figures next to it, so a run directory is self-describing:
segmentation shows the hand's relation to each block with the detected
changepoints, learning runs show per-trial cost curves per formulation
attempt, and the benchmark commands show score curves and the two
transformation-system failure modes.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SEG_COLORS = ("tab:blue", "tab:red", "tab:orange", "tab:green", "tab:purple")


def save_segmentation_figure(demo, seg_result, path):
    hand = demo.locations(demo.hand_id)
    t = np.arange(len(demo))
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for bid in demo.object_ids:
        d = np.linalg.norm(hand - demo.locations(bid), axis=1)
        ax.plot(t, d, label=f"|hand - {bid}|", linewidth=1.6)
    for k, seg in enumerate(seg_result.segments):
        if k < len(seg_result.segments) - 1:
            ax.axvline(seg.end, color="k", linestyle="--", alpha=0.6)
        mid = 0.5 * (seg.start + seg.end)
        rel = ",".join(sorted(seg.abstraction.relevant))
        ax.text(mid, ax.get_ylim()[1] * 0.92,
                f"ref={seg.abstraction.reference}\nrel={{{rel}}}",
                ha="center", fontsize=7)
    ax.set_xlabel("frame")
    ax.set_ylabel("hand-object distance (m)")
    ax.set_title("segmentation and selected abstractions")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_learning_figure(report, path):
    segs = report["segments"]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharey=True)
    for k, seg in enumerate(segs):
        color = SEG_COLORS[k % len(SEG_COLORS)]
        first = seg["attempts"][0]
        trials = [row[0] for row in first["curve"]]
        costs = [row[1] for row in first["curve"]]
        axes[0].plot(trials, costs, color=color, marker=".",
                     label=f"segment {k + 1}")
        last = seg["attempts"][-1]
        trials = [row[0] for row in last["curve"]]
        costs = [row[1] for row in last["curve"]]
        axes[1].plot(trials, costs, color=color, marker=".",
                     label=f"segment {k + 1}"
                     + (" (reformulated)" if len(seg["attempts"]) > 1 else ""))
    axes[0].set_title("initial formulations")
    axes[1].set_title("final formulations")
    for ax in axes:
        ax.set_xlabel("trial")
        ax.legend(fontsize=8)
    axes[0].set_ylabel("total cost per trial")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_ps_figure(rows, path):
    """rows: (update, score, method, seed) tuples."""
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    methods = sorted({r[2] for r in rows})
    colors = {"pi2": "tab:green", "power": "tab:blue"}
    for m in methods:
        seeds = sorted({r[3] for r in rows if r[2] == m})
        updates = sorted({r[0] for r in rows if r[2] == m})
        mat = np.full((len(seeds), len(updates)), np.nan)
        for u, sc, mm, sd in rows:
            if mm == m:
                mat[seeds.index(sd), updates.index(u)] = sc
        for row in mat:
            ax.plot(updates, row, color=colors.get(m, "gray"),
                    alpha=0.15, linewidth=0.8)
        ax.plot(updates, np.nanmedian(mat, axis=0),
                color=colors.get(m, "gray"), linewidth=2, label=m)
    ax.set_xlabel("update")
    ax.set_ylabel("per-sample score")
    ax.set_title("policy-search score per update")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_dmp_figure(results, path):
    """results: dict variant -> dict with t, y_fit, y_goal3, dev_pos, dev_neg."""
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    for col, variant in enumerate(("original", "bio")):
        r = results[variant]
        ax = axes[0][col]
        ax.plot(r["t"], r["y_fit"], label="fitted goal")
        ax.plot(r["t"], r["y_goal3"], label="goal tripled")
        ax.set_title(f"{variant}: goal change after small-amplitude fit")
        ax.set_xlabel("t (s)")
        ax.set_ylabel("y")
        ax.legend(fontsize=8)
        ax = axes[1][col]
        ax.plot(r["t"], r["dev_pos"], label="deviation at g")
        ax.plot(r["t"], r["dev_neg"], label="deviation at mirrored g")
        ax.set_title(f"{variant}: forcing contribution under goal reflection")
        ax.set_xlabel("t (s)")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
