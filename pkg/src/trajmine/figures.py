"""Report figures written next to the structured/delimited outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

COUNT_KEYS = ("n_trajectories", "n_hard_positives", "n_hard_negatives", "n_admitted_frames")
COUNT_LABELS = ("trajectories", "hard positives", "hard negatives", "admitted frames")


def save_mining_report_figure(report, path):
    """Grouped bars of per-video mining counts."""
    videos = report["videos"]
    names = [v["video_id"] for v in videos]
    x = np.arange(max(len(videos), 1))
    width = 0.8 / len(COUNT_KEYS)
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(videos) + 4), 4))
    for k, (key, label) in enumerate(zip(COUNT_KEYS, COUNT_LABELS)):
        ax.bar(x + (k - 1.5) * width, [v[key] for v in videos], width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(names or ["(no videos)"], rotation=30, ha="right")
    ax.set_ylabel("count")
    ax.set_title("mining summary")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_strategy_figure(rows, path):
    """Per-seed purity of mutual-best vs greedy matching, plus mean bars."""
    by_seed = {}
    for row in rows:
        by_seed.setdefault(row["seed"], {})[row["strategy"]] = row["purity"]
    greedy = [v.get("greedy", np.nan) for v in by_seed.values()]
    mutual = [v.get("mutual-best", np.nan) for v in by_seed.values()]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.scatter(greedy, mutual, s=14, alpha=0.6)
    lo = min(min(greedy, default=0.0), min(mutual, default=0.0), 0.9)
    ax1.plot([lo, 1.0], [lo, 1.0], "k--", linewidth=0.8)
    ax1.set_xlabel("greedy purity")
    ax1.set_ylabel("mutual-best purity")
    ax1.set_title("per-seed trajectory purity")

    means = [float(np.nanmean(mutual)), float(np.nanmean(greedy))]
    ax2.bar(["mutual-best", "greedy"], means, color=["tab:blue", "tab:orange"])
    ax2.set_ylim(min(means) - 0.05, 1.005)
    ax2.set_ylabel("mean purity")
    ax2.set_title(f"means over {len(by_seed)} seeds")
    for i, m in enumerate(means):
        ax2.text(i, m, f"{m:.4f}", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
