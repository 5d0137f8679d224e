"""Report figures written next to the JSON outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.5, 3.4),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history, path, metric_name="validation"):
    """Training loss and (when present) the validation metric per epoch."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        epochs = [h["epoch"] for h in history]
        ax.plot(epochs, [h["loss"] for h in history], color="C0", lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss", color="C0")
        if history and "validation" in history[0]:
            ax2 = ax.twinx()
            ax2.plot(epochs, [h["validation"] for h in history], color="C1", lw=1.2)
            ax2.set_ylabel(metric_name, color="C1")
            ax2.spines["right"].set_visible(True)
        return _save(fig, path)


def plot_monte_carlo(table, path):
    """Empirical permutation frequencies against model probabilities."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        order = np.argsort([-row["model"] for row in table])
        x = np.arange(len(table))
        ax.bar(x, [table[i]["empirical"] for i in order], color="0.7", label="sampled")
        ax.plot(x, [table[i]["model"] for i in order], "k.", ms=4, label="model")
        ax.set_xlabel("permutation (by model probability)")
        ax.set_ylabel("probability")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_timing(report, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        L = report["lengths"]
        ax.loglog(L, report["fast_seconds"], "o-", label=f"fast ({report['fast_ratio']:.2f}x)")
        ax.loglog(L, report["naive_seconds"], "s-", label=f"naive ({report['naive_ratio']:.2f}x)")
        ax.set_xlabel("list length")
        ax.set_ylabel("seconds per gradient")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_report(report, path):
    """Bar chart of precision@k (and NDCG@k when present) from an EvalReport dict."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        labels, values = [], []
        for k, v in report["precision"].items():
            labels.append(f"P@{k}")
            values.append(v)
        for k, v in report.get("ndcg", {}).items():
            labels.append(f"NDCG@{k}")
            values.append(v)
        ax.bar(labels, values, color="0.5")
        ax.set_ylim(0, 1)
        return _save(fig, path)
