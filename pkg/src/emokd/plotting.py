"""Static report figures. Everything renders off-screen through Agg."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "emokd",
}

# PNG metadata would otherwise carry the matplotlib version string only; keep it fixed.
_METADATA = {"Software": "emokd"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def plot_alpha_sweep(sweep, path):
    xs = [r["value"] for r in sweep.records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(xs, [100 * r["accuracy"] for r in sweep.records], "o-", color="tab:blue", label="accuracy")
        ax.set_xlabel("alpha")
        ax.set_ylabel("accuracy (%)", color="tab:blue")
        ax2 = ax.twinx()
        ax2.spines["right"].set_visible(True)
        ax2.plot(xs, [r["final_l_kd"] for r in sweep.records], "s--", color="tab:red", label="KL loss")
        ax2.set_ylabel("final KL loss", color="tab:red")
        ax.set_title(f"{sweep.dataset}: accuracy and KL loss vs alpha")
        return _save(fig, path)


def plot_depth_sweep(sweep, path):
    depths = [r["value"] for r in sweep.records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(depths, [100 * r["accuracy"] for r in sweep.records], "o-")
        for r in sweep.records:
            ax.annotate(f"{r['param_count']:,}", (r["value"], 100 * r["accuracy"]),
                        textcoords="offset points", xytext=(0, 6), ha="center", fontsize=7)
        ax.set_xticks(depths)
        ax.set_xticklabels([r["hidden_dims"] for r in sweep.records], rotation=20, ha="right")
        ax.set_xlabel("hidden layer configuration")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(f"{sweep.dataset}: accuracy vs head depth")
        return _save(fig, path)


def plot_gate_sweep(sweep, path):
    names = [str(r["value"]) for r in sweep.records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(names, [100 * r["accuracy"] for r in sweep.records], color="tab:gray")
        ax.bar_label(bars, fmt="%.2f", fontsize=7)
        ax.set_ylabel("test accuracy (%)")
        ax.set_title(f"{sweep.dataset}: gate variants")
        ax.tick_params(axis="x", rotation=15)
        return _save(fig, path)


def plot_partition(partition, path, labels=("A", "B"), title="complementarity"):
    a, b = labels
    keys = ("both", "a_only", "b_only", "neither")
    names = ("both correct", f"{a} only", f"{b} only", "neither")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(names, [100 * partition.fraction(k) for k in keys],
                      color=["tab:green", "tab:blue", "tab:orange", "tab:gray"])
        ax.bar_label(bars, fmt="%.1f", fontsize=7)
        ax.set_ylabel("samples (%)")
        ax.set_title(title)
        return _save(fig, path)
