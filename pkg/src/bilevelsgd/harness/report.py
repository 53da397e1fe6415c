"""Figure rendering for training runs and preset grids (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_run_curves(rows, title: str, path) -> None:
    """Train/test accuracy and the generalization gap across epochs."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    epochs = [r.epoch for r in rows]
    ax1.plot(epochs, [r.train_accuracy for r in rows], label="train")
    ax1.plot(epochs, [r.test_accuracy for r in rows], label="test")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("accuracy")
    ax1.set_ylim(0.0, 1.0)
    ax1.legend(loc="lower right")
    ax2.plot(epochs, [r.generalization_gap for r in rows], color="tab:red")
    ax2.axhline(0.0, color="gray", lw=0.6)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train - test accuracy")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_preset_summary(preset, results, path) -> None:
    """One figure per preset: paired lines for sgd/bilevel sweeps, bars otherwise."""
    results = [(c, r) for c, r in results if r.rows]
    if not results:
        return
    by_kind: dict[str, list] = {}
    for cell, result in results:
        by_kind.setdefault(cell.config.optimizer.kind, []).append((cell, result))
    as_lines = preset.name not in ("ablation-grid", "pixel-perm")

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    if as_lines:
        for kind, pairs in sorted(by_kind.items()):
            xs = [c.axis_value for c, _ in pairs]
            tests = [r.rows[-1].test_accuracy for _, r in pairs]
            gaps = [r.rows[-1].generalization_gap for _, r in pairs]
            style = "--o" if kind == "sgd" else "-o"
            ax1.plot(xs, tests, style, label=kind)
            ax2.plot(xs, gaps, style, label=kind)
        if preset.name == "mu-sweep":
            ax1.set_xscale("log")
            ax2.set_xscale("log")
        ax1.set_xlabel(preset.axis_label)
        ax2.set_xlabel(preset.axis_label)
        ax1.legend(loc="best", fontsize=8)
    else:
        names = [f"{c.name}" for c, _ in results]
        tests = [r.rows[-1].test_accuracy for _, r in results]
        gaps = [r.rows[-1].generalization_gap for _, r in results]
        pos = range(len(names))
        ax1.bar(pos, tests, color="tab:blue")
        ax2.bar(pos, gaps, color="tab:red")
        for ax in (ax1, ax2):
            ax.set_xticks(list(pos))
            ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    ax1.set_ylabel("final test accuracy")
    ax2.set_ylabel("final gap")
    fig.suptitle(preset.name)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)
