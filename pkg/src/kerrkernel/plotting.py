"""PNG figures rendered next to the CSV outputs of each CLI command.

Uses the non-interactive Agg backend; every function takes already-computed
data and a target path, so plotting never triggers simulation.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .iohelpers import atomic_write  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_entangle(traces: dict, pulses: tuple[np.ndarray, list[np.ndarray]], path) -> Path:
    """Pulse envelopes, F(rho_R, rho_t) and E_N(rho_t) versus time.

    ``traces`` maps a label to ``(t_us, fidelity, log_negativity)`` arrays.
    """
    fig, (ax_p, ax_f, ax_e) = plt.subplots(3, 1, figsize=(7, 8), layout="constrained")
    t_p, envs = pulses
    for k, env in enumerate(envs):
        ax_p.plot(t_p, env, label=f"pulse {k + 1}")
    ax_p.set_xlabel("t (us)")
    ax_p.set_ylabel("envelope (MHz)")
    ax_p.legend(fontsize="small")
    for k, (label, (t, fid, en)) in enumerate(traces.items()):
        # fixed colour per case: single-mode cases have no E_N curve
        ax_f.plot(t, fid, label=label, lw=1, color=f"C{k}")
        if np.any(np.isfinite(en)):
            ax_e.plot(t, en, label=label, lw=1, color=f"C{k}")
    ax_f.set_ylabel("fidelity to reference")
    ax_f.legend(fontsize="small")
    ax_e.set_xlabel("t (us)")
    ax_e.set_ylabel("log negativity")
    for ax in (ax_f, ax_e):
        ax.ticklabel_format(axis="y", useOffset=False)
    if ax_e.lines:
        ax_e.legend(fontsize="small")
    return _save(fig, path)


def plot_dataset(features: np.ndarray, labels: np.ndarray, references, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for lab, color in ((1, "tab:red"), (2, "tab:blue")):
        sel = labels == lab
        ax.scatter(features[sel, 0], features[sel, 1], s=6, c=color, label=f"label {lab}")
    for feats, lab in references:
        ax.scatter([feats[0]], [feats[1]], marker="*", s=200, c="k")
        ax.annotate(str(lab), feats, textcoords="offset points", xytext=(5, 5))
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize="small")
    return _save(fig, path)


def plot_gram(values: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(values, vmin=0.0, vmax=1.0, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="kernel value")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    return _save(fig, path)


def plot_accuracy(x, quantum, rbf, xlabel: str, path) -> Path:
    """Mean and spread of tuned accuracies; ``quantum``/``rbf`` are lists of per-x samples."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.asarray(x, dtype=float)
    for vals, label, marker in ((quantum, "quantum kernel", "o"), (rbf, "RBF", "s")):
        mean = np.array([np.mean(v) for v in vals])
        std = np.array([np.std(v) for v in vals])
        ax.errorbar(x, mean, yerr=std, marker=marker, capsize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mesh accuracy")
    ax.legend()
    return _save(fig, path)


def plot_scaling(rows, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for n_dim in sorted({r.n_dim for r in rows}):
        pick = sorted((r.n, r.t_c) for r in rows if r.n_dim == n_dim)
        ax.semilogy([p[0] for p in pick], [p[1] for p in pick], marker="o", label=f"n_dim={n_dim}")
    ax.set_xlabel("number of resonators n")
    ax.set_ylabel("seconds per kernel entry")
    ax.legend()
    return _save(fig, path)
