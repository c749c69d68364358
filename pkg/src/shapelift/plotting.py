"""PNG figures for the report commands.

Figures are rendered with the Agg backend and written without the
software/date metadata matplotlib normally embeds, so the same data gives
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.linewidth": 0.6,
}


def _save(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_phase_grid(p_values, z_values, frequency, path, k: int | None = None):
    """Recovery-frequency heat map, landmarks on x and active bases on y."""
    freq = np.asarray(frequency, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(freq.T, origin="lower", cmap="gray", vmin=0.0, vmax=1.0,
                       aspect="auto", interpolation="nearest")
        ax.set_xticks(range(len(p_values)), [str(p) for p in p_values])
        ax.set_yticks(range(len(z_values)), [str(z) for z in z_values])
        ax.set_xlabel("landmarks p")
        ax.set_ylabel("active bases z")
        if k is not None:
            ax.set_title(f"exact recovery frequency (k={k})")
        fig.colorbar(im, ax=ax, label="frequency")
        fig.tight_layout()
        _save(fig, path)


def plot_comparison(names, errors, path, ylabel: str = "mean 3D error"):
    """One bar per pipeline."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(names))
        ax.bar(x, errors, color="0.45", width=0.6)
        ax.set_xticks(x, names, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        ax.spines[["top", "right"]].set_visible(False)
        fig.tight_layout()
        _save(fig, path)


def plot_shape(shape, truth=None, path=None, parents=None):
    """Front (x-y) view of a 3D shape, optionally over the ground truth."""
    shape = np.asarray(shape, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for S, style in ((truth, dict(color="0.6", marker="o", ms=3)),
                         (shape, dict(color="k", marker=".", ms=4))):
            if S is None:
                continue
            S = np.asarray(S, dtype=float)
            ax.plot(S[0], S[1], ls="none", **style)
            if parents is not None:
                for j, par in enumerate(parents):
                    if par >= 0:
                        ax.plot(S[0, [par, j]], S[1, [par, j]], color=style["color"], lw=0.8)
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.tight_layout()
        if path is not None:
            _save(fig, path)
        else:
            plt.close(fig)
