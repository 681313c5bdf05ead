"""Figures for report rows, rendered off-screen with fixed PNG metadata."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "savefig.bbox": "tight",
}
_COLS = ("gamma_B", "gamma_S0", "gamma_sigma", "gamma_r")


def plot_report(report, path) -> bool:
    """One log-scale panel per quantity with its error columns against ``t``.

    Returns False (and writes nothing) when no row has a time coordinate.
    """
    series = {}
    for r in report.rows:
        if r["t"] is None:
            continue
        for c in _COLS:
            if r[c] is not None and r[c] > 0:
                series.setdefault(r["quantity"], {}).setdefault(c, []).append((r["t"], r[c]))
    if not series:
        return False
    names = sorted(series)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(len(names), 1, sharex=True, squeeze=False,
                                 figsize=(6.0, 1.0 + 2.0 * len(names)))
        for ax, q in zip(axes[:, 0], names):
            for c, pts in sorted(series[q].items()):
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=c)
            ax.set_yscale("log")
            ax.set_ylabel(q)
            ax.legend(fontsize=7, loc="best")
        axes[-1, 0].set_xlabel("t")
        axes[0, 0].set_title(report.command)
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)
    return True
