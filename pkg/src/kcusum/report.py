"""Figure rendering for evaluation reports, bound tables and trade-off curves.

Figures are written straight to files next to the delimited output; the
matplotlib import is deferred so the streaming detection path never pays
for it.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["render_eval_report", "render_bounds_table", "render_tradeoff"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_eval_report(report, path: str) -> None:
    """Histogram of the quantity the report estimates.

    Detection-delay reports get a delay histogram with the mean and 95th
    percentile marked; run-length reports get a stopping-time histogram.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if report.esadd_mean is not None:
        delays = report.delays()
        ax.hist(delays, bins=min(80, max(10, int(delays.size ** 0.5))), color="#4878d0")
        ax.axvline(report.esadd_mean, color="k", lw=1.2, label=f"mean = {report.esadd_mean:.1f}")
        ax.axvline(report.esadd_p95, color="#d65f5f", lw=1.2, ls="--", label=f"p95 = {report.esadd_p95:.1f}")
        ax.set_xlabel("detection delay (samples)")
        ax.legend(frameon=False)
        ax.set_title("detection delay distribution")
    else:
        stops = np.array(
            [t.stop_time if t.stop_time is not None else report.config_echo.get("horizon", 0) for t in report.trials],
            dtype=float,
        )
        ax.hist(stops, bins=min(80, max(10, int(stops.size ** 0.5))), color="#4878d0")
        label = "run length to false alarm (samples)"
        if report.arl2fa_lower_flag:
            label += ", censored at horizon"
        ax.axvline(report.arl2fa_mean, color="k", lw=1.2, label=f"mean = {report.arl2fa_mean:.1f}")
        ax.set_xlabel(label)
        ax.legend(frameon=False)
        ax.set_title("run length distribution")
    ax.set_ylabel("trials")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_bounds_table(rows: Sequence[dict], path: str) -> None:
    """Bound curves against the threshold, one panel per bound family."""
    plt = _pyplot()
    hs = [r["h"] for r in rows]
    arl_keys = [k for k in rows[0] if k.endswith("arl2fa_lower")]
    delay_keys = [k for k in rows[0] if "esadd" in k]
    n_panels = (1 if arl_keys else 0) + (1 if delay_keys else 0)
    fig, axes = plt.subplots(1, max(n_panels, 1), figsize=(6 * max(n_panels, 1), 4.2), squeeze=False)
    col = 0
    if arl_keys:
        ax = axes[0][col]
        for key in arl_keys:
            ax.semilogy(hs, [r[key] for r in rows], marker="o", ms=3, label=key)
        ax.set_xlabel("threshold h")
        ax.set_ylabel("mean run length to false alarm (lower bound)")
        ax.legend(frameon=False)
        col += 1
    if delay_keys:
        ax = axes[0][col]
        for key in delay_keys:
            ax.plot(hs, [r[key] for r in rows], marker="o", ms=3, label=key)
        ax.set_xlabel("threshold h")
        ax.set_ylabel("worst-case delay (upper bound)")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_tradeoff(rows, path: str) -> None:
    """Delay against false-alarm level on a log-x axis."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    levels = [r.level for r in rows]
    ax.semilogx(levels, [r.delay_bound for r in rows], marker="s", ms=4, color="#d65f5f", label="delay bound")
    measured = [(r.level, r.measured_delay) for r in rows if r.measured_delay is not None]
    if measured:
        ax.semilogx([m[0] for m in measured], [m[1] for m in measured], marker="o", ms=4, color="#4878d0", label="measured mean delay")
    ax.set_xlabel("guaranteed mean run length to false alarm")
    ax.set_ylabel("detection delay (samples)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
