"""Figures written next to the CSV outputs.

Rendering uses the Agg backend only.  PNG metadata carries the config
digest and a fixed software tag, so reruns produce identical bytes.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}
COLORS = {"deterministic": "#c0392b", "probabilistic": "#1f5fa8", "robust": "#2e8b57"}
LINES = {"deterministic": ":", "probabilistic": "-", "robust": "--"}


@contextmanager
def _style():
    with matplotlib.rc_context(STYLE):
        yield


def _save(fig, path, digest: str | None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Software": "pumpvs"}
    if digest:
        meta["Description"] = f"config-sha256 {digest}"
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def pump_bands(schedules: dict, limits_kw: tuple, hours, path, digest: str | None = None, pump: int = 0):
    """Scheduled single-phase pump power with its real-time adjustment band.

    ``schedules`` maps mode to DecisionSchedule; the band spans
    p_nom - R_dn/3 to p_nom + R_up/3.
    """
    hours = np.asarray(hours)
    with _style():
        fig, ax = plt.subplots(figsize=(5.5, 3.0))
        for mode, s in schedules.items():
            if not s.optimal:
                continue
            p = s.p_nom[:, pump] / 1e3
            ax.step(hours, p, where="post", color=COLORS.get(mode), ls=LINES.get(mode, "-"), label=mode)
            if mode != "deterministic":
                lo = p - s.r_dn[:, pump] / 3e3
                hi = p + s.r_up[:, pump] / 3e3
                ax.fill_between(hours, lo, hi, step="post", color=COLORS.get(mode), alpha=0.2, lw=0)
        for lim in limits_kw:
            ax.axhline(lim, color="k", ls="--", lw=0.8)
        ax.set_xlabel("hour")
        ax.set_ylabel("pump power per phase (kW)")
        ax.legend(frameon=False, loc="best")
        fig.tight_layout()
        _save(fig, path, digest)


def violation_rates(table: list[tuple[str, float, float, float, float, float, float]], path, digest=None):
    """Grouped bars of joint violation rates (%) per schedule and distribution.

    ``table`` rows: (name, fitted power, fitted water, fitted total,
    actual power, actual water, actual total).
    """
    with _style():
        fig, axes = plt.subplots(1, 2, figsize=(6.0, 2.8), sharey=True)
        names = [r[0] for r in table]
        x = np.arange(len(names))
        w = 0.26
        for ax, off, title in ((axes[0], 1, "fitted"), (axes[1], 4, "actual")):
            for j, (lab, shade) in enumerate((("power", 0.9), ("water", 0.6), ("total", 0.3))):
                vals = [r[off + j] for r in table]
                ax.bar(x + (j - 1) * w, vals, w, label=lab, color=str(shade * 0.8))
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=20)
            ax.set_title(title)
        axes[0].set_ylabel("joint violation (%)")
        axes[0].legend(frameon=False)
        fig.tight_layout()
        _save(fig, path, digest)


def sweep_costs(eps, total_pct, sched_pct, path, digest=None):
    """Cost increase over the deterministic baseline against the violation level."""
    eps = np.asarray(eps, dtype=float)
    with _style():
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ok = np.isfinite(np.asarray(total_pct, dtype=float))
        ax.semilogx(eps[ok], np.asarray(total_pct, dtype=float)[ok], "o-", label="total")
        ax.semilogx(eps[ok], np.asarray(sched_pct, dtype=float)[ok], "s--", label="scheduled")
        ax.invert_xaxis()
        ax.set_xlabel("individual violation level")
        ax.set_ylabel("cost increase (%)")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path, digest)
