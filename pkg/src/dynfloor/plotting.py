"""Report figures rendered to files (headless backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.linewidth": 0.8,
    "figure.dpi": 110,
}
PALETTE = ["#B40F20", "#0C5DA5", "#00A08A", "#F2AD00", "#F98400", "#5BBCD6"]


def _finish(ax):
    for spine in ("top", "right"):
        ax.spines[spine].set_visible(False)
    ax.grid(alpha=0.25, linewidth=0.5, linestyle="--")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_bid_histograms(hist: pd.DataFrame, path) -> Path:
    """Step histograms of observed bids, one line per floor level."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for color, (floor, grp) in zip(PALETTE * 4, hist.groupby("floor", sort=True)):
            edges = np.append(grp["bin_left"].to_numpy(), grp["bin_right"].to_numpy()[-1])
            ax.stairs(grp["count"].to_numpy(), edges, color=color, linewidth=1.4,
                      label=f"floor ${floor:.2f}")
            ax.axvline(floor, color=color, linewidth=0.7, linestyle=":")
        ax.set_xlabel("bid (CPM $)")
        ax.set_ylabel("auctions")
        ax.set_title("Observed bids by floor")
        if not hist.empty:
            ax.legend(frameon=False)
        _finish(ax)
        return _save(fig, path)


def plot_floor_timeseries(ts: pd.DataFrame, path) -> Path:
    """Daily optimal floors per placement, regular (solid) and rebroadcaster (dashed)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.6))
        groups = ts.groupby(["publisherId", "siteId", "placementId"], sort=True)
        for color, (key, grp) in zip(PALETTE * 4, groups):
            dates = pd.to_datetime(grp["date"])
            ax.plot(dates, grp["Regular"], color=color, marker="o", markersize=3,
                    label=f"{key[2]} regular")
            ax.plot(dates, grp["Rebroadcaster"], color=color, linestyle="--", marker="s",
                    markersize=3, label=f"{key[2]} rebroadcaster")
        ax.set_ylabel("floor (CPM $)")
        ax.set_title("Optimal floors by day")
        if not ts.empty:
            ax.legend(frameon=False, ncol=2)
        fig.autofmt_xdate()
        _finish(ax)
        return _save(fig, path)


def plot_lift(rows: pd.DataFrame, path) -> Path:
    """Bar chart of percentage lifts with 2-SE whiskers."""
    sel = rows[rows["metric"].isin(["revenue", "impressions", "ecpm_impression"])]
    labels = [f"{o} {m.replace('_', ' ')}" for o, m in zip(sel["origin"], sel["metric"])]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.8))
        y = np.arange(len(sel))
        colors = [PALETTE[1] if v >= 0 else PALETTE[0] for v in sel["lift_pct"]]
        ax.barh(y, sel["lift_pct"], xerr=2 * sel["se_pct"], color=colors, alpha=0.85,
                error_kw={"linewidth": 0.8, "capsize": 2})
        ax.set_yticks(y, labels)
        ax.axvline(0, color="0.2", linewidth=0.8)
        ax.set_xscale("symlog", linthresh=10)
        ax.set_xlabel("lift, dynamic vs disabled (%)")
        ax.invert_yaxis()
        _finish(ax)
        return _save(fig, path)
