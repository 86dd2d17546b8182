"""Report figures. Rendering is headless and byte-reproducible for identical inputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

if TYPE_CHECKING:
    from .backtest import NavSeries

REPORT_STYLE = {
    "figure.figsize": (7.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "fingraph",
}

# Strip the software/version stamp so identical inputs give identical bytes.
_PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_nav(nav: "NavSeries", path: str | Path) -> Path:
    with plt.rc_context(REPORT_STYLE):
        fig, ax = plt.subplots()
        if nav.points:
            dates = [d for d, _ in nav.points]
            ax.plot(dates, nav.values, color="#b2182b", marker="o", markersize=2.5, linewidth=1.2, label="strategy")
            ax.axhline(1.0, color="0.5", linewidth=0.8, linestyle="--")
            ax.legend(loc="upper left")
            fig.autofmt_xdate()
        else:
            ax.text(0.5, 0.5, "no trades", ha="center", va="center", transform=ax.transAxes)
        ax.set_ylabel("NAV")
        ax.set_title("Weekly net asset value")
        fig.tight_layout()
        return _save(fig, path)


def plot_industry_counts(counts: Mapping[str, int], path: str | Path) -> Path:
    with plt.rc_context(REPORT_STYLE):
        fig, ax = plt.subplots()
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if items:
            labels, values = zip(*items)
            ax.barh(range(len(values)), values, color="#2166ac")
            ax.set_yticks(range(len(values)), labels)
            ax.invert_yaxis()
        else:
            ax.text(0.5, 0.5, "no trades", ha="center", va="center", transform=ax.transAxes)
        ax.set_xlabel("trades")
        ax.set_title("Trades per primary industry")
        fig.tight_layout()
        return _save(fig, path)
