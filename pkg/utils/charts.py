import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.colors import BoundaryNorm  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from utils.file_handler import atomic_write  # noqa: E402

KINDS = ("annual", "trend", "decade_seasonal", "hovmoller", "brier")
HOVMOLLER_LEVELS = np.round(np.arange(0.0, 1.01, 0.1), 2)

SVG_PARAMS = {
    "svg.hashsalt": "foehn",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _frame(data):
    """Accepts a DataFrame or an object exposing one (ScoreReport.scores, StrFit)."""
    if isinstance(data, pd.DataFrame):
        return data
    if hasattr(data, "scores"):
        return data.scores
    if hasattr(data, "trend") and hasattr(data, "ci_lower"):
        return pd.DataFrame({
            "year": data.years, "month": data.months, "y": data.y, "trend": data.trend,
            "ci_lo": data.ci_lower, "ci_hi": data.ci_upper,
        })
    raise ValueError(f"cannot chart data of type {type(data).__name__}")


def _annual(ax, df):
    ax.plot(df["year"], df["recon_annual_mean"], color="tab:blue", marker="o", ms=3, label="reconstruction")
    if "obs_annual_mean" in df and df["obs_annual_mean"].notna().any():
        ax.plot(df["year"], df["obs_annual_mean"], color="tab:red", marker="s", ms=3, ls="none",
                label="classification (>= 80% available)")
    ax.set_title("Annual mean of daily maximum foehn probability")
    ax.set_xlabel("Year")
    ax.set_ylabel("Probability")
    ax.legend(loc="upper left")


def _trend(ax, df):
    x = df["year"].to_numpy() + (df["month"].to_numpy() - 0.5) / 12.0
    band = ax.fill_between(x, df["ci_lo"], df["ci_hi"], color="tab:blue", alpha=0.25, lw=0,
                           label="95% band", zorder=1)
    band.set_gid("ci_band")
    if "y" in df:
        ax.plot(x, df["y"], color="0.6", lw=0.6, label="monthly mean of daily max", zorder=0.5)
    (line,) = ax.plot(x, df["trend"], color="tab:blue", lw=1.8, label="trend", zorder=2)
    line.set_gid("trend_line")
    ax.set_title("Season-trend decomposition: trend")
    ax.set_xlabel("Year")
    ax.set_ylabel("Probability")
    ax.legend(loc="upper left")


def _decade_seasonal(ax, df):
    months = np.arange(1, 13)
    decades = [c for c in df.columns if str(c) != "all"]
    colors = plt.get_cmap("viridis")(np.linspace(0.0, 1.0, max(len(decades), 1)))
    for color, decade in zip(colors, decades):
        ax.plot(months, df[decade].to_numpy(), color=color, lw=1.2, label=f"{decade}s")
    if "all" in df.columns:
        ax.plot(months, df["all"].to_numpy(), color="black", lw=2.0, ls="--", label="all years")
    ax.set_xticks(months)
    ax.set_title("Seasonal component by decade")
    ax.set_xlabel("Month")
    ax.set_ylabel("Seasonal effect")
    ax.legend(loc="best", fontsize="small", ncol=2)


def _hovmoller(fig, ax, df):
    values = np.ma.masked_invalid(df.to_numpy(dtype=float))
    cmap = plt.get_cmap("YlOrRd", len(HOVMOLLER_LEVELS) - 1)
    norm = BoundaryNorm(HOVMOLLER_LEVELS, cmap.N)
    mesh = ax.pcolormesh(np.arange(25) - 0.5, np.arange(13) + 0.5, values, cmap=cmap, norm=norm,
                         shading="flat")
    finite = values.compressed()
    if finite.size and np.ptp(finite) == 0.0:
        # a constant matrix gets one legend entry instead of a colour scale
        level = float(finite[0])
        legend = ax.legend(handles=[Patch(facecolor=cmap(norm(level)), label=f"{level:.2f}")],
                           title="Mean probability", loc="upper left", bbox_to_anchor=(1.01, 1.0))
        legend.set_gid("hovmoller_legend")
    else:
        bar = fig.colorbar(mesh, ax=ax, ticks=HOVMOLLER_LEVELS, label="Mean probability")
        bar.ax.set_gid("hovmoller_colorbar")
    ax.set_xticks(range(0, 24, 3))
    ax.set_yticks(range(1, 13))
    ax.set_title("Foehn probability by month and hour of day")
    ax.set_xlabel("Hour (UTC)")
    ax.set_ylabel("Month")
    ax.grid(False)


def _brier(ax, df):
    if "fold" in df.columns:
        pooled = df[(df["fold"] == "pooled") & (df["split"] == "test")]
        df = pooled if not pooled.empty else df[df["split"] == "train"]
    means = df.groupby(["set", "learner"])["brier"].mean().unstack("learner")
    if means.empty:
        raise ValueError("no Brier scores to chart")
    sets = list(means.index)
    learners = list(means.columns)
    width = 0.8 / len(learners)
    x = np.arange(len(sets))
    for i, learner in enumerate(learners):
        ax.bar(x + i * width - 0.4 + width / 2, means[learner].to_numpy(), width, label=learner)
    ax.set_xticks(x)
    ax.set_xticklabels(sets)
    ax.set_title("Mean Brier score")
    ax.set_xlabel("Variable set")
    ax.set_ylabel("Brier score")
    ax.legend(loc="upper right")


def render_svg(kind, data, path=None):
    """
    Renders one chart as a standalone SVG document.

    Parameters:
    - kind: annual | trend | decade_seasonal | hovmoller | brier
    - data: the matching export (reconstruction report, StrFit or fit table,
      decade matrix, hovmoller matrix, ScoreReport or score table)
    - path: written atomically when given

    Returns:
    - SVG text; identical input gives identical bytes
    """
    if kind not in KINDS:
        raise ValueError(f"unknown chart kind {kind!r}; expected one of {list(KINDS)}")
    df = _frame(data)
    if df.empty or df.select_dtypes("number").isna().all().all():
        raise ValueError(f"no data to chart for {kind!r}")

    with plt.rc_context(SVG_PARAMS):
        fig, ax = plt.subplots(figsize=(9, 5) if kind != "hovmoller" else (10, 5))
        try:
            if kind == "annual":
                _annual(ax, df)
            elif kind == "trend":
                _trend(ax, df)
            elif kind == "decade_seasonal":
                _decade_seasonal(ax, df)
            elif kind == "hovmoller":
                _hovmoller(fig, ax, df)
            else:
                _brier(ax, df)
            fig.tight_layout()
            buf = io.StringIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)

    svg = buf.getvalue()
    if path:
        atomic_write(path, svg)
    return svg
