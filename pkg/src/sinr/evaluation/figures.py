"""PNG figures for an :class:`EvalReport`."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SYSTEM_COLORS = {"sinr": "#2b8cbe", "baseline": "#e34a33"}

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # keep output bytes stable across runs
    "svg.hashsalt": "sinr",
    "path.simplify": False,
}

_GROUPS = ("all", "straddling", "inside")


def _bars(ax, values: dict[str, list[float]], labels, ylabel: str) -> None:
    width = 0.38
    for i, (system, ys) in enumerate(values.items()):
        xs = [j + (i - 0.5) * width for j in range(len(labels))]
        bars = ax.bar(xs, ys, width, label=system, color=SYSTEM_COLORS[system])
        ax.bar_label(bars, fmt="%.2f", fontsize=7, padding=1)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel(ylabel)


def plot_quality(report, path: Path) -> Path:
    fig, (left, right) = plt.subplots(1, 2, sharey=True)
    _bars(left, {s: [report.hit_rate(s, g) for g in _GROUPS] for s in SYSTEM_COLORS},
          _GROUPS, "rate")
    left.set_title(f"hit@{report.k} (full containment)")
    _bars(right, {s: [report.fragmentation_rate(s, g) for g in _GROUPS] for s in SYSTEM_COLORS},
          _GROUPS, "")
    right.set_title("fragmentation")
    left.set_ylim(0, 1.3)
    left.legend(loc="upper center", ncols=2)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_context(report, path: Path) -> Path:
    fig, (left, right) = plt.subplots(1, 2)
    data = [[c.sinr_context_tokens for c in report.cases],
            [c.baseline_context_tokens for c in report.cases]]
    parts = left.boxplot(data, patch_artist=True)
    for patch, color in zip(parts["boxes"], SYSTEM_COLORS.values()):
        patch.set_facecolor(color)
    left.set_xticks([1, 2], list(SYSTEM_COLORS))
    left.set_ylabel("context tokens per query")
    left.set_title(f"returned context at k={report.k}")
    hits = [c.dedup_hits for c in report.cases]
    parents = [c.dedup_parents for c in report.cases]
    right.hist(parents, bins=range(0, max(hits + [1]) + 2), color=SYSTEM_COLORS["sinr"])
    right.axvline(sum(hits) / max(len(hits), 1), color="k", ls="--", lw=1, label="hits")
    right.set_xlabel(f"unique parents from top-{report.dedup_k} hits")
    right.set_ylabel("queries")
    right.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_latency(report, path: Path) -> Path:
    lat = report.latency_ms()
    fig, ax = plt.subplots()
    widest = max(sum(stages.values()) for stages in lat.values()) or 1.0
    for row, system in enumerate(SYSTEM_COLORS):
        left = 0.0
        for stage, ms in lat[system].items():
            ax.barh(row, ms, left=left, color=SYSTEM_COLORS[system],
                    edgecolor="white", alpha=0.55 + 0.1 * (left == 0))
            if ms > 0.06 * widest:
                ax.text(left + ms / 2, row, stage, ha="center", va="center", fontsize=7)
            left += ms
    ax.set_yticks(range(len(SYSTEM_COLORS)), list(SYSTEM_COLORS))
    ax.set_xlabel("mean latency per query (ms)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def render_figures(report, out_dir) -> list[Path]:
    """Write ``quality.png``, ``context.png`` and ``latency.png`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        return [
            plot_quality(report, out / "quality.png"),
            plot_context(report, out / "context.png"),
            plot_latency(report, out / "latency.png"),
        ]
