"""Static line/scatter figures from results CSVs."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import read_csv  # noqa: E402


def plot_csv(path, x: str, ys, out, group: str | None = None, kind: str = "line") -> None:
    rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: no rows")
    ys = [ys] if isinstance(ys, str) else list(ys)
    for col in [x, *ys] + ([group] if group else []):
        if col not in rows[0]:
            raise KeyError(f"column {col!r} not in {path}")
    series = defaultdict(list)
    for r in rows:
        if any(r[c] == "" for c in [x, *ys]):
            continue
        series[r[group] if group else ""].append(r)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, rs in sorted(series.items()):
        rs = sorted(rs, key=lambda r: float(r[x]))
        xv = [float(r[x]) for r in rs]
        for y in ys:
            yv = [float(r[y]) for r in rs]
            label = " ".join(s for s in (f"{group}={key}" if group else "", y if len(ys) > 1 or not group else "") if s)
            if kind == "scatter":
                ax.scatter(xv, yv, label=label or y, s=12)
            else:
                ax.plot(xv, yv, marker="o", ms=3, label=label or y)
    ax.set_xlabel(x)
    ax.set_ylabel(ys[0] if len(ys) == 1 else "value")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
