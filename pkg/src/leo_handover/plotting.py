"""Minimal hand-written SVG charts for the four result figures."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import metrics

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=55)
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
POLICY_ORDER = ("mrst", "mac", "mis", "qlearning", "nash-dqn", "nash-sac")
TYPE_ORDER = ("aircraft", "evtol", "uav", "ground")


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if np.isfinite(v) else "nan"


def _ticks(lo: float, hi: float, n: int = 5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0]
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


class _Canvas:
    def __init__(self, title, xlabel, ylabel, xlim, ylim):
        self.parts = []
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
        lo, hi = ylim
        if hi == lo:
            hi = lo + 1.0
        self.xlim, self.ylim = xlim, (lo, hi)
        self.parts.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
        self.parts.append(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>')
        self.parts.append(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>')
        self.parts.append(f'<text x="{(self.x0 + self.x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
                          f'font-size="12">{escape(xlabel)}</text>')
        self.parts.append(f'<text x="16" y="{(self.y0 + self.y1) / 2:.1f}" text-anchor="middle" font-size="12" '
                          f'transform="rotate(-90 16 {(self.y0 + self.y1) / 2:.1f})">{escape(ylabel)}</text>')
        for t in _ticks(*self.ylim):
            y = self.py(t)
            self.parts.append(f'<line x1="{self.x0 - 4}" y1="{y:.1f}" x2="{self.x0}" y2="{y:.1f}" stroke="black"/>')
            self.parts.append(f'<text x="{self.x0 - 7}" y="{y + 4:.1f}" text-anchor="end" font-size="10">'
                              f'{_num(t)}</text>')
        self.legend_rows = 0

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / ((hi - lo) or 1.0) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)

    def xticks(self, values, labels=None):
        labels = labels or [_num(v) for v in values]
        for v, lab in zip(values, labels):
            x = self.px(v)
            self.parts.append(f'<line x1="{x:.1f}" y1="{self.y0}" x2="{x:.1f}" y2="{self.y0 + 4}" stroke="black"/>')
            self.parts.append(f'<text x="{x:.1f}" y="{self.y0 + 17}" text-anchor="middle" font-size="10">'
                              f'{escape(str(lab))}</text>')

    def legend(self, label, color, dashed=False):
        y = self.y1 + 14 * self.legend_rows
        x = self.x1 + 12
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        self.parts.append(f'<line x1="{x}" y1="{y:.1f}" x2="{x + 18}" y2="{y:.1f}" stroke="{color}" '
                          f'stroke-width="2"{dash}/>')
        self.parts.append(f'<text x="{x + 23}" y="{y + 4:.1f}" font-size="11">{escape(label)}</text>')
        self.legend_rows += 1

    def polyline(self, xs, ys, color, dashed=False, step=False):
        pts = []
        prev_y = None
        for x, y in zip(xs, ys):
            if step and prev_y is not None:
                pts.append(f"{self.px(x):.1f},{self.py(prev_y):.1f}")
            pts.append(f"{self.px(x):.1f},{self.py(y):.1f}")
            prev_y = y
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        self.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{" ".join(pts)}"/>')

    def rect(self, x, w, y_val, color):
        base = self.py(max(self.ylim[0], min(0.0, self.ylim[1])))
        top = self.py(y_val)
        y, h = min(base, top), abs(base - top)
        self.parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{h:.1f}" fill="{color}"/>')

    def svg(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, step: bool = False, dashed=()) -> str:
    """``series``: label -> (xs, ys)."""
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(v[0], float) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1], float) for v in series.values()])
    ys = ys[np.isfinite(ys)]
    ylo = min(0.0, ys.min()) if ys.size else 0.0
    yhi = ys.max() if ys.size else 1.0
    c = _Canvas(title, xlabel, ylabel, (xs.min(), xs.max()), (ylo, yhi))
    c.xticks(_ticks(xs.min(), xs.max()))
    for i, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        c.polyline(x, y, color, dashed=label in dashed, step=step)
        c.legend(label, color, dashed=label in dashed)
    return c.svg()


def bar_chart(groups, series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Grouped bars: ``series`` maps a legend label to one value per group."""
    if not series or not groups:
        raise ValueError("nothing to plot")
    vals = np.array([v for s in series.values() for v in s], float)
    vals = vals[np.isfinite(vals)]
    lo = min(0.0, vals.min()) if vals.size else 0.0
    hi = max(0.0, vals.max()) if vals.size else 1.0
    c = _Canvas(title, xlabel, ylabel, (-0.5, len(groups) - 0.5), (lo, hi))
    c.xticks(list(range(len(groups))), list(groups))
    slot = (c.x1 - c.x0) / len(groups)
    width = 0.8 * slot / len(series)
    for j, (label, values) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        for g, v in enumerate(values):
            if np.isfinite(v):
                c.rect(c.px(g) - 0.4 * slot + j * width, width, v, color)
        c.legend(label, color)
    return c.svg()


# ---------------------------------------------------------------------------
# Figures from a run-matrix output directory
# ---------------------------------------------------------------------------

def _ordered(policies):
    known = [p for p in POLICY_ORDER if p in policies]
    return known + sorted(set(policies) - set(known))


def _load(out_root: Path):
    summary = out_root / "summary.csv"
    if not summary.exists():
        raise FileNotFoundError(f"no summary.csv under {out_root}")
    rows = metrics.read_metrics_csv(summary)
    if not rows:
        raise ValueError(f"{summary} has no runs")
    return rows


def _reference_L(rows):
    Ls = sorted({r["L"] for r in rows})
    return 8 if 8 in Ls else Ls[len(Ls) // 2]


def _reference_scenario(rows):
    return "s2" if any(r["scenario"] == "s2" for r in rows) else rows[0]["scenario"]


def handover_figure(rows, out_root: Path) -> str:
    L, sc = _reference_L(rows), _reference_scenario(rows)
    curves = defaultdict(list)
    for r in rows:
        if r["L"] == L and r["scenario"] == sc:
            data = np.loadtxt(out_root / "runs" / r["run_id"] / "handovers.csv", delimiter=",", skiprows=1, ndmin=2)
            curves[r["policy"]].append(data)
    series = {}
    for p in _ordered(curves):
        arr = np.stack(curves[p])
        series[p] = (arr[0, :, 0], arr[:, :, 1].mean(axis=0))
    return line_chart(series, f"Cumulative average handovers (L={L}, {sc})", "time (s)", "handovers per user",
                      step=True)


def blocking_figure(rows) -> str:
    sc = _reference_scenario(rows)
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["scenario"] == sc:
            acc[r["policy"]][r["L"]].append(r["blocking"])
    series = {}
    for p in _ordered(acc):
        Ls = sorted(acc[p])
        series[p] = (np.array(Ls, float), np.array([np.mean(acc[p][L]) for L in Ls]))
    return line_chart(series, f"Blocking versus channels per satellite ({sc})", "channels L", "blocking")


def utility_figure(rows) -> str:
    L, sc = _reference_L(rows), _reference_scenario(rows)
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["L"] == L and r["scenario"] == sc:
            for t in TYPE_ORDER:
                acc[r["policy"]][t].append(r[f"psi_{t}"])
    series = {p: [float(np.nanmean(acc[p][t])) if acc[p][t] else float("nan") for t in TYPE_ORDER]
              for p in _ordered(acc)}
    return bar_chart(list(TYPE_ORDER), series, f"Network utility per user type (L={L}, {sc})", "user type",
                     "mean utility per user")


def cinr_figure(rows, out_root: Path, policy: str = None) -> str:
    L = _reference_L(rows)
    present = {r["policy"] for r in rows if r["L"] == L}
    if policy is None:
        policy = next((p for p in ("nash-sac", "nash-dqn", "qlearning") if p in present), _ordered(present)[0])
    samples = defaultdict(list)
    for r in rows:
        if r["L"] == L and r["policy"] == policy:
            for (sc, t), v in metrics.read_cdf_csv(out_root / "runs" / r["run_id"] / "cdf.csv").items():
                samples[(t, sc)].append(v)
    series, dashed = {}, set()
    for t in TYPE_ORDER:
        for sc in ("s1", "s2"):
            if (t, sc) in samples:
                x, p = metrics.cinr_cdf(np.concatenate(samples[(t, sc)]))
                if x.size:
                    label = f"{t} {sc}"
                    series[label] = (x, p)
                    if sc == "s2":
                        dashed.add(label)
    return line_chart(series, f"CDF of downlink CINR ({policy}, L={L})", "CINR (dB)", "CDF", step=True,
                      dashed=dashed)


def plot_all(out_root, fig_dir=None) -> list[Path]:
    out_root = Path(out_root)
    fig_dir = Path(fig_dir) if fig_dir else out_root / "figures"
    rows = _load(out_root)
    fig_dir.mkdir(parents=True, exist_ok=True)
    made = []
    for name, svg in (("handovers.svg", handover_figure(rows, out_root)), ("blocking.svg", blocking_figure(rows)),
                      ("utility.svg", utility_figure(rows)), ("cinr_cdf.svg", cinr_figure(rows, out_root))):
        path = fig_dir / name
        path.write_text(svg)
        made.append(path)
    (fig_dir / "index.json").write_text(json.dumps([p.name for p in made]) + "\n")
    return made
