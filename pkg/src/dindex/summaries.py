"""Descriptive summaries of an indicator table: yearly percentile timelines,
annual medians of milestone papers, and histograms with normal overlays."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from html import escape

import numpy as np
import pandas as pd

from .errors import DindexError


@dataclass
class YearlyPercentiles:
    indicator: str
    percentiles: tuple = (50, 90, 99)
    # year -> {"n": int, "p50": v, "p90": v, ...}
    rows: dict[int, dict] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        recs = [{"indicator": self.indicator, "year": y, **r} for y, r in sorted(self.rows.items())]
        return pd.DataFrame(recs)


@dataclass
class HistogramSummary:
    indicator: str
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    sd: float
    n: int


def _column(records: pd.DataFrame, indicator: str) -> pd.Series:
    if indicator not in records.columns:
        raise DindexError(f"unknown indicator column {indicator!r}")
    return pd.to_numeric(records[indicator], errors="coerce")


def nearest_rank(sorted_values: np.ndarray, p) -> float:
    """Value at 1-based rank ceil(p/100 * n) of ascending ``sorted_values``.

    ``p`` is taken as a decimal literal so that e.g. p=90, n=100 gives rank 90
    exactly rather than 91 through float rounding.
    """
    n = len(sorted_values)
    if n == 0:
        raise DindexError("percentile of an empty sample")
    q = Fraction(str(p))
    if not 0 < q < 100:
        raise ValueError(f"percentile must lie in (0, 100), got {p}")
    rank = max(1, -(-q * n // 100))
    return float(sorted_values[int(rank) - 1])


def yearly_percentiles(records: pd.DataFrame, indicator: str,
                       percentiles=(50, 90, 99)) -> YearlyPercentiles:
    """Nearest-rank percentiles of ``indicator`` per publication year.

    Undefined (NaN) values are left out of both the ranks and ``n``; years
    with no defined value are omitted.
    """
    values = _column(records, indicator)
    for p in percentiles:
        if not 0 < p < 100:
            raise ValueError(f"percentile must lie in (0, 100), got {p}")
    out = YearlyPercentiles(indicator, tuple(percentiles))
    ok = values.notna()
    years = records.loc[ok, "year"].astype(int).to_numpy()
    vals = values[ok].to_numpy(dtype=float)
    order = np.lexsort((vals, years))
    years, vals = years[order], vals[order]
    bounds = np.flatnonzero(np.diff(years)) + 1
    for chunk_y, chunk_v in zip(np.split(years, bounds), np.split(vals, bounds)):
        if not len(chunk_y):
            continue
        row = {"n": len(chunk_v)}
        for p in percentiles:
            row[f"p{p}"] = nearest_rank(chunk_v, p)
        out.rows[int(chunk_y[0])] = row
    if not out.rows:
        raise DindexError(f"no defined values for {indicator!r}")
    return out


def milestone_annual_medians(records: pd.DataFrame, indicator: str,
                             milestone: str = "milestone") -> pd.DataFrame:
    """Median of ``indicator`` over milestone papers, per year.

    Even counts take the midpoint of the two central values. Years without a
    defined milestone value are absent.
    """
    values = _column(records, indicator)
    if milestone not in records.columns:
        raise DindexError(f"milestone flag column {milestone!r} not present")
    flag = records[milestone].astype(bool) & values.notna()
    sub = pd.DataFrame({"year": records.loc[flag, "year"].astype(int),
                        "v": values[flag].astype(float)})
    rows = []
    for y, grp in sub.groupby("year", sort=True):
        rows.append({"indicator": indicator, "year": int(y), "n_milestone": len(grp),
                     "median": float(np.median(grp["v"].to_numpy()))})
    return pd.DataFrame(rows, columns=["indicator", "year", "n_milestone", "median"])


def histogram(records: pd.DataFrame, indicator: str, bins: int = 20) -> HistogramSummary:
    values = _column(records, indicator).dropna().to_numpy(dtype=float)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if len(values) == 0:
        raise DindexError(f"no defined values for {indicator!r}")
    counts, edges = np.histogram(values, bins=bins)
    sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return HistogramSummary(indicator, edges, counts, float(values.mean()), sd, len(values))


# rendering ------------------------------------------------------------

def percentile_table(summaries: list[YearlyPercentiles]) -> pd.DataFrame:
    """Rows ``indicator,year,n,median,p90,p99`` for the default percentiles."""
    frames = []
    for s in summaries:
        f = s.frame().rename(columns={"p50": "median"})
        frames.append(f[["indicator", "year", "n", "median", "p90", "p99"]])
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["indicator", "year", "n", "median", "p90", "p99"])


def histogram_table(summaries: list[HistogramSummary]) -> pd.DataFrame:
    rows = []
    for h in summaries:
        for b in range(len(h.counts)):
            rows.append({"indicator": h.indicator, "bin": b, "lo": h.edges[b],
                         "hi": h.edges[b + 1], "count": int(h.counts[b]),
                         "n": h.n, "mean": h.mean, "sd": h.sd})
    return pd.DataFrame(rows)


def svg_timeline(pct: YearlyPercentiles, milestones: pd.DataFrame | None = None,
                 width: int = 640, height: int = 360) -> str:
    """Line chart of the yearly percentiles with milestone medians as markers."""
    years = sorted(pct.rows)
    series = {f"p{p}": [pct.rows[y][f"p{p}"] for y in years] for p in pct.percentiles}
    points = [v for vs in series.values() for v in vs]
    if milestones is not None and len(milestones):
        points += list(milestones["median"])
    lo, hi = min(points), max(points)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    y_lo, y_hi = min(years), max(years)
    if milestones is not None and len(milestones):
        y_lo = min(y_lo, int(milestones["year"].min()))
        y_hi = max(y_hi, int(milestones["year"].max()))
    span = max(y_hi - y_lo, 1)
    ml, mr, mt, mb = 60, 20, 30, 40

    def sx(y):
        return ml + (y - y_lo) / span * (width - ml - mr)

    def sy(v):
        return height - mb - (v - lo) / (hi - lo) * (height - mt - mb)

    greys = ["#bbbbbb", "#888888", "#333333", "#000000"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<text x="{ml}" y="18">{escape(pct.indicator)}</text>',
           f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
           f'<text x="{ml - 5}" y="{sy(lo):.1f}" text-anchor="end">{lo:.3g}</text>',
           f'<text x="{ml - 5}" y="{sy(hi):.1f}" text-anchor="end">{hi:.3g}</text>',
           f'<text x="{sx(y_lo):.1f}" y="{height - mb + 15}">{y_lo}</text>',
           f'<text x="{sx(y_hi):.1f}" y="{height - mb + 15}" text-anchor="end">{y_hi}</text>']
    for k, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{sx(y):.1f},{sy(v):.1f}" for y, v in zip(years, vals))
        colour = greys[min(k, len(greys) - 1)]
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-dasharray="3,3" '
                   f'points="{pts}"><title>{name}</title></polyline>')
        out.append(f'<text x="{width - mr}" y="{mt + 12 * k}" text-anchor="end" '
                   f'fill="{colour}">{name}</text>')
    if milestones is not None:
        for r in milestones.itertuples(index=False):
            out.append(f'<circle cx="{sx(r.year):.1f}" cy="{sy(r.median):.1f}" r="3" '
                       f'fill="black"><title>{r.year}: {r.median:.4g}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
