"""Agreement distribution summaries: percentile tables, histograms, densities."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

from .agreement import (
    DEFAULT_PERCENTILES,
    AgreementRow,
    KappaDistribution,
    kappa_distribution,
    kappa_percentiles,
)
from .conditioning import ConditioningKind


@dataclass
class AgreementReport:
    percentiles: Sequence[float]
    table: dict[ConditioningKind, list[float]]
    distributions: dict[ConditioningKind, KappaDistribution]
    n_samples: int

    def percentile_csv(self) -> str:
        """One row per conditioning, one column per percentile."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["conditioning", *(_pct_label(p) for p in self.percentiles)])
        for kind, values in self.table.items():
            writer.writerow([kind.value, *(repr(v) for v in values)])
        return buf.getvalue()

    def histogram_csv(self, kind) -> str:
        return _rows_csv(("bin_left", "bin_right", "count"), self.distributions[kind].histogram_rows())

    def density_csv(self, kind) -> str:
        return _rows_csv(("x", "density"), self.distributions[kind].density_rows())

    def to_json(self) -> str:
        payload = {
            "n_samples": self.n_samples,
            "percentiles": list(self.percentiles),
            "table": {k.value: v for k, v in self.table.items()},
            "distributions": {
                k.value: {
                    "bandwidth": d.bandwidth,
                    "histogram": [
                        {"bin_left": l, "bin_right": r, "count": c} for l, r, c in d.histogram_rows()
                    ],
                    "density": [{"x": x, "density": y} for x, y in d.density_rows()],
                }
                for k, d in self.distributions.items()
            },
        }
        return json.dumps(payload, indent=2) + "\n"


def _pct_label(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def build_report(
    rows: Sequence[AgreementRow],
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    n_bins: int = 20,
) -> AgreementReport:
    if not rows:
        raise ValueError("no multi-annotated samples to summarize")
    table, dists = {}, {}
    for kind in ConditioningKind:
        scores = [r.kappas[kind] for r in rows]
        table[kind] = kappa_percentiles(scores, percentiles)
        dists[kind] = kappa_distribution(scores, n_bins)
    return AgreementReport(list(percentiles), table, dists, len(rows))


def distribution_svg(dist: KappaDistribution, title: str = "", width: int = 480, height: int = 300) -> str:
    """Plain SVG: histogram bars scaled to density, KDE as a polyline."""
    margin = 30
    lo = min(float(dist.x[0]), float(dist.bin_edges[0]))
    hi = max(float(dist.x[-1]), float(dist.bin_edges[-1]))
    span = hi - lo or 1.0
    n = int(dist.counts.sum())
    widths = [max(float(r - l), 1e-12) for l, r in zip(dist.bin_edges[:-1], dist.bin_edges[1:])]
    bar_heights = [c / (n * w) if float(w) > 1e-12 else 0.0 for c, w in zip(dist.counts, widths)]
    ymax = max([float(dist.density.max()), *bar_heights]) or 1.0

    def sx(v):
        return margin + (v - lo) / span * (width - 2 * margin)

    def sy(v):
        return height - margin - v / ymax * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{margin}" y="{margin - 10}" font-size="12">{escape(title)}</text>',
    ]
    for (l, r), h in zip(zip(dist.bin_edges[:-1], dist.bin_edges[1:]), bar_heights):
        x0, x1 = sx(float(l)), sx(float(r))
        parts.append(
            f'<rect x="{x0:.2f}" y="{sy(h):.2f}" width="{max(x1 - x0, 1.0):.2f}" '
            f'height="{sy(0) - sy(h):.2f}" fill="#bbbbbb"/>'
        )
    points = " ".join(f"{sx(float(x)):.2f},{sy(float(d)):.2f}" for x, d in zip(dist.x, dist.density))
    parts.append(f'<polyline points="{points}" fill="none" stroke="black"/>')
    parts.append(
        f'<line x1="{margin}" y1="{sy(0):.2f}" x2="{width - margin}" y2="{sy(0):.2f}" stroke="black"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
