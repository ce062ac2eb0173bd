"""Minimal SVG output for batch results: histograms and time-series lines.

No plotting dependency; emits standalone .svg files.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

W, H = 640, 400
ML, MR, MT, MB = 60, 20, 30, 45
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    import math
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    else:
        step = 10.0 * mag
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str,
                 xr: Tuple[float, float], yr: Tuple[float, float]):
        self.parts: List[str] = []
        self.xr, self.yr = xr, yr
        self.parts.append(
            '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
            'viewBox="0 0 %d %d" font-family="sans-serif" font-size="12">' % (W, H, W, H))
        self.parts.append('<rect width="%d" height="%d" fill="white"/>' % (W, H))
        self.parts.append('<text x="%d" y="18" text-anchor="middle" font-size="14">%s</text>'
                          % (W // 2, _esc(title)))
        self.parts.append('<text x="%d" y="%d" text-anchor="middle">%s</text>'
                          % (ML + (W - ML - MR) // 2, H - 8, _esc(xlabel)))
        self.parts.append(
            '<text x="14" y="%d" text-anchor="middle" transform="rotate(-90 14 %d)">%s</text>'
            % (MT + (H - MT - MB) // 2, MT + (H - MT - MB) // 2, _esc(ylabel)))
        self._axes()

    def px(self, x: float) -> float:
        lo, hi = self.xr
        span = hi - lo if hi > lo else 1.0
        return ML + (x - lo) / span * (W - ML - MR)

    def py(self, y: float) -> float:
        lo, hi = self.yr
        span = hi - lo if hi > lo else 1.0
        return H - MB - (y - lo) / span * (H - MT - MB)

    def _axes(self) -> None:
        self.parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
                          % (ML, H - MB, W - MR, H - MB))
        self.parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
                          % (ML, MT, ML, H - MB))
        for tx in _ticks(*self.xr):
            x = self.px(tx)
            self.parts.append('<line x1="%.1f" y1="%d" x2="%.1f" y2="%d" stroke="black"/>'
                              % (x, H - MB, x, H - MB + 4))
            self.parts.append('<text x="%.1f" y="%d" text-anchor="middle">%g</text>'
                              % (x, H - MB + 17, tx))
        for ty in _ticks(*self.yr):
            y = self.py(ty)
            self.parts.append('<line x1="%d" y1="%.1f" x2="%d" y2="%.1f" stroke="black"/>'
                              % (ML - 4, y, ML, y))
            self.parts.append('<text x="%d" y="%.1f" text-anchor="end" dy="4">%g</text>'
                              % (ML - 7, y, ty))

    def legend(self, labels: Sequence[str]) -> None:
        for k, lab in enumerate(labels):
            y = MT + 14 + 16 * k
            c = PALETTE[k % len(PALETTE)]
            self.parts.append('<rect x="%d" y="%d" width="12" height="12" fill="%s" '
                              'fill-opacity="0.6"/>' % (W - MR - 110, y - 10, c))
            self.parts.append('<text x="%d" y="%d">%s</text>'
                              % (W - MR - 93, y, _esc(lab)))

    def finish(self) -> str:
        return "\n".join(self.parts) + "\n</svg>\n"


def histogram_svg(title: str, xlabel: str,
                  series: Dict[str, Tuple[Sequence[float], Sequence[int]]]) -> str:
    """series maps label -> (bin_edges, counts); bars drawn semi-transparent."""
    xs, tops = [], []
    for edges, counts in series.values():
        if len(counts):
            xs += [edges[0], edges[-1]]
            tops.append(max(counts))
    if not xs:
        xs, tops = [0.0, 1.0], [1]
    cv = _Canvas(title, xlabel, "count", (min(xs), max(xs)), (0.0, max(tops) * 1.05))
    for k, (label, (edges, counts)) in enumerate(series.items()):
        c = PALETTE[k % len(PALETTE)]
        for b, cnt in enumerate(counts):
            if cnt == 0:
                continue
            x0, x1 = cv.px(edges[b]), cv.px(edges[b + 1])
            y0, y1 = cv.py(cnt), cv.py(0.0)
            cv.parts.append(
                '<rect x="%.1f" y="%.1f" width="%.1f" height="%.1f" fill="%s" '
                'fill-opacity="0.45" stroke="%s"/>' % (x0, y0, x1 - x0, y1 - y0, c, c))
    cv.legend(list(series))
    return cv.finish()


def lines_svg(title: str, xlabel: str, ylabel: str,
              series: Dict[str, Tuple[Sequence[float], Sequence[float]]]) -> str:
    """series maps label -> (t, values); one polyline per label."""
    xs, ys = [0.0], [0.0]
    for t, v in series.values():
        xs += list(t)
        ys += list(v)
    cv = _Canvas(title, xlabel, ylabel, (min(xs), max(xs) or 1.0),
                 (min(ys), (max(ys) or 1.0) * 1.05))
    for k, (label, (t, v)) in enumerate(series.items()):
        if not len(t):
            continue
        pts = " ".join("%.2f,%.2f" % (cv.px(float(a)), cv.py(float(b)))
                       for a, b in zip(t, v))
        cv.parts.append('<polyline points="%s" fill="none" stroke="%s" stroke-width="1.5"/>'
                        % (pts, PALETTE[k % len(PALETTE)]))
    cv.legend(list(series))
    return cv.finish()
