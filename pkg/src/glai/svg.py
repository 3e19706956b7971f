"""Static SVG line charts with no plotting dependency.

Output is a pure function of the data, so identical runs produce identical
bytes.
"""
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 70, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    label: str
    x: list
    y: list
    color: str = ""
    dashed: bool = False


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != 0 else "0"


def _tick_label(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def nice_ticks(lo, hi, target=5):
    """Round tick positions covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0, 1.0]
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.floor(lo / step)
    last = math.ceil(hi / step - 1e-9)
    return [round(i * step, 12) for i in range(first, last + 1)]


def _finite_points(s):
    return [(float(a), float(b)) for a, b in zip(s.x, s.y)
            if b is not None and math.isfinite(a) and math.isfinite(b)]


def _bounds(series):
    pts = [p for s in series for p in _finite_points(s)]
    if not pts:
        return [0.0, 1.0], [0.0, 1.0]
    xs, ys = zip(*pts)
    return nice_ticks(min(xs), max(xs)), nice_ticks(min(ys), max(ys))


class _Axis:
    def __init__(self, ticks, pixel_lo, pixel_hi):
        self.lo, self.hi = ticks[0], ticks[-1]
        self.ticks = ticks
        self.p0, self.p1 = pixel_lo, pixel_hi

    def __call__(self, v):
        span = self.hi - self.lo or 1.0
        return self.p0 + (v - self.lo) / span * (self.p1 - self.p0)


def line_chart(series, title="", xlabel="", ylabel="", right=(), right_label=""):
    """Render ``series`` (left y axis) and optional ``right`` series as an SVG string."""
    series, right = list(series), list(right)
    x_ticks, y_ticks = _bounds(series + right)
    if right:
        _, y_ticks = _bounds(series)
        _, r_ticks = _bounds(right)
    plot_l, plot_r = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    plot_t, plot_b = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
    ax = _Axis(x_ticks, plot_l, plot_r)
    ay = _Axis(y_ticks, plot_b, plot_t)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{plot_l}" y="{plot_t}" width="{plot_r - plot_l}" height="{plot_b - plot_t}" '
        'fill="none" stroke="#444444"/>',
    ]
    for t in x_ticks:
        px = _fmt(ax(t))
        out.append(f'<line x1="{px}" y1="{plot_b}" x2="{px}" y2="{plot_b + 5}" stroke="#444444"/>')
        out.append(f'<text x="{px}" y="{plot_b + 18}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in y_ticks:
        py = _fmt(ay(t))
        out.append(f'<line x1="{plot_l}" y1="{py}" x2="{plot_r}" y2="{py}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{plot_l - 8}" y="{py}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(t)}</text>')
    out.append(f'<text x="{(plot_l + plot_r) / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{(plot_t + plot_b) / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {(plot_t + plot_b) / 2:.0f})">{escape(ylabel)}</text>')

    curves = [(s, ay) for s in series]
    if right:
        ar = _Axis(r_ticks, plot_b, plot_t)
        for t in r_ticks:
            py = _fmt(ar(t))
            out.append(f'<line x1="{plot_r}" y1="{py}" x2="{plot_r + 5}" y2="{py}" stroke="#444444"/>')
            out.append(f'<text x="{plot_r + 8}" y="{py}" dominant-baseline="middle">{_tick_label(t)}</text>')
        rx = WIDTH - 14
        out.append(f'<text x="{rx}" y="{(plot_t + plot_b) / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(90 {rx} {(plot_t + plot_b) / 2:.0f})">{escape(right_label)}</text>')
        curves += [(s, ar) for s in right]

    for i, (s, axis) in enumerate(curves):
        color = s.color or PALETTE[i % len(PALETTE)]
        pts = _finite_points(s)
        if not pts:
            continue
        coords = " ".join(f"{_fmt(ax(a))},{_fmt(axis(b))}" for a, b in pts)
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = plot_t + 16 + 16 * i
        out.append(f'<line x1="{plot_r - 150}" y1="{ly}" x2="{plot_r - 126}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{plot_r - 120}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loss_chart(comparison):
    """Training and validation loss per epoch for both arms of a comparison."""
    series = []
    for report, color in ((comparison.mlp, PALETTE[0]), (comparison.glai, PALETTE[1])):
        recs = report.records
        series.append(Series(f"{report.arm} val loss", [r.epoch for r in recs],
                             [r.val_loss for r in recs], color))
        series.append(Series(f"{report.arm} train loss", [r.epoch for r in recs],
                             [r.train_loss for r in recs], color, dashed=True))
    return line_chart(series, "Loss per epoch", "epoch", "loss")


def structure_chart(report):
    """Structural metric m_t (left) against validation loss (right) during phase 1."""
    recs = [r for r in report.records if r.m_t is not None]
    epochs = [r.epoch for r in recs]
    return line_chart(
        [Series("m_t (path distance)", epochs, [r.m_t for r in recs], PALETTE[2])],
        "Structural convergence", "epoch", "path distance m_t",
        right=[Series("validation loss", epochs, [r.val_loss for r in recs], PALETTE[3])],
        right_label="validation loss",
    )
