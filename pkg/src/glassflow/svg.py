"""Minimal deterministic SVG renderers for overlap histograms and triangle scatters."""

from xml.sax.saxutils import escape

W, H, PAD = 480, 320, 40


def _frame(title, body, x_label, y_label):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>\n'
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>\n'
        f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle" font-size="12">{escape(x_label)}</text>\n'
        f'<text x="12" y="{H / 2}" font-size="12" transform="rotate(-90 12 {H / 2})" '
        f'text-anchor="middle">{escape(y_label)}</text>\n'
        + body
        + "</svg>\n"
    )


def histogram_svg(hist, title="P(q)"):
    """Bars over q in [-1, 1]; height normalized to the tallest bin."""
    top = max(1, int(max(hist.counts)))
    sx = (W - 2 * PAD) / 2.0
    sy = (H - 2 * PAD) / top
    bars = []
    for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
        if c == 0:
            continue
        x = PAD + (lo + 1.0) * sx
        h = c * sy
        bars.append(f'<rect x="{x:.2f}" y="{H - PAD - h:.2f}" width="{(hi - lo) * sx:.2f}" '
                    f'height="{h:.2f}" fill="steelblue"/>\n')
    ticks = "".join(
        f'<text x="{PAD + (q + 1.0) * sx:.1f}" y="{H - PAD + 14}" text-anchor="middle" '
        f'font-size="10">{q:g}</text>\n' for q in (-1.0, -0.5, 0.0, 0.5, 1.0))
    return _frame(title, "".join(bars) + ticks, "q", "count")


def triangle_svg(stats, title="triangles", limit=0.5):
    """Scatter of (d_max - d_mid, d_mid - d_min) on fixed axes [0, limit]^2."""
    sx = (W - 2 * PAD) / limit
    sy = (H - 2 * PAD) / limit
    dots = []
    for a, b in stats.raw_points:
        if a > limit or b > limit:
            continue
        dots.append(f'<circle cx="{PAD + a * sx:.2f}" cy="{H - PAD - b * sy:.2f}" r="1.5" '
                    f'fill="black" fill-opacity="0.2"/>\n')
    return _frame(title, "".join(dots), "d_max - d_mid", "d_mid - d_min")
