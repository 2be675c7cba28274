import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cgvae.plotting import HEIGHT, MARGIN, bar_chart_svg, histogram_svg, line_plot_svg

NS = "{http://www.w3.org/2000/svg}"


def _parse(svg):
    return ET.fromstring(svg)


def test_histogram_bar_heights_follow_counts():
    root = _parse(histogram_svg([0.1, 0.1, 0.1, -2.0], bins=4, title="a<b"))
    bars = [r for r in root.iter(NS + "rect") if r.get("stroke") == "white"]
    assert len(bars) == 4
    heights = [float(r.get("height")) for r in bars]
    full = HEIGHT - 2 * MARGIN
    assert heights == pytest.approx([full / 3, 0.0, full, 0.0], abs=0.01)
    assert any(t.text == "a<b" for t in root.iter(NS + "text"))


def test_bar_chart_with_errors_and_missing_values():
    svg = bar_chart_svg(["m1", "m2"], {"x": [1.0, 2.0], "y": [np.nan, 0.5]},
                        errors={"x": [0.1, 0.1], "y": [0.0, 0.0]})
    root = _parse(svg)
    filled = [r for r in root.iter(NS + "rect") if r.get("width") not in ("8", str(480))]
    assert len(filled) == 3
    assert len([ln for ln in root.iter(NS + "line") if ln.get("stroke") == "black"]) == 2 + 3


def test_line_plot_points_and_log_axis():
    root = _parse(line_plot_svg([1, 2, 3], {"a": [1.0, 10.0, 100.0], "b": [5.0, 5.0, 5.0]}, log_y=True))
    lines = list(root.iter(NS + "polyline"))
    assert len(lines) == 2
    ys = [float(p.split(",")[1]) for p in lines[0].get("points").split()]
    # equal steps on a log axis
    assert ys[0] - ys[1] == pytest.approx(ys[1] - ys[2], abs=0.02)
    line_plot_svg([0], {"flat": [1.0]})
