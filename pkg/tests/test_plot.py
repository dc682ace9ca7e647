import xml.etree.ElementTree as ET

import numpy as np
import pytest

from survtraction.metrics import km_estimate, log_rank
from survtraction.plot import _fmt_p, emit_km_svg, render_km_svg

SVG = "{http://www.w3.org/2000/svg}"


def two_groups(seed=0, n=100, ratio=3.0):
    rng = np.random.default_rng(seed)
    ta, tb = rng.exponential(1.0, n), rng.exponential(1.0 / ratio, n)
    ca = (rng.exponential(2.0, n) < ta).astype(int)
    cb = (rng.exponential(2.0, n) < tb).astype(int)
    return (ta, ca), (tb, cb)


def test_svg_is_well_formed(tmp_path):
    (ta, ca), (tb, cb) = two_groups()
    curves = {"high": km_estimate(tb, cb), "low": km_estimate(ta, ca)}
    out = emit_km_svg(curves, log_rank(ta, ca, tb, cb).p_value, tmp_path / "km.svg", "Fold 0")
    root = ET.parse(out).getroot()
    assert root.tag == f"{SVG}svg"
    lines = root.findall(f".//{SVG}polyline")
    assert [el.get("class") for el in lines] == ["km-high", "km-low"]
    assert len(root.findall(f".//{SVG}polygon[@class='band']")) == 2
    assert root.findall(f".//{SVG}text[@class='at-risk']")


def test_rendered_p_value_significant():
    (ta, ca), (tb, cb) = two_groups()
    p = log_rank(ta, ca, tb, cb).p_value
    assert p < 0.01
    root = ET.fromstring(render_km_svg({"high": km_estimate(tb, cb), "low": km_estimate(ta, ca)},
                                       p))
    text = root.find(f".//{SVG}text[@class='p-value']").text
    assert float(text.split("=")[1]) < 0.01


def test_identical_curves():
    (ta, ca), _ = two_groups()
    km = km_estimate(ta, ca)
    p = log_rank(ta, ca, ta, ca).p_value
    root = ET.fromstring(render_km_svg({"high": km, "low": km}, p))
    a, b = root.findall(f".//{SVG}polyline")
    assert a.get("points") == b.get("points")
    assert root.find(f".//{SVG}text[@class='p-value']").text == "log-rank p = 1.0000"


def test_at_risk_counts_start_at_group_size():
    (ta, ca), (tb, cb) = two_groups(n=40)
    root = ET.fromstring(render_km_svg({"high": km_estimate(tb, cb), "low": km_estimate(ta, ca)},
                                       0.5))
    counts = [int(el.text) for el in root.findall(f".//{SVG}text[@class='at-risk']")]
    assert counts[0] == 40 and counts[6] == 40
    assert counts[5] <= counts[0]


def test_p_formatting():
    assert _fmt_p(None) == "log-rank p = n/a"
    assert _fmt_p(3e-9) == "log-rank p = 3.00e-09"
    assert _fmt_p(0.0123) == "log-rank p = 0.0123"


def test_empty_curve_rejected():
    empty = km_estimate([1.0], [0])
    empty.times = np.array([])
    with pytest.raises(ValueError):
        render_km_svg({"high": empty}, 0.5)


def test_unwritable_path(tmp_path):
    km = km_estimate([1.0, 2.0], [0, 0])
    with pytest.raises(OSError):
        emit_km_svg({"high": km, "low": km}, 0.5, tmp_path / "missing" / "km.svg")
