import pytest

from xxzlab.ensemble import EnsembleConfig, EnsembleResult, GridPoint
from xxzlab.plotting import PlotError, emit_plotdata, render_svg


def _result(means, fit=None):
    cfg = EnsembleConfig("quasiloc", 8, 10.0, 10.0, (1, 2, 3), 2)
    pts = [GridPoint(float(i + 1), m, 0.1 * abs(m), 2, m, m) for i, m in enumerate(means)]
    return EnsembleResult(cfg.to_json(), pts, fit, [], None, {})


def test_svg_is_byte_stable(tmp_path):
    res = _result([1.0, 0.3, 0.1], {"theta": 1.1, "intercept": 1.1, "half_width": 0.1})
    a = render_svg(res, tmp_path / "a.svg").read_bytes()
    b = render_svg(res, tmp_path / "b.svg").read_bytes()
    assert a == b
    assert b"<dc:date>" not in a
    assert a.count(b"<use ") >= 3  # one marker per grid point


def test_censored_points_are_drawn(tmp_path):
    with_zero = render_svg(_result([1.0, 0.3, 0.0]), tmp_path / "c.svg").read_text()
    dropped = render_svg(_result([1.0, 0.3]), tmp_path / "d.svg").read_text()
    assert with_zero.count("<use ") > dropped.count("<use ")


def test_emit_plotdata_writes_both(tmp_path):
    csv, svg = emit_plotdata(_result([1.0, 0.5, 0.2]), tmp_path / "sub" / "curve.json")
    assert csv.name == "curve.csv" and svg.name == "curve.svg"
    assert len(csv.read_text().splitlines()) == 4


def test_empty_result_is_refused(tmp_path):
    with pytest.raises(PlotError):
        emit_plotdata(_result([]), tmp_path / "e")
    with pytest.raises(PlotError):
        render_svg(_result([]), tmp_path / "e.svg")
