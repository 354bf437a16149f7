import io
import json

import pytest

from xxzlab.cli import build_parser, main
from xxzlab.ensemble import load


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def test_experiment_writes_outputs(tmp_path):
    out = tmp_path / "q.json"
    code, text = run(["quasiloc", "--L", "8", "--delta", "10", "--lambda", "10", "--samples",
                      "3", "--dist", "1,2,3", "--out", str(out)])
    assert code == 0
    assert "theta" in text
    assert out.exists() and out.with_suffix(".csv").exists() and out.with_suffix(".svg").exists()
    assert load(out).config["samples"] == 3
    code, text = run(["fit", str(out), "--plot", str(tmp_path / "fit")])
    assert code == 0 and text.startswith("theta =")


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "quasiloc", "L": 8, "delta": 10.0, "lam": 10.0,
                               "grid": [1, 2], "samples": 5, "seed": 1}))
    out = tmp_path / "r.json"
    assert run(["quasiloc", "--config", str(cfg), "--samples", "2", "--out", str(out)])[0] == 0
    res = load(out)
    assert res.config["samples"] == 2 and res.config["seed"] == 1


@pytest.mark.parametrize("argv", [
    ["quasiloc", "--L", "8", "--delta", "0.5", "--lambda", "1"],
    ["quasiloc", "--L", "8", "--delta", "10", "--lambda", "1", "--q", "0.3"],
    ["quasiloc", "--L", "8", "--delta", "10", "--lambda", "1", "--samples", "0"],
    ["propagate", "--L", "8", "--delta", "10", "--lambda", "1", "--ell", "0"],
    ["quasiloc", "--dist", "a,b"],
    ["nonsense"],
    ["spectrum", "--L", "6"],
    ["verify", "--sizes", "2"],
])
def test_bad_input_exit_code(argv):
    assert run(argv)[0] == 2


def test_fit_on_missing_or_censored(tmp_path):
    assert run(["fit", str(tmp_path / "missing.json")])[0] == 2
    out = tmp_path / "z.json"
    # at strong disorder and long range the crossing norms underflow to zero
    assert run(["tailprob", "--L", "8", "--delta", "10", "--lambda", "10", "--samples", "2",
                "--ell", "3", "--out", str(out)])[0] == 0
    assert run(["fit", str(out)])[0] == 3


def test_spectrum_and_filter_curve():
    code, text = run(["spectrum", "--L", "6", "--delta", "10", "--lambda", "1"])
    rows = text.splitlines()
    assert code == 0 and rows[0] == "N,index,energy" and len(rows) == 65
    code, text = run(["spectrum", "--L", "6", "--delta", "10", "--lambda", "1",
                      "--filter-curve"])
    assert code == 0 and len(text.splitlines()) == 402


def test_verify_subcommand():
    code, text = run(["verify", "--sizes", "6"])
    assert code == 0
    assert "checks passed or documented" in text


def test_help_texts():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, p in sub.items():
        assert p.description, name
    with pytest.raises(SystemExit):
        parser.parse_args(["--help"])
    assert run(["--help"])[0] == 0
