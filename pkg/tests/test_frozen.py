"""Regression values frozen from a reviewed run.

Regenerate with ``python3 tests/test_frozen.py`` after an intended change.
"""
import json
from pathlib import Path

import pytest

from xxzlab.ensemble import EnsembleConfig, run_experiment

DATA = Path(__file__).parent / "data" / "frozen.json"

CASES = {
    "quasiloc": dict(experiment="quasiloc", L=8, delta=10.0, lam=1.0, grid=(1, 2, 3),
                     samples=3, seed=5),
    "eigencorr": dict(experiment="eigencorr", L=8, delta=10.0, lam=1.0, grid=(1, 2, 3),
                      samples=3, seed=5),
    "ct-check": dict(experiment="ct-check", L=8, delta=10.0, lam=10.0, grid=(1, 2, 3),
                     samples=3, seed=5),
    "multiprobe": dict(experiment="multiprobe", L=9, delta=10.0, lam=0.5, grid=(1, 2),
                       samples=3, seed=5),
    "propagate": dict(experiment="propagate", L=10, delta=10.0, lam=0.5, grid=(1, 2),
                      samples=2, seed=5),
}


def compute(name):
    res = run_experiment(EnsembleConfig(**CASES[name]), keep_records=False)
    return [[p.x, p.mean, p.stderr] for p in res.points]


@pytest.mark.parametrize("name", sorted(CASES))
def test_frozen_values(name):
    frozen = json.loads(DATA.read_text())[name]
    got = compute(name)
    assert len(got) == len(frozen)
    for (x, m, s), (fx, fm, fs) in zip(got, frozen):
        assert x == fx
        assert m == pytest.approx(fm, rel=1e-7, abs=1e-14)
        assert s == pytest.approx(fs, rel=1e-6, abs=1e-14)


if __name__ == "__main__":
    DATA.parent.mkdir(exist_ok=True)
    DATA.write_text(json.dumps({n: compute(n) for n in sorted(CASES)}, indent=2) + "\n")
