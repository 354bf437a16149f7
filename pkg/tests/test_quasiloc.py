import math

import numpy as np
import pytest

from conftest import make_ctx
from xxzlab.geometry import ChainRegion, fatten
from xxzlab.hamiltonian import EnergyIntervals, Interval, ModelError, projector_pm
from xxzlab.quasiloc import (PreconditionError, crossing_distance, ct_check, ct_rate,
                             eigencorrelator, multi_probe_norm, resolvent_crossing_norm,
                             tail_probability_probe)


def _dense_crossing(ctx, A, B, z):
    H = ctx.hamiltonian().to_dense()
    n = H.shape[0]
    R = np.linalg.inv(H - z * np.eye(n))
    Pm = projector_pm(A, "-", ctx.region).to_dense()
    Pp = projector_pm(B, "+", ctx.region).to_dense()
    return np.linalg.norm(Pm @ R @ Pp, 2)


def test_crossing_norm_matches_dense():
    ctx = make_ctx(7, lam=1.0)
    reg = ctx.region
    A = reg.interval(3, 3)
    B = fatten(reg, A, 2)
    z = 0.4 + 0.1j
    val, d = resolvent_crossing_norm(ctx.full_spectrum(), A, B, z, power=1.0)
    assert d == 3
    assert val == pytest.approx(_dense_crossing(ctx, A, B, z), rel=1e-10)


def test_crossing_adjoint_flip_and_shift_invariance():
    ctx = make_ctx(7, lam=2.0)
    S = ctx.full_spectrum()
    reg = ctx.region
    A, B = reg.interval(2, 3), reg.interval(1, 5)
    z = 0.5 + 0.3j
    a, _ = resolvent_crossing_norm(S, A, B, z, power=1.0)
    H = ctx.hamiltonian().to_dense()
    Rb = np.linalg.inv(H - np.conj(z) * np.eye(128))
    Pm = projector_pm(A, "-", reg).to_dense()
    Pp = projector_pm(B, "+", reg).to_dense()
    assert a == pytest.approx(np.linalg.norm(Pp @ Rb @ Pm, 2), rel=1e-9)
    # same sample on a shifted chain
    from xxzlab.hamiltonian import DisorderSample, ModelParams
    from xxzlab.sample import SampleContext
    sh = ChainRegion(11, 17)
    ctx2 = SampleContext(ModelParams(10.0, 2.0), DisorderSample(sh, ctx.omega.omega))
    b, _ = resolvent_crossing_norm(ctx2.full_spectrum(), sh.interval(12, 13), sh.interval(11, 15),
                                   z, power=1.0)
    assert a == pytest.approx(b, rel=1e-12)


def test_crossing_edge_cases():
    ctx = make_ctx(6)
    S = ctx.full_spectrum()
    reg = ctx.region
    A = reg.interval(3, 3)
    val, d = resolvent_crossing_norm(S, A, reg.full(), -1.0)
    assert d == math.inf and crossing_distance(A, reg.full()) == math.inf
    z = -5.0
    val, _ = resolvent_crossing_norm(S, A, reg.interval(2, 4), z)
    assert val <= (1 / abs(z - S.eigenvalues().min())) ** 0.25 + 1e-12
    with pytest.raises(PreconditionError):
        resolvent_crossing_norm(S, reg.interval(1, 4), reg.interval(2, 4), z)


def test_eigencorrelator_bracket():
    ctx = make_ctx(7, lam=0.5)
    reg = ctx.region
    S = ctx.full_spectrum()
    A, B = reg.interval(4, 4), reg.interval(2, 6)
    below = eigencorrelator(S, A, B, Interval(-10, -5))
    assert below["surrogate"] == 0 and below["n_eigenvalues"] == 0
    assert eigencorrelator(S, reg.empty(), B, Interval(-10, 5))["surrogate"] == 0
    small = eigencorrelator(S, A, B, Interval(-1, 1.2))
    big = eigencorrelator(S, A, B, Interval(-1, 2.0))
    assert small["surrogate"] >= small["witness"] - 1e-15
    assert big["surrogate"] >= small["surrogate"] - 1e-15
    E = np.sort(S.eigenvalues())
    one = eigencorrelator(S, A, B, Interval(E[5] - 1e-9, E[5] + 1e-9))
    assert one["n_eigenvalues"] == 1
    assert one["surrogate"] == pytest.approx(one["witness"])


def test_ct_rate_and_bound_formula():
    assert ct_rate(10.0) == pytest.approx(math.log(9 / 8))
    assert ct_rate(10.0) == pytest.approx(0.11778, abs=1e-5)
    with pytest.raises(ModelError):
        ct_rate(9.0)
    ctx = make_ctx(8)
    S = ctx.modified(1)
    reg = ctx.region
    A = reg.interval(2, 2)
    r = ct_check(S, A, A, complex(0.5), 10.0, q=0.5)
    assert r.dist == 1
    assert r.bound == pytest.approx(math.exp(-math.log(9 / 8)) / 10)
    assert r.lemma_bound == pytest.approx(100 * r.bound)
    with pytest.raises(PreconditionError):
        ct_check(S, A, A, complex(1.9 * ctx.u), 10.0, q=0.5)
    with pytest.raises(PreconditionError):
        ct_check(S, reg.sites([2, 4]), reg.interval(1, 5), 0.5, 10.0)


def test_stated_prefactor_counterexample():
    """An interior site at distance one with Re z at the top of the window
    exceeds the bound with prefactor 1/delta0 but respects prefactor delta0."""
    ctx = make_ctx(8, index=0)
    S = ctx.modified(1)
    reg = ctx.region
    A = reg.interval(3, 3)
    r = ct_check(S, A, A, complex(1.875 * ctx.u), 10.0, q=0.5)
    assert not r.passed
    assert r.lemma_passed
    assert r.measured / r.bound > 1.5


def test_multi_probe_norm():
    ctx = make_ctx(9, lam=0.5)
    reg = ctx.region
    S = ctx.spectrum(cutoff=EnergyIntervals(1, ctx.u).I_le_q.upper)
    probes = [reg.sites([2]), reg.sites([6])]
    val = multi_probe_norm(S, 1, probes, 1)
    assert 0 <= val <= 1 + 1e-12
    with pytest.raises(PreconditionError):
        multi_probe_norm(S, 1, [reg.sites([2]), reg.sites([3])], 1)
    with pytest.raises(PreconditionError):
        multi_probe_norm(S, 1, [reg.sites([2]), reg.empty()], 1)
    with pytest.raises(PreconditionError):
        multi_probe_norm(S, 2, probes, 1)
    strong = make_ctx(9, lam=50.0)
    Ss = strong.spectrum(cutoff=EnergyIntervals(1, strong.u).I_le_q.upper)
    if sum(len(E) for E, _ in Ss.window(EnergyIntervals(1, strong.u).I_le_q).values()) == 1:
        assert multi_probe_norm(Ss, 1, probes, 1) == 0


def test_tail_probability():
    ctx = make_ctx(6, lam=0.01)
    S = ctx.spectrum(cutoff=EnergyIntervals(1, ctx.u).I_le_q.upper)
    assert tail_probability_probe(S, 1, 3) is False  # 2*3+1 >= 6: no such sectors
    assert tail_probability_probe(S, 1, 1) is True
    with pytest.raises(PreconditionError):
        tail_probability_probe(S, -3, 1)
