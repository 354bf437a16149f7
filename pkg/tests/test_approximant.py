import json

import numpy as np
import pytest

from conftest import make_ctx
from xxzlab.approximant import (GeometryPolicy, PreconditionError, beta, boundary_commutator,
                                build_approximant, build_approximant_top, choose_window,
                                corollary_alpha, duhamel_Y, edge_distance,
                                matrix_element_approximant, shell_decomposition)
from xxzlab.geometry import ChainRegion, GeometryError, fatten
from xxzlab.hamiltonian import build_diagonal, projector_pm
from xxzlab.operators import commutator
from xxzlab.spectral import heisenberg


def _number(ctx, X):
    return build_diagonal("number", X, ambient=ctx.region)


def test_beta_table():
    assert [beta(q) for q in (0, 0.5, 1, 1.5, 2)] == [0, 22, 44, 75, 106]
    with pytest.raises(Exception):
        beta(0.3)


@pytest.mark.parametrize("q", [0.5, 1, 1.5, 2])
@pytest.mark.parametrize("ell", [1, 2, 5])
def test_default_policy_radii(q, ell):
    p = GeometryPolicy.default()
    assert p.radius(q, ell) == beta(q) * ell
    assert p.top_radius(q, ell) == (13 + beta(q + 0.5)) * ell


def test_policy_widths():
    w = GeometryPolicy.default().widths(2)
    assert (w.step, w.inner, w.gap, w.probe) == (18, 2, 4, 6)
    s = [GeometryPolicy.shrunken().widths(ell) for ell in (1, 2, 3)]
    assert [(x.step, x.inner, x.gap, x.probe) for x in s] == [(2, 1, 1, 2), (4, 1, 1, 2),
                                                               (6, 1, 2, 3)]
    assert GeometryPolicy.shrunken().radius(0.5, 1) == 7
    assert GeometryPolicy.named("default") == GeometryPolicy.default()
    assert not GeometryPolicy.default().override and GeometryPolicy.shrunken().override


def test_policy_errors():
    with pytest.raises(GeometryError):
        GeometryPolicy(1, 3).widths(1)
    with pytest.raises(GeometryError):
        GeometryPolicy(0, 1)
    with pytest.raises(GeometryError):
        GeometryPolicy(2, 1, "whatever")
    with pytest.raises(GeometryError):
        GeometryPolicy.shrunken().widths(0)
    with pytest.raises(GeometryError):
        GeometryPolicy.named("tiny")


def test_shell_decomposition_is_exact():
    ctx = make_ctx(10)
    X = ChainRegion(5, 5)
    T = _number(ctx, X)
    v = np.random.default_rng(1).standard_normal((1 << 10, 2))
    for k in (0, 1, 2):
        dec = shell_decomposition(T, X, k, GeometryPolicy.shrunken(), 1)
        assert len(dec.terms) == k + 1
        assert np.allclose(dec.total().apply(v), T.apply(v), atol=1e-12)
        probe = GeometryPolicy.shrunken().widths(1).probe
        for S in dec.shells:
            assert len(S) <= 4 * probe
    assert edge_distance(ctx.region, X) == 5


def test_toy_approximant_support_and_accuracy():
    ctx = make_ctx(14, lam=0.5)
    X = ChainRegion(2, 2)
    T = _number(ctx, X)
    pol = GeometryPolicy.shrunken()
    rep = build_approximant(T, X, 0.5, 1, 1.0, ctx, pol)
    assert rep.branch == "shells"
    assert rep.support.sites() == list(range(1, 10))
    assert rep.error < 0.05
    v = np.random.default_rng(0).standard_normal((1 << 14, 2))
    op = rep.operator
    for x in (10, 14):
        N = build_diagonal("number", ChainRegion(x, x), ambient=ctx.region)
        assert np.abs(commutator(op, N).apply(v)).max() < 1e-9
    doc = json.loads(json.dumps(rep.to_json()))
    assert doc["support"] == [1, 9] and doc["trace"]["branch"] == "shells"


def test_level_zero_and_degenerate_branches():
    ctx = make_ctx(8, lam=0.5)
    X = ChainRegion(4, 4)
    T = _number(ctx, X)
    exact = build_approximant(T, X, 0, 1, 1.0, ctx, GeometryPolicy.shrunken())
    assert exact.branch == "exact" and exact.support.sites() == [4] and exact.error == 0
    for q in (0.5, 1):
        rep = build_approximant(T, X, q, 1, 1.0, ctx, GeometryPolicy.default())
        assert rep.branch == "degenerate"
        assert rep.error < 1e-12


def test_part_one_precondition():
    ctx = make_ctx(8)
    X = ChainRegion(4, 4)
    with pytest.raises(PreconditionError):
        build_approximant(projector_pm(ctx.region.sites([4]), "+", ctx.region), X, 0.5, 1, 1.0,
                          ctx, GeometryPolicy.shrunken())
    with pytest.raises(PreconditionError):
        build_approximant(_number(ctx, X), X, 0.5, 1, 1.0, ctx, part="three")


def test_duhamel_Y_exact_and_t_zero():
    ctx = make_ctx(7, lam=1.0)
    side = ChainRegion(2, 7)
    shell = side.interval(2, 3)
    P = projector_pm(shell.within(ctx.region), "+", ctx.region)
    v = np.random.default_rng(2).standard_normal((1 << 7, 2))
    assert np.array_equal(duhamel_Y("exact", side, shell, 0.0, ctx).apply(v), P.apply(v))
    Y = duhamel_Y("exact", side, shell, 1.5, ctx)
    ex = heisenberg(ctx.full_spectrum(side), P, 1.5)
    assert np.abs(Y.apply(v) - ex.apply(v)).max() < 1e-10
    with pytest.raises(PreconditionError):
        duhamel_Y("approximate", side, shell, 1.0, ctx)


def test_boundary_commutator_properties():
    ctx = make_ctx(8)
    side = ChainRegion(3, 8)
    D = boundary_commutator(side, side.interval(3, 4), ctx)
    assert D is not None and D.support.sites() == [3, 4, 5]
    dense = D.to_dense()
    vac = np.zeros(1 << 8)
    vac[0] = 1
    assert np.abs(dense @ vac).max() == 0
    assert np.allclose(dense, dense.conj().T)
    assert np.linalg.norm(dense, 2) <= 1 + 1e-12
    assert boundary_commutator(side, side.full(), ctx) is None
    assert boundary_commutator(side, side.empty(), ctx) is None


def test_choose_window():
    reg = ChainRegion(1, 60)
    X = ChainRegion(30, 30)
    assert choose_window(reg, X, reg.empty(), 2) == 0
    assert choose_window(reg, X, reg.sites([31]), 2) == 1
    assert choose_window(reg, X, reg.full(), 2) is None


def test_matrix_element_branches():
    ctx = make_ctx(8, lam=0.5)
    reg = ctx.region
    X = ChainRegion(4, 4)
    T = _number(ctx, X)
    pol = GeometryPolicy.shrunken()
    r = matrix_element_approximant(ctx, T, X, 0.5, 1, 1.0, reg.sites([1]), reg.sites([1, 2]),
                                   r=3, policy=pol)
    assert r.branch == "particle-number" and r.error == 0
    r = matrix_element_approximant(ctx, T, X, 0.5, 2, 1.0, reg.sites([1]), reg.sites([2]),
                                   r=2, policy=pol)
    assert r.branch == "scale"
    r = matrix_element_approximant(ctx, T, X, 0.5, 1, 1.0, reg.sites([1, 2]),
                                   reg.sites([7, 8]), r=2, policy=pol)
    assert r.branch == "large-deviation"
    r = matrix_element_approximant(ctx, T, X, 0.5, 1, 1.0, reg.sites([1]), reg.sites([8]),
                                   r=2, policy=pol)
    assert r.branch == "window" and r.window_j == 1 and r.window == ctx.region
    with pytest.raises(PreconditionError):
        matrix_element_approximant(ctx, T, X, 0.5, 1, 1.0, reg.sites([1]), reg.sites([8]))
    with pytest.raises(PreconditionError):
        matrix_element_approximant(ctx, _number(ctx, ChainRegion(3, 5)), ChainRegion(3, 5), 0.5,
                                   1, 1.0, reg.sites([1]), reg.sites([8]), r=2, policy=pol)


def test_corollary_alpha():
    assert corollary_alpha(0.5, 1.0, 1.0, 1.0) == 5
    assert corollary_alpha(1.0, 10.0, 2.0, 4.0) == 10
    with pytest.raises(PreconditionError):
        corollary_alpha(0.5, 1.0, 0.0, 1.0)


def test_top_approximant_runs():
    ctx = make_ctx(10, lam=0.5)
    X = ChainRegion(5, 5)
    rep = build_approximant_top(_number(ctx, X), X, 0.5, 1, 1.0, ctx, GeometryPolicy.shrunken())
    assert rep.trace["part"] == "top"
    assert rep.trace["radius"] == GeometryPolicy.shrunken().top_radius(0.5, 1)
    assert rep.error < 0.1
    assert fatten(ctx.region, ctx.region.sites([5]), 3).as_region().length == 7
