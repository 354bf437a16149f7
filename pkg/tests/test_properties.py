import math

import numpy as np
from hypothesis import given, settings, strategies as st

from oracle import clusters
from xxzlab.approximant import GeometryPolicy, shell_decomposition
from xxzlab.ensemble import fit_decay
from xxzlab.geometry import ChainRegion, boundary, cluster_count_mask, components, fatten
from xxzlab.hamiltonian import DisorderSample, ModelParams, build_diagonal, projector_pm
from xxzlab.sample import SampleContext

REG = ChainRegion(1, 12)
masks = st.integers(min_value=0, max_value=(1 << 12) - 1)
widths = st.integers(min_value=0, max_value=6)


def _set(mask, reg=REG):
    return reg.sites([x for x in reg if (mask >> (x - reg.lo)) & 1])


@given(masks, widths, widths)
def test_fatten_semigroup_and_definition(mask, a, b):
    M = _set(mask)
    assert fatten(REG, fatten(REG, M, a), b) == fatten(REG, M, a + b)
    brute = [x for x in REG if any(abs(x - y) <= a for y in M)]
    assert fatten(REG, M, a).sites() == brute


@given(masks, st.integers(min_value=1, max_value=6))
def test_thinning_is_dual_to_fattening(mask, s):
    M = _set(mask)
    thin = fatten(REG, M, -s)
    if not M.complement().is_empty:
        assert thin == fatten(REG, M.complement(), s).complement()
    both = boundary(REG, M, s, "both")
    outer, inner = boundary(REG, M, s, "outer_layer"), boundary(REG, M, s, "inner_layer")
    assert both == outer | inner and (outer & inner).is_empty


@given(masks)
def test_cluster_count_matches_components(mask):
    occ = [(mask >> i) & 1 for i in range(12)]
    assert cluster_count_mask(mask) == len(components(REG, _set(mask))) == clusters(occ)


@given(st.floats(0.05, 3.0), st.floats(-5, 5), st.floats(1e-3, 1e3), st.integers(0, 20))
def test_fit_rate_is_scale_and_shift_equivariant(theta, b, c, shift):
    xs = np.arange(1, 7)
    noise = np.exp(0.05 * np.sin(3 * xs))
    base = [(x, math.exp(b - theta * x) * n, 0.0) for x, n in zip(xs, noise)]
    t0, i0, _ = fit_decay(base)
    t1, i1, _ = fit_decay([(x + shift, c * m, s) for x, m, s in base])
    assert math.isclose(t0, t1, rel_tol=1e-8, abs_tol=1e-9)
    assert math.isclose(i1, i0 + math.log(c) + t0 * shift, rel_tol=1e-8, abs_tol=1e-7)


@given(masks, masks)
def test_projector_algebra(a, b):
    reg = ChainRegion(1, 12)
    A, B = _set(a), _set(b)
    pa, pb = projector_pm(A, "+", reg).values, projector_pm(B, "+", reg).values
    assert np.array_equal(pa * pb, projector_pm(A | B, "+", reg).values)
    assert not np.any(pa * projector_pm(A, "-", reg).values)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2), st.integers(1, 2))
def test_telescoping_is_exact(site, k, ell):
    reg = ChainRegion(1, 8)
    X = ChainRegion(site, site)
    T = build_diagonal("number", X, ambient=reg)
    dec = shell_decomposition(T, X, k, GeometryPolicy.shrunken(), ell)
    v = np.random.default_rng(site).standard_normal((1 << 8, 2))
    assert np.allclose(dec.total().apply(v), T.apply(v), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(-20, 20), st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_spectrum_is_shift_invariant(offset, omega):
    base = SampleContext(ModelParams(10.0, 1.0), DisorderSample(ChainRegion(1, 6), tuple(omega)))
    reg = ChainRegion(1 + offset, 6 + offset)
    moved = SampleContext(ModelParams(10.0, 1.0), DisorderSample(reg, tuple(omega)))
    assert np.allclose(np.sort(base.full_spectrum().eigenvalues()),
                       np.sort(moved.full_spectrum().eigenvalues()), atol=1e-12)
