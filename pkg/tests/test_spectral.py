import numpy as np
import pytest
from scipy.integrate import quad_vec

import oracle
from conftest import make_ctx
from xxzlab.geometry import ChainRegion
from xxzlab.hamiltonian import EnergyIntervals, Interval, projector_pm
from xxzlab.operators import LocalDense
from xxzlab.spectral import (SingularityError, SmoothFilter, SpectralError, apply_function,
                             compressed_norm, duhamel_integral, evolution, heisenberg,
                             hs_apply, hs_values, resolvent, spectral_projection)


def test_full_and_windowed_spectra():
    ctx = make_ctx(7, lam=1.0)
    H = ctx.hamiltonian().to_dense()
    S = ctx.full_spectrum()
    assert np.allclose(S.eigenvalues(), np.linalg.eigvalsh(H))
    cut = 1.5
    W = make_ctx(7, lam=1.0).spectrum(cutoff=cut)
    assert not W.complete
    ref = np.linalg.eigvalsh(H)
    assert np.allclose(W.eigenvalues(), ref[ref <= cut])
    with pytest.raises(SpectralError):
        W.window(Interval(-np.inf, 2.0))


def test_evolution_matches_oracle(rng):
    ctx = make_ctx(5, lam=0.5)
    H = ctx.hamiltonian().to_dense()
    S = ctx.full_spectrum()
    A = LocalDense(ctx.region, ChainRegion(2, 3), rng.standard_normal((4, 4)))
    ref = oracle.evolve(H, A.to_dense(), 0.7)
    assert np.allclose(heisenberg(S, A, 0.7).to_dense(), ref, atol=1e-12)
    U = evolution(S, 0.7).to_dense()
    assert np.allclose(U.conj().T @ U, np.eye(32), atol=1e-12)


def test_duhamel_closed_form_vs_quadrature():
    ctx = make_ctx(5, lam=0.5)
    H = ctx.hamiltonian().to_dense()
    reg = ctx.region
    P = projector_pm(reg.sites([2, 3]), "+", reg)
    D_dense = 1j * (H @ P.to_dense() - P.to_dense() @ H)
    D = LocalDense(reg, reg, D_dense)
    t = 1.3
    closed = duhamel_integral(ctx.full_spectrum(), D, t).to_dense()
    quad, _ = quad_vec(lambda s: oracle.evolve(H, D_dense, s), 0, t, epsabs=1e-12, epsrel=1e-12)
    assert np.abs(closed - quad).max() < 1e-7
    # fundamental theorem of calculus
    assert np.abs(closed - (oracle.evolve(H, P.to_dense(), t) - P.to_dense())).max() < 1e-9


def test_functional_calculus_and_projection():
    ctx = make_ctx(6, lam=1.0)
    S = ctx.full_spectrum()
    H = ctx.hamiltonian().to_dense()
    F = apply_function(S, lambda e: e ** 2).to_dense()
    assert np.allclose(F, H @ H)
    Pr, V = spectral_projection(S, EnergyIntervals(0.5, ctx.u).I_le_q)
    Pd = Pr.to_dense()
    assert np.allclose(Pd @ Pd, Pd) and np.allclose(V.conj().T @ V, np.eye(V.shape[1]))
    z = 0.3 + 0.2j
    assert np.allclose(resolvent(S, z).to_dense(), np.linalg.inv(H - z * np.eye(64)))
    with pytest.raises(SingularityError):
        resolvent(S, 0.0)
    assert compressed_norm(V, np.eye(64)) == pytest.approx(1.0)


def test_smooth_filter_shape():
    f = SmoothFilter(0.5, 10.0)
    u = 0.9
    x = np.linspace(-2, 3, 2001)
    y = f(x)
    assert np.all((y >= 0) & (y <= 1))
    assert np.all(y[(x >= 0) & (x <= 1.25 * u)] == 1)
    assert np.all(y[(x <= -1) | (x >= 1.375 * u)] == 0)
    left = (x > -1) & (x < 0)
    assert np.all(np.diff(y[left]) >= 0)
    # smoothness at the plateau edge: derivatives vanish from both sides
    for k in (1, 2, 3):
        assert abs(f.derivative(1.25 * u + 1e-6, k)) < 1e-3


@pytest.mark.parametrize("t", [0.0, 1.0, 2.0])
def test_helffer_sjostrand_matches_spectral_calculus(t):
    ctx = make_ctx(5, lam=0.7)
    S = ctx.full_spectrum()
    f = SmoothFilter(0.5, 10.0, t)
    exact = apply_function(S, f).to_dense()
    approx = hs_apply(S, f, order=4, tol=1e-8).to_dense()
    assert np.linalg.norm(exact - approx, 2) <= 1e-5


def test_hs_strip_error_drops_with_order():
    f = SmoothFilter(0.5, 10.0)
    E = np.array([-0.5, 0.2, 1.2])
    errs = [np.abs(hs_values(E, f, order, tol=1e-10, strip=0.05) - f(E)).max()
            for order in (2, 3, 4)]
    assert errs[0] > errs[1] > errs[2]
