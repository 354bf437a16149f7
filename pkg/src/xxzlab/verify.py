"""Deterministic invariant suite behind ``xxzlab verify``.

Each check draws a few disorder samples at the requested chain lengths and
reports the worst residual against its tolerance.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .approximant import (GeometryPolicy, boundary_commutator, build_approximant,
                          duhamel_Y, shell_decomposition)
from .basis import popcounts
from .ensemble import DisorderSpec, sample_disorder
from .geometry import ChainRegion, boundary, components, fatten
from .hamiltonian import (EnergyIntervals, ModelParams, build_diagonal,
                          build_modified, local_term, modified_shift, projector_pm)
from .operators import Product, commutator
from .quasiloc import ct_check
from .sample import SampleContext
from .spectral import SmoothFilter, heisenberg

DEFAULT_SIZES = (6, 8, 10)


@dataclass
class CheckResult:
    name: str
    L: int
    passed: bool
    value: float
    tolerance: float
    known_failure: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL (documented conflict)" if self.known_failure
                                             else "FAIL")
        return f"{status:<27} {self.name:<22} L={self.L:<3} worst={self.value:.3e} " \
               f"tol={self.tolerance:.1e}"


def _samples(L, n, seed, delta=10.0, lam=10.0):
    reg = ChainRegion(1, L)
    for i in range(n):
        omega = sample_disorder(DisorderSpec(), seed, i, reg)
        yield SampleContext(ModelParams(delta, lam), omega)


def check_local_term(L, **_):
    worst = 0.0
    for d in (2.0, 10.0, 100.0):
        h = local_term(d)
        ev = np.sort(np.linalg.eigvalsh(h))
        ref = np.sort([0.0, -1.0, 1 / (2 * d), -1 / (2 * d)])
        worst = max(worst, np.abs(ev - ref).max(), abs(np.linalg.norm(h, 2) - 1))
    return worst, 1e-12


def check_number_conservation(L, samples=2, seed=0):
    """No matrix element of ``H`` connects different particle numbers."""
    worst = 0.0
    pc = popcounts(L)
    for ctx in _samples(L, samples, seed):
        H = ctx.hamiltonian().to_dense()
        worst = max(worst, np.abs(H[pc[:, None] != pc[None, :]]).max())
    return worst, 0.0


def check_droplet_bound(L, samples=2, seed=0):
    """``H >= u W`` and the gap above the vacuum."""
    worst = -np.inf
    for lam in (1.0, 10.0):
        for ctx in _samples(L, samples, seed, lam=lam):
            H = ctx.hamiltonian().to_dense()
            W = build_diagonal("cluster", ctx.region).values
            low = np.linalg.eigvalsh(H - ctx.u * np.diag(W))[0]
            second = np.linalg.eigvalsh(H)[1]
            worst = max(worst, -low, ctx.u - second)
    return worst, 1e-10


def check_projection_algebra(L, seed=0, **_):
    reg = ChainRegion(1, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mask in rng.integers(1, 1 << L, 16):
        A = reg.sites([x for x in reg if (int(mask) >> (x - 1)) & 1])
        plus = projector_pm(A, "+", reg).values
        minus = projector_pm(A, "-", reg).values
        total = np.zeros(1 << L)
        prev = reg.empty()
        for comp in components(reg, A):
            C = reg.interval(comp.lo, comp.hi)
            total += projector_pm(prev, "+", reg).values * projector_pm(C, "-", reg).values
            prev = prev | C
        worst = max(worst, np.abs(plus + minus - 1).max(), np.abs(total - minus).max())
    return worst, 0.0


def check_resolvent_identity(L, samples=2, seed=0):
    """``R_z = R^_z + k u R_z Q^ R^_z`` in dense arithmetic."""
    worst = 0.0
    L = min(L, 8)
    for ctx in _samples(L, samples, seed):
        H = ctx.hamiltonian().to_dense()
        masks = np.arange(1 << L)
        for k in (1, 2):
            Hh = build_modified(ctx.params, ctx.omega, ctx.region, k).to_dense()
            shift = modified_shift(k, ctx.u)(masks)
            z = complex((k + 0.5) * ctx.u, 0.3)
            I = np.eye(1 << L)
            R = np.linalg.inv(H - z * I)
            Rh = np.linalg.inv(Hh - z * I)
            worst = max(worst, np.abs(R - Rh - R @ np.diag(shift) @ Rh).max())
    return worst, 1e-9


def check_modified_bound(L, samples=2, seed=0):
    worst = -np.inf
    for ctx in _samples(L, samples, seed):
        for k in (1, 2):
            low = min(E.min() for E, _ in ctx.modified(k).sectors.values())
            worst = max(worst, (k + 1) * ctx.u - low)
    return worst, 1e-10


def _ct_values(L, samples, seed):
    out = []
    for ctx in _samples(L, samples, seed):
        S = ctx.modified(1)
        S.provenance["params"] = ctx.params
        reg = ctx.region
        A = reg.interval(2, 2)
        for d in range(1, L - 2):
            B = fatten(reg, A, d - 1)
            z = complex(1.875 * ctx.u, 0.0)
            out.append(ct_check(S, A, B, z, 10.0, q=0.5))
    return out


def check_ct_lemma(L, samples=2, seed=0):
    res = _ct_values(L, samples, seed)
    return max(r.measured / r.lemma_bound for r in res) - 1, 0.0


def check_ct_stated(L, samples=2, seed=0):
    res = _ct_values(L, samples, seed)
    return max(r.measured / r.bound for r in res) - 1, 0.0


def check_ftc(L, samples=2, seed=0):
    """``tau_t(P_+) = P_+ + int_0^t tau_s(D) ds`` with the closed form."""
    worst = 0.0
    for ctx in _samples(L, samples, seed, lam=1.0):
        reg = ctx.region
        side = ChainRegion(2, L)
        shell = side.interval(2, 3)
        v = np.random.default_rng(seed).standard_normal((1 << L, 3))
        P = projector_pm(shell.within(reg), "+", reg)
        for t in (0.5, 2.0):
            Y = duhamel_Y("exact", side, shell, t, ctx)
            ex = heisenberg(ctx.full_spectrum(side), P, t)
            worst = max(worst, np.abs(Y.apply(v) - ex.apply(v)).max())
    return worst, 1e-9


def check_filter_sandwich(L, samples=2, seed=0):
    """``||(M)_{P_I}|| <= ||(M)_Psi|| <= ||(M)_{P_I^check}||`` for random ``M``."""
    worst = -np.inf
    rng = np.random.default_rng(seed)
    for ctx in _samples(L, samples, seed, lam=0.5):
        ints = EnergyIntervals(0.5, ctx.u)
        S = ctx.spectrum(cutoff=ints.I_check_le_q.upper)
        V, E = S.isometry(ints.I_check_le_q)
        psi = SmoothFilter(0.5, ctx.params.delta)(E)
        inner = ints.I_le_q.contains(E)
        for _ in range(5):
            G = rng.standard_normal((1 << L, 6))
            K = (V.conj().T @ G) @ (G.T @ V)
            a = np.linalg.norm(K[np.ix_(inner, inner)], 2) if inner.any() else 0.0
            b = np.linalg.norm(psi[:, None] * K * psi[None, :], 2)
            c = np.linalg.norm(K, 2)
            worst = max(worst, a - b, b - c)
    return worst, 1e-9


def _approx_setup(L, seed, lam=0.5):
    ctx = next(_samples(L, 1, seed, lam=lam))
    reg = ctx.region
    X = ChainRegion(2, 2)
    return ctx, reg, X, build_diagonal("number", X, ambient=reg)


def check_telescoping(L, seed=0, **_):
    ctx, reg, X, T = _approx_setup(L, seed)
    v = np.random.default_rng(seed).standard_normal((1 << L, 3))
    worst = 0.0
    for k in (0, 1, 2):
        dec = shell_decomposition(T, X, k, GeometryPolicy.shrunken(), 1)
        worst = max(worst, np.abs(dec.total().apply(v) - T.apply(v)).max())
    return worst, 1e-12


def check_support(L, seed=0, **_):
    ctx, reg, X, T = _approx_setup(L, seed)
    rep = build_approximant(T, X, 0.5, 1, 1.0, ctx, GeometryPolicy.shrunken(), measure=False)
    v = np.random.default_rng(seed).standard_normal((1 << L, 3))
    worst = 0.0
    op = rep.operator
    for x in reg:
        if x not in rep.support:
            N = build_diagonal("number", ChainRegion(x, x), ambient=reg)
            worst = max(worst, np.abs(commutator(op, N).apply(v)).max())
    return worst, 1e-9


def check_part_two(L, seed=0, **_):
    ctx, reg, X, T = _approx_setup(L, seed)
    policy = GeometryPolicy.shrunken()
    A = ChainRegion(1, 3)
    side = ChainRegion(4, L)
    slab = boundary(reg, reg.interval(A.lo, A.hi), 2, "outer_layer").within(side)
    D = boundary_commutator(side, slab, ctx)
    layer = boundary(reg, reg.interval(A.lo, A.hi), 1, "outer_layer").within(side)
    rep = build_approximant(D, D.support.as_region(), 0.5, 1, 1.0, ctx, policy, part="two",
                            core=layer, region=side, measure=False)
    core = projector_pm(reg.sites(rep.trace["core"]), "+", reg)
    v = np.random.default_rng(seed).standard_normal((1 << L, 3))
    op = rep.operator
    return float(np.abs(Product([core, op, core]).apply(v) - op.apply(v)).max()), 0.0


CHECKS = {
    "local_term": check_local_term,
    "number_conservation": check_number_conservation,
    "droplet_bound": check_droplet_bound,
    "projection_algebra": check_projection_algebra,
    "resolvent_identity": check_resolvent_identity,
    "modified_bound": check_modified_bound,
    "ct_lemma_bound": check_ct_lemma,
    "ct_stated_bound": check_ct_stated,
    "ftc": check_ftc,
    "filter_sandwich": check_filter_sandwich,
    "telescoping": check_telescoping,
    "declared_support": check_support,
    "part_two_sandwich": check_part_two,
}
KNOWN_CONFLICTS = {"ct_stated_bound"}


def run_suite(sizes=DEFAULT_SIZES, seed: int = 0, names=None) -> list[CheckResult]:
    out = []
    for name, L in itertools.product(names or CHECKS, sizes):
        value, tol = CHECKS[name](L, seed=seed)
        out.append(CheckResult(name, L, bool(value <= tol), float(value), tol,
                               name in KNOWN_CONFLICTS))
    return out
