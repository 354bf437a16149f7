"""Localized approximants of Heisenberg-evolved observables.

The construction is recursive in the energy index ``q`` (a multiple of 1/2).
An observable is first split into shell terms by inserting ``P_+``/``P_-``
projections on slabs around its support.  Each term becomes the product of a
spectrally filtered evolution on an interval ``A`` and one boundary factor per
side of ``A``.  A boundary factor is ``P_+`` of its slab plus the time integral
of the commutator of that projection with the complement Hamiltonian; the
commutator is itself localized by the same construction one level down.

All of this is assembled once into a plan that does not depend on ``t``;
plans are evaluated at any time afterwards, which is what makes the time
integrals in the boundary factors affordable.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .geometry import ChainRegion, GeometryError, SiteSet, boundary, fatten
from .hamiltonian import EnergyIntervals, ceil_half, check_half_integer, local_term, projector_pm
from .operators import (BlockOperator, LocalDense, LocalLowRank, Product, Sum, Zero,
                        embed_vectors, mask_in, restrict_vectors)
from .quasiloc import PreconditionError
from .spectral import compressed_matrix, duhamel_integral, heisenberg

MAX_NODES = 256


# --- geometry bookkeeping -------------------------------------------------

def beta(q: float) -> int:
    """Support multiplier: ``beta_0 = 0`` and ``beta_q = beta_{q-1/2} + 9 ceil(q) + 13``."""
    q = check_half_integer(q)
    out, s = 0, 0.5
    while s <= q + 1e-12:
        out += 9 * ceil_half(s) + 13
        s += 0.5
    return out


@dataclass(frozen=True)
class ShellWidths:
    ell: int
    step: int
    inner: int
    gap: int

    @property
    def probe(self) -> int:
        return self.inner + self.gap


@dataclass(frozen=True)
class GeometryPolicy:
    """Multipliers of the shell geometry.

    Shell regions are ``[X]_{j * fatten_step * ell}`` and slabs have width
    ``probe_width * ell``.  The slab splits into an inner part of width
    ``ceil(probe_width * ell / 3)`` (kept empty by the filtered evolution) and
    a gap of at least one site.

    ``rule`` decides when the construction is skipped in favour of exact
    evolution: ``"support"`` when the declared support already covers the
    region, ``"feasible"`` only when the first shell region does.
    """

    fatten_step: int = 9
    probe_width: int = 3
    rule: str = "support"

    def __post_init__(self):
        if self.fatten_step < 1 or self.probe_width < 1:
            raise GeometryError("policy multipliers must be positive")
        if self.rule not in ("support", "feasible"):
            raise GeometryError(f"unknown degeneracy rule {self.rule!r}")

    @classmethod
    def default(cls) -> "GeometryPolicy":
        return cls(9, 3, "support")

    @classmethod
    def shrunken(cls, fatten_step: int = 2, probe_width: int = 1) -> "GeometryPolicy":
        return cls(fatten_step, probe_width, "feasible")

    @classmethod
    def named(cls, name: str) -> "GeometryPolicy":
        if name == "default":
            return cls.default()
        if name == "shrunken":
            return cls.shrunken()
        raise GeometryError(f"unknown policy {name!r}")

    @property
    def override(self) -> bool:
        return (self.fatten_step, self.probe_width, self.rule) != (9, 3, "support")

    def widths(self, ell: int) -> ShellWidths:
        if ell < 1:
            raise GeometryError("the scale ell must be at least 1")
        inner = math.ceil(self.probe_width * ell / 3)
        gap = max(self.probe_width * ell - inner, 1)
        w = ShellWidths(ell, self.fatten_step * ell, inner, gap)
        if w.probe > w.step:
            raise GeometryError(f"slab width {w.probe} exceeds the fattening step {w.step}")
        return w

    def radius(self, q: float, ell: int) -> int:
        """Support radius of a level-``q`` approximant (``beta_q ell`` for the default policy)."""
        q = check_half_integer(q)
        w = self.widths(ell)
        out, s = 0, 0.5
        while s <= q + 1e-12:
            out += self.fatten_step * (ceil_half(s) + 1) * ell + w.probe + ell
            s += 0.5
        return out

    def top_radius(self, q: float, ell: int) -> int:
        w = self.widths(ell)
        return self.radius(q + 0.5, ell) + w.step + w.probe + ell

    def degenerate(self, region: ChainRegion, X: SiteSet, radius: int, ell: int) -> bool:
        reach = radius if self.rule == "support" else self.widths(ell).step
        return fatten(region, X, reach) == region.full()

    def to_json(self) -> dict:
        return {"fatten_step": self.fatten_step, "probe_width": self.probe_width,
                "rule": self.rule, "override": self.override}


def edge_distance(region: ChainRegion, X: ChainRegion) -> int:
    """``dist(X, Z \\ region)``."""
    return min(X.lo - region.lo + 1, region.hi - X.hi + 1)


def _lift(S: SiteSet, ambient: ChainRegion) -> SiteSet:
    return S if S.region == ambient else S.within(ambient)


def _sides(region: ChainRegion, A: ChainRegion) -> list[tuple[str, ChainRegion]]:
    out = []
    if A.lo > region.lo:
        out.append(("L", ChainRegion(region.lo, A.lo - 1)))
    if A.hi < region.hi:
        out.append(("R", ChainRegion(A.hi + 1, region.hi)))
    return out


# --- shell decomposition --------------------------------------------------

@dataclass
class ShellDecomposition:
    terms: list
    remainder: BlockOperator
    shells: list
    regions: list
    plus: list
    minus: list
    geometry_ok: bool

    def total(self) -> BlockOperator:
        return Sum(self.terms + [self.remainder])


def shell_decomposition(T: BlockOperator, X: ChainRegion, k: int, policy: GeometryPolicy,
                        ell: int, region: ChainRegion | None = None) -> ShellDecomposition:
    """``T = sum_j T P_+^{S_j} prod_{i<j} P_-^{S_i} + T prod_i P_-^{S_i}`` with
    slabs ``S_j`` of width ``probe`` around ``[X]_{j step}``, ``j = 1..k+1``.

    ``geometry_ok`` is false when ``X`` is too close to the edge of the region
    for all slabs to be two-sided; the terms are still exact.
    """
    amb = T.region
    reg = region or amb
    w = policy.widths(ell)
    Xs = reg.interval(X.lo, X.hi)
    terms, shells, regions, plus, minus = [], [], [], [], []
    for j in range(1, k + 2):
        Aj = fatten(reg, Xs, j * w.step)
        Sj = boundary(reg, Aj, w.probe, "both")
        P = projector_pm(_lift(Sj, amb), "+", amb)
        term = Product([T, P] + minus)
        term.support = _lift(fatten(reg, Xs, j * w.step + w.probe), amb)
        terms.append(term)
        shells.append(Sj)
        regions.append(Aj.as_region())
        plus.append(P)
        minus.append(projector_pm(_lift(Sj, amb), "-", amb))
    remainder = Product([T] + minus)
    remainder.support = _lift(fatten(reg, Xs, (k + 1) * w.step + w.probe), amb)
    ok = edge_distance(reg, X) > w.step * (k + 1) + 1
    return ShellDecomposition(terms, remainder, shells, regions, plus, minus, ok)


# --- building blocks ------------------------------------------------------

def local_apply(op: BlockOperator, X: ChainRegion, W: np.ndarray) -> np.ndarray:
    """Apply ``op`` to local vectors on ``X`` (vacuum elsewhere) and restrict back."""
    return restrict_vectors(op.region, X, op.apply(embed_vectors(op.region, X, W)))


def _pair_phases(E: np.ndarray, t: float) -> np.ndarray:
    return np.exp(1j * t * (E[:, None] - E[None, :]))


class FilteredEvolution:
    """``P W e^{itE} W^* M W e^{-itE} W^* P`` with ``W`` the low-energy
    eigenvectors of ``H^A`` and ``P`` the projection emptying the inner layer
    (and the core, if given)."""

    def __init__(self, ctx, M: BlockOperator, A: ChainRegion, q: float, keep_empty: SiteSet):
        I = EnergyIntervals(check_half_integer(q), ctx.u).I_check_le_q
        S = ctx.spectrum(A, cutoff=I.upper)
        W, E = S.local_isometry(I)
        self.A = A
        self.region = ctx.region
        self.E = E
        self.C0 = W.conj().T @ local_apply(M, A, W) if W.shape[1] else np.zeros((0, 0))
        empty = mask_in(A, keep_empty) if keep_empty.mask else 0
        keep = (np.arange(1 << A.length) & empty) == 0
        self.W = W * keep[:, None]

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @property
    def bandwidth(self) -> float:
        return float(self.E.max() - self.E.min()) if len(self.E) else 0.0

    def operator(self, t: float) -> LocalLowRank:
        C = self.C0 * _pair_phases(self.E, t) if t != 0 else self.C0
        return LocalLowRank(self.region, self.A, self.W, C)


def local_filtered_evolution(M_tilde: BlockOperator, A: ChainRegion, q: float, ell: int, t: float,
                             ctx, inner_width: int | None = None, core: SiteSet | None = None,
                             region: ChainRegion | None = None) -> BlockOperator:
    """Filtered local evolution of ``M_tilde`` on ``A``; the inner layer of width
    ``inner_width`` (default ``ell``) and ``core`` are projected empty."""
    if not set(M_tilde.support.sites()) <= set(A):
        raise PreconditionError(f"support {M_tilde.support.sites()} not inside {A.to_str()}")
    reg = region or ctx.region
    Aset = reg.interval(A.lo, A.hi)
    empty = _lift(boundary(reg, Aset, inner_width or ell, "inner_layer"), ctx.region)
    if core is not None:
        empty = empty | _lift(core, ctx.region)
    return FilteredEvolution(ctx, M_tilde, A, q, empty).operator(t)


def bond_matrix(delta: float, m: int, j: int) -> np.ndarray:
    """Bond term between local sites ``j`` and ``j+1`` of an ``m``-site block."""
    return np.kron(np.kron(np.eye(1 << (m - j - 2)), local_term(delta)), np.eye(1 << j))


def boundary_commutator(region_c: ChainRegion, shell: SiteSet, ctx) -> LocalDense | None:
    """``i [H^{region_c}, P_+^{shell}]`` as a dense operator on the shell plus one
    site; ``None`` when it vanishes (the shell fills its side)."""
    shell = shell if shell.region == region_c else shell.within(region_c)
    if shell.is_empty:
        return None
    X = fatten(region_c, shell, 1).as_region()
    m = X.length
    if m < 2:
        return None
    H = sum(bond_matrix(ctx.params.delta, m, j) for j in range(m - 1))
    smask = mask_in(X, shell)
    P = ((np.arange(1 << m) & smask) == 0).astype(float)
    D = 1j * (H * P[None, :] - P[:, None] * H)
    if not np.any(D):
        return None
    return LocalDense(ctx.region, X, D)


# --- plans ----------------------------------------------------------------

class Plan:
    """A time-independent recipe for ``T_t``."""

    support: SiteSet

    def operator(self, t: float) -> BlockOperator:
        raise NotImplementedError

    def integral(self, t: float) -> BlockOperator:
        raise NotImplementedError

    @property
    def bandwidth(self) -> float:
        return 0.0

    def compressed(self, V: np.ndarray, E: np.ndarray, t: float, region: ChainRegion):
        return compressed_matrix(V, self.operator(t))

    def trace(self) -> dict:
        raise NotImplementedError


class ExactPlan(Plan):
    """Level zero: ``T_t = T`` for every ``t``."""

    def __init__(self, T: BlockOperator, support: SiteSet, info: dict):
        self.T = T
        self.support = support
        self.info = info

    def operator(self, t):
        return self.T

    def integral(self, t):
        return Sum([self.T], [t])

    def trace(self):
        return dict(self.info, branch="exact")


class EvolvedPlan(Plan):
    """Exact evolution on ``region`` (optionally sandwiched by ``P_+`` of a core)."""

    def __init__(self, ctx, region: ChainRegion, T: BlockOperator, core: SiteSet | None,
                 info: dict):
        self.ctx = ctx
        self.R = region
        self.T = T
        self.core = None if core is None else projector_pm(_lift(core, ctx.region), "+",
                                                           ctx.region)
        self.support = ctx.region.interval(region.lo, region.hi)
        self.info = info

    def _spectrum(self):
        return self.ctx.full_spectrum(self.R)

    def _sandwich(self, op):
        return op if self.core is None else Product([self.core, op, self.core])

    def operator(self, t):
        return self._sandwich(heisenberg(self._spectrum(), self.T, t))

    def integral(self, t):
        if t == 0:
            return Zero(self.ctx.region)
        return self._sandwich(duhamel_integral(self._spectrum(), self.T, t))

    @property
    def bandwidth(self):
        E = self._spectrum().eigenvalues()
        return float(E.max() - E.min())

    def compressed(self, V, E, t, region):
        if self.core is None and region == self.R:
            # V spans eigenvectors of the same Hamiltonian
            return compressed_matrix(V, self.T) * _pair_phases(E, t)
        return super().compressed(V, E, t, region)

    def trace(self):
        return dict(self.info, branch="degenerate")


class BoundaryFactor(Plan):
    """``P_+^{slab} + int_0^t D_s ds`` on one side of a shell region."""

    def __init__(self, P: BlockOperator, dplan: Plan | None, side: str, region: ChainRegion,
                 slab: SiteSet, layer: SiteSet, support: SiteSet):
        self.P = P
        self.dplan = dplan
        self.side = side
        self.region = region
        self.slab = slab
        self.layer = layer
        self.support = support

    def operator(self, t):
        if self.dplan is None or t == 0:
            return self.P
        op = Sum([self.P, self.dplan.integral(t)])
        op.support = self.support
        return op

    @property
    def bandwidth(self):
        return 0.0 if self.dplan is None else self.dplan.bandwidth

    def trace(self):
        return {"side": self.side, "region": self.region.to_str(),
                "slab": self.slab.sites(), "layer": self.layer.sites(),
                "commutator": None if self.dplan is None else self.dplan.trace()}


class ShellTerm:
    def __init__(self, j: int, A: ChainRegion, filtered: FilteredEvolution,
                 factors: list[BoundaryFactor], q_window: float, q_boundary: float):
        self.j = j
        self.A = A
        self.filtered = filtered
        self.factors = factors
        self.q_window = q_window
        self.q_boundary = q_boundary

    def operator(self, t):
        return Product([self.filtered.operator(t)] + [f.operator(t) for f in self.factors])

    @property
    def bandwidth(self):
        return self.filtered.bandwidth + sum(f.bandwidth for f in self.factors)

    def trace(self):
        return {"j": self.j, "A": self.A.to_str(), "window_q": self.q_window,
                "window_rank": self.filtered.rank, "boundary_q": self.q_boundary,
                "factors": [f.trace() for f in self.factors]}


class ShellPlan(Plan):
    def __init__(self, region: ChainRegion, terms: list[ShellTerm], support: SiteSet, info: dict):
        self.region = region
        self.terms = terms
        self.support = support
        self.info = info

    def operator(self, t):
        if not self.terms:
            return Zero(self.region)
        op = Sum([term.operator(t) for term in self.terms])
        op.support = self.support
        return op

    @property
    def bandwidth(self):
        return max((term.bandwidth for term in self.terms), default=0.0)

    def nodes(self, t: float) -> int:
        return min(MAX_NODES, 16 + math.ceil(0.7 * self.bandwidth * abs(t)))

    def integral(self, t):
        if t == 0 or not self.terms:
            return Zero(self.region)
        x, w = np.polynomial.legendre.leggauss(self.nodes(t))
        s = 0.5 * t * (x + 1.0)
        op = Sum([self.operator(sk) for sk in s], 0.5 * t * w)
        op.support = self.support
        return op

    def trace(self):
        return dict(self.info, branch="shells", terms=[term.trace() for term in self.terms])


# --- the recursion --------------------------------------------------------

def _check_sandwich(T: BlockOperator, P: BlockOperator, name: str, seed: int = 5):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((T.dim, 2))
    a = T.apply(v)
    b = P.apply(T.apply(P.apply(v)))
    if np.linalg.norm(a - b) > 1e-10 * max(1.0, np.linalg.norm(a)):
        raise PreconditionError(f"observable violates the sandwich identity {name}")


def _boundary_factor(ctx, reg: ChainRegion, Aset: SiteSet, side: str, region_c: ChainRegion,
                     w: ShellWidths, q_d: float, policy: GeometryPolicy) -> BoundaryFactor:
    amb = ctx.region
    slab = boundary(reg, Aset, w.probe, "outer_layer").within(region_c)
    layer = boundary(reg, Aset, w.inner, "outer_layer").within(region_c)
    P = projector_pm(_lift(slab, amb), "+", amb)
    D = boundary_commutator(region_c, slab, ctx)
    if D is None:
        return BoundaryFactor(P, None, side, region_c, slab, layer, _lift(slab, amb))
    dplan = _build(ctx, D, D.support.as_region(), q_d, w.ell, policy, "two", core=layer,
                   region=region_c)
    support = _lift(slab, amb) | dplan.support
    return BoundaryFactor(P, dplan, side, region_c, slab, layer, support)


def _build(ctx, T: BlockOperator, X: ChainRegion, q: float, ell: int, policy: GeometryPolicy,
           part: str, core: SiteSet | None = None, region: ChainRegion | None = None,
           top: bool = False) -> Plan:
    amb = ctx.region
    reg = region or amb
    q = check_half_integer(q)
    w = policy.widths(ell)
    Xs = reg.interval(X.lo, X.hi)
    radius = policy.top_radius(q, ell) if top else policy.radius(q, ell)
    declared = _lift(fatten(reg, Xs, radius), amb)
    info = {"level": q, "part": "top" if top else part, "region": reg.to_str(),
            "X": X.to_str(), "radius": radius,
            "core": None if core is None else core.sites()}
    if not top and q == 0:
        return ExactPlan(T, _lift(Xs, amb), info)
    if policy.degenerate(reg, Xs, radius, ell):
        return EvolvedPlan(ctx, reg, T, core if part == "two" else None, info)
    k = ceil_half(q)
    dec = shell_decomposition(T, X, k, policy, ell, region=reg)
    info["geometry_ok"] = dec.geometry_ok
    core_amb = None if (part != "two" or core is None) else _lift(core, amb)
    terms = []
    for j in range(1, k + 2):
        if j > 1 and dec.shells[j - 2].is_empty:
            break  # every later term carries P_- of an empty set
        A = dec.regions[j - 1]
        Aset = reg.interval(A.lo, A.hi)
        inner = boundary(reg, Aset, w.probe, "inner_layer")
        M = Product([projector_pm(_lift(inner, amb), "+", amb), T] + dec.minus[:j - 1])
        M.support = amb.interval(A.lo, A.hi)
        empty = _lift(boundary(reg, Aset, w.inner, "inner_layer"), amb)
        if core_amb is not None:
            empty = empty | core_amb
        filt = FilteredEvolution(ctx, M, A, q, empty)
        q_d = q + 0.5 if (top and j == 1) else q - 0.5
        factors = [_boundary_factor(ctx, reg, Aset, side, rc, w, q_d, policy)
                   for side, rc in _sides(reg, A)]
        terms.append(ShellTerm(j, A, filt, factors, q, q_d))
    return ShellPlan(amb, terms, declared, info)


@dataclass
class ApproximantReport:
    plan: Plan
    t: float
    q: float
    ell: int
    X: ChainRegion
    region: ChainRegion
    policy: GeometryPolicy
    error: float | None = None
    build_seconds: float = 0.0
    _op: BlockOperator | None = None

    @property
    def operator(self) -> BlockOperator:
        if self._op is None:
            self._op = self.plan.operator(self.t)
        return self._op

    @property
    def support(self) -> SiteSet:
        return self.plan.support

    @property
    def trace(self) -> dict:
        return self.plan.trace()

    @property
    def branch(self) -> str:
        return self.trace["branch"]

    def to_json(self) -> dict:
        sup = self.support
        return {"t": self.t, "q": self.q, "ell": self.ell, "X": self.X.to_str(),
                "region": self.region.to_str(),
                "support": [sup.min, sup.max] if not sup.is_empty else None,
                "error": self.error, "policy": self.policy.to_json(),
                "trace": self.trace, "build_seconds": self.build_seconds}


def _finish(ctx, plan, T, X, q, ell, t, policy, reg, measure, q_measure, start):
    rep = ApproximantReport(plan, t, q, ell, X, reg, policy)
    if measure:
        rep.error = propagation_error(ctx, T, rep, q_measure, t, region=reg)
    rep.build_seconds = time.perf_counter() - start
    return rep


def build_approximant(T: BlockOperator, X: ChainRegion, q: float, ell: int, t: float, ctx,
                      policy: GeometryPolicy | None = None, part: str = "one",
                      core: SiteSet | None = None, region: ChainRegion | None = None,
                      check: bool = True, measure: bool = True) -> ApproximantReport:
    """Localized approximant at level ``q``.

    Part ``"one"`` expects ``T = P_-^X T P_-^X``.  Part ``"two"`` expects a
    boundary-commutator shaped observable around ``core`` (default: ``X``
    thinned by ``gap + 1``) and returns ``T_t = P_+^core T_t P_+^core``.
    """
    start = time.perf_counter()
    policy = policy or GeometryPolicy.default()
    reg = region or ctx.region
    amb = ctx.region
    w = policy.widths(ell)
    Xs = reg.interval(X.lo, X.hi)
    if part not in ("one", "two"):
        raise PreconditionError(f"unknown part {part!r}")
    if part == "two" and core is None:
        core = fatten(reg, Xs, -(w.gap + 1))
        if core == Xs:
            raise PreconditionError("X fills the region; pass the core explicitly")
    if check:
        if part == "one":
            _check_sandwich(T, projector_pm(_lift(Xs, amb), "-", amb), "T = P_-^X T P_-^X")
        else:
            wide = _lift(fatten(reg, core, w.gap - 1), amb)
            _check_sandwich(T, projector_pm(wide, "+", amb), "T = P_+^[Y] T P_+^[Y]")
    plan = _build(ctx, T, X, q, ell, policy, part, core=core, region=reg)
    return _finish(ctx, plan, T, X, q, ell, t, policy, reg, measure, q, start)


def build_approximant_top(T: BlockOperator, X: ChainRegion, q: float, ell: int, t: float, ctx,
                          policy: GeometryPolicy | None = None, region: ChainRegion | None = None,
                          measure: bool = True) -> ApproximantReport:
    """Approximant for a general observable on ``X``: shells ``j >= 2`` at level
    ``q``, the first shell with its boundary commutators localized at ``q + 1/2``."""
    start = time.perf_counter()
    policy = policy or GeometryPolicy.default()
    reg = region or ctx.region
    plan = _build(ctx, T, X, q, ell, policy, "one", region=reg, top=True)
    return _finish(ctx, plan, T, X, q, ell, t, policy, reg, measure, q, start)


def duhamel_Y(D_t_provider, region_c: ChainRegion, shell: SiteSet, t: float, ctx,
              D: BlockOperator | None = None) -> BlockOperator:
    """Boundary factor ``P_+^{shell} + int_0^t D_s ds``.

    ``D_t_provider`` is ``"exact"`` (``D_s`` is the exact evolution of the
    commutator, so the result is the evolved projection) or a ``Plan``.
    """
    amb = ctx.region
    P = projector_pm(_lift(shell, amb), "+", amb)
    if t == 0:
        return P
    if isinstance(D_t_provider, str):
        if D_t_provider != "exact":
            raise PreconditionError(f"unknown provider {D_t_provider!r}")
        D = D if D is not None else boundary_commutator(region_c, shell, ctx)
        if D is None:
            return P
        return Sum([P, duhamel_integral(ctx.full_spectrum(region_c), D, t)])
    return Sum([P, D_t_provider.integral(t)])


def propagation_error(ctx, T: BlockOperator, T_t, q: float, t: float,
                      region: ChainRegion | None = None) -> float:
    """``||P (tau_t(T) - T_t) P||`` with ``P`` the projection of ``H^region`` onto
    ``I_{<=q}``; ``T_t`` is an operator or a report."""
    reg = region or ctx.region
    I = EnergyIntervals(check_half_integer(q), ctx.u).I_le_q
    S = ctx.spectrum(reg, cutoff=I.upper)
    V, E = S.isometry(I)
    if V.shape[1] == 0:
        return 0.0
    exact = compressed_matrix(V, T) * _pair_phases(E, t)
    if isinstance(T_t, ApproximantReport):
        approx = T_t.plan.compressed(V, E, t, reg)
    else:
        approx = compressed_matrix(V, T_t)
    return float(np.linalg.norm(exact - approx, 2))


# --- matrix elements ------------------------------------------------------

@dataclass
class MatrixElementResult:
    operator: BlockOperator | None
    error: float
    branch: str
    r: int
    alpha: float | None
    window_j: int | None = None
    window: ChainRegion | None = None
    flag: str | None = None
    report: ApproximantReport | None = None


def corollary_alpha(q: float, xi: float, theta: float, c_mu: float) -> float:
    """``max(2 xi / theta, 4 ceil(q) / c_mu + 1)``."""
    if theta <= 0 or c_mu <= 0:
        raise PreconditionError("theta and c_mu must be positive")
    return max(2 * xi / theta, 4 * ceil_half(q) / c_mu + 1)


def choose_window(region: ChainRegion, X: ChainRegion, avoid: SiteSet, r: int) -> int | None:
    """Smallest ``j`` in ``[0, 2r]`` whose annulus ``[X]_{(2j+2)r} \\ [X]_{2jr}``
    misses ``avoid``; ``None`` if there is none."""
    Xs = region.interval(X.lo, X.hi)
    avoid = avoid if avoid.region == region else avoid.within(region)
    for j in range(0, 2 * r + 1):
        ring = fatten(region, Xs, (2 * j + 2) * r) - fatten(region, Xs, 2 * j * r)
        if (ring & avoid).is_empty:
            return j
    return None


def _pi_matrix_element(ctx, K: np.ndarray, V: np.ndarray, M1: SiteSet, M2: SiteSet) -> float:
    a = mask_in(ctx.region, M1)
    b = mask_in(ctx.region, M2)
    return float(abs(V[a] @ K @ V[b].conj()))


def matrix_element_approximant(ctx, T: BlockOperator, X: ChainRegion, q: float, ell: int,
                               t: float, M1: SiteSet, M2: SiteSet, alpha: float | None = None,
                               constants: dict | None = None, r: int | None = None,
                               policy: GeometryPolicy | None = None) -> MatrixElementResult:
    """Approximant for the matrix element ``<phi_M1| (tau_t(T) - T_t)_P |phi_M2>``.

    Branches: ``ell >= r`` uses the general approximant; ``|M| >= r`` keeps
    ``T``; otherwise the construction runs inside the window ``[X]_{(2j+1)r}``
    chosen so that a ring of width ``2r`` around it avoids ``M1`` and ``M2``.
    """
    policy = policy or GeometryPolicy.default()
    L = ctx.region.length
    if alpha is None and constants is not None:
        alpha = corollary_alpha(q, constants["xi"], constants["theta"], constants["c_mu"])
    if r is None:
        if alpha is None:
            raise PreconditionError("need alpha, the constants, or an explicit r")
        r = math.ceil(alpha * math.log(L))
    if len(M1) != len(M2):
        return MatrixElementResult(None, 0.0, "particle-number", r, alpha,
                                   flag="|M1| != |M2|: the matrix element vanishes")
    I = EnergyIntervals(check_half_integer(q), ctx.u).I_le_q
    S = ctx.spectrum(ctx.region, cutoff=I.upper)
    V, E = S.isometry(I)
    exact = compressed_matrix(V, T) * _pair_phases(E, t) if V.shape[1] else np.zeros((0, 0))

    def err(K):
        return _pi_matrix_element(ctx, exact - K, V, M1, M2) if V.shape[1] else 0.0

    if ell >= r:
        rep = build_approximant_top(T, X, q, ell, t, ctx, policy, measure=False)
        K = rep.plan.compressed(V, E, t, ctx.region) if V.shape[1] else exact
        return MatrixElementResult(rep.operator, err(K), "scale", r, alpha, report=rep)
    if len(M1) >= r:
        return MatrixElementResult(T, err(compressed_matrix(V, T)), "large-deviation", r, alpha)
    if X.length > math.log(L):
        raise PreconditionError(f"|X| = {X.length} exceeds ln|Lambda| = {math.log(L):.3f}")
    j = choose_window(ctx.region, X, M1 | M2, r)
    if j is None:
        raise PreconditionError("no window ring avoids M1 and M2")
    win = fatten(ctx.region, ctx.region.interval(X.lo, X.hi), (2 * j + 1) * r).as_region()
    rep = build_approximant_top(T, X, q + 0.5, ell, t, ctx, policy, region=win, measure=False)
    K = rep.plan.compressed(V, E, t, ctx.region) if V.shape[1] else exact
    return MatrixElementResult(rep.operator, err(K), "window", r, alpha, j, win, report=rep)
