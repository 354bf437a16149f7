"""Random XXZ chain operators in the droplet (Ising) phase.

The Hamiltonian on an interval is

    H = sum_bonds h_{i,i+1} + N + lam * V,
    h = -n (x) n - (1/(2 delta)) (s+ (x) s- + s- (x) s+),

with ``n`` the particle (spin-down) occupation, ``N`` the total particle
number and ``V`` the random field.  Within an ``N``-particle sector the
diagonal entry of configuration ``A`` is
``|A| - #(occupied neighbour pairs) + lam * omega_A`` and each particle may
hop to an empty neighbour with amplitude ``-1/(2 delta)``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import cluster_counts, field_sums, sector_states
from .geometry import ChainRegion, SiteSet, edge_boundary
from .operators import Diagonal, OperatorError, SectorOperator, mask_in

DENSE_LIMIT = 4096


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    delta: float
    lam: float
    q: float = 0.0

    def __post_init__(self):
        if not self.delta > 1:
            raise ModelError(f"anisotropy must exceed 1, got {self.delta}")
        if not self.lam > 0:
            raise ModelError(f"disorder strength must be positive, got {self.lam}")
        check_half_integer(self.q)

    @property
    def u(self) -> float:
        return 1.0 - 1.0 / self.delta


def check_half_integer(q: float) -> float:
    if q < 0 or abs(2 * q - round(2 * q)) > 1e-12:
        raise ModelError(f"q must be a nonnegative multiple of 1/2, got {q}")
    return round(2 * q) / 2


def ceil_half(q: float) -> int:
    """Smallest integer not below ``q`` (``q`` a half-integer)."""
    return math.ceil(check_half_integer(q) - 1e-12)


@dataclass(frozen=True)
class DisorderSample:
    region: ChainRegion
    omega: tuple
    seed: int = 0

    def __post_init__(self):
        if len(self.omega) != self.region.length:
            raise ModelError("disorder sample does not cover the region")
        if any(not 0.0 <= w <= 1.0 for w in self.omega):
            raise ModelError("field values must lie in [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.omega, dtype=float)

    def on(self, X: ChainRegion) -> np.ndarray:
        if not self.region.contains_region(X):
            raise ModelError(f"{X.to_str()} not inside {self.region.to_str()}")
        return self.values[X.lo - self.region.lo: X.hi - self.region.lo + 1]


@dataclass(frozen=True)
class Interval:
    """Real interval; ``lo = -inf`` allowed.  Membership uses a small guard band."""

    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True
    guard: float = 1e-12

    def contains(self, E):
        E = np.asarray(E)
        if self.lo_closed:
            left = E >= self.lo - self.guard
        else:
            left = E > self.lo + self.guard
        if self.hi_closed:
            right = E <= self.hi + self.guard
        else:
            right = E < self.hi - self.guard
        return left & right

    @property
    def upper(self) -> float:
        return self.hi + self.guard if self.hi_closed else self.hi

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "lo_closed": self.lo_closed,
                "hi_closed": self.hi_closed}


@dataclass(frozen=True)
class EnergyIntervals:
    q: float
    u: float

    def _top(self, frac):
        return (self.q + frac) * self.u

    @property
    def I_le_q(self) -> Interval:
        return Interval(-math.inf, self._top(0.75))

    @property
    def I_q(self) -> Interval:
        return Interval(self.u, self._top(0.75))

    @property
    def I_check_le_q(self) -> Interval:
        return Interval(-math.inf, self._top(0.875))

    @property
    def I_check_q(self) -> Interval:
        return Interval(self.u, self._top(0.875))


def energy_intervals(q: float, delta: float) -> EnergyIntervals:
    return EnergyIntervals(check_half_integer(q), 1.0 - 1.0 / delta)


def local_term(delta: float) -> np.ndarray:
    """Bond term on two sites.

    The matrix is symmetric under exchanging the sites, so it reads the same in
    the display order (up-up, up-down, down-up, down-down) and in bitmask order.
    """
    if not delta > 1:
        raise ModelError("anisotropy must exceed 1")
    h = np.zeros((4, 4))
    h[3, 3] = -1.0
    h[1, 2] = h[2, 1] = -1.0 / (2 * delta)
    return h


def _sector_matrix(masks: np.ndarray, diag: np.ndarray, bonds: list[int], hop: float,
                   length: int):
    d = len(masks)
    rows, cols, vals = [np.arange(d)], [np.arange(d)], [diag]
    for j in bonds:
        pair = (masks >> j) & 1 ^ (masks >> (j + 1)) & 1
        src = np.nonzero(pair)[0]
        if len(src):
            tgt = np.searchsorted(masks, masks[src] ^ (3 << j))
            rows.append(tgt)
            cols.append(src)
            vals.append(np.full(len(src), hop))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(d, d)).tocsr()
    return M.toarray() if d <= DENSE_LIMIT else M


def assemble(params: ModelParams, omega: np.ndarray, X: ChainRegion, bonds: list[int],
             onsite: bool = True, shifts=None, ambient: ChainRegion | None = None,
             floors: bool = False) -> SectorOperator:
    """Sector-blocked operator on ``X`` from chosen bonds (local offsets ``j`` for
    the bond ``(lo+j, lo+j+1)``), optional on-site terms, and an optional
    diagonal ``shifts(masks) -> array``."""
    m = X.length
    omega = np.asarray(omega, dtype=float)
    hop = -1.0 / (2 * params.delta)
    bond_mask = sum(1 << j for j in bonds)
    blocks, lows = {}, {}
    for N in range(m + 1):
        masks = sector_states(m, N)
        pairs = masks & (masks >> 1) & bond_mask
        diag = -_bits(pairs).astype(float)
        if onsite:
            diag += N + params.lam * field_sums(masks, omega)
        if shifts is not None:
            diag += shifts(masks)
        blocks[N] = _sector_matrix(masks, diag, bonds, hop, m)
        if floors:
            lows[N] = float(np.min(params.u * cluster_counts(masks)
                                   + params.lam * field_sums(masks, omega)
                                   + (shifts(masks) if shifts is not None else 0.0)))
    op = SectorOperator(ambient or X, X, blocks, hermitian=True, check_hermitian=True)
    op.floors = lows if floors else None
    op.params = params
    return op


def _bits(masks: np.ndarray) -> np.ndarray:
    out = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while np.any(m):
        out += m & 1
        m = m >> 1
    return out


def build_hamiltonian(params: ModelParams, omega, region: ChainRegion,
                      ambient: ChainRegion | None = None) -> SectorOperator:
    """``H`` on ``region`` (embedded in ``ambient`` if given).

    Each sector carries a certified lower bound in ``.floors`` taken from the
    diagonal operator ``u W + lam V``, which ``H`` dominates.
    """
    if region.length < 2:
        raise ModelError("the chain needs at least two sites")
    om = _omega_on(omega, region)
    return assemble(params, om, region, list(range(region.length - 1)), ambient=ambient,
                    floors=True)


def build_subchain(params: ModelParams, omega, X: ChainRegion,
                   ambient: ChainRegion | None = None) -> SectorOperator:
    """Like ``build_hamiltonian`` but also accepts single-site regions."""
    om = _omega_on(omega, X)
    return assemble(params, om, X, list(range(X.length - 1)), ambient=ambient, floors=True)


def _omega_on(omega, X: ChainRegion) -> np.ndarray:
    if isinstance(omega, DisorderSample):
        return omega.on(X)
    om = np.asarray(omega, dtype=float)
    if len(om) != X.length:
        raise ModelError("field values do not cover the region")
    return om


def build_diagonal(kind: str, region: ChainRegion, omega=None,
                   ambient: ChainRegion | None = None) -> Diagonal:
    """Number, cluster or field operator of ``region`` as a diagonal operator."""
    amb = ambient or region
    idx = np.arange(1 << amb.length, dtype=np.int64)
    p = region.lo - amb.lo
    local = (idx >> p) & region.full_mask
    if kind == "number":
        vals = _bits(local).astype(float)
    elif kind == "cluster":
        vals = cluster_counts(local).astype(float)
    elif kind == "field":
        if omega is None:
            raise ModelError("field operator needs a disorder sample")
        om = _omega_on(omega, region)
        vals = np.zeros(len(idx))
        for j in range(region.length):
            vals += om[j] * ((local >> j) & 1)
    else:
        raise ModelError(f"unknown diagonal kind {kind!r}")
    return Diagonal(amb, vals, amb.interval(region.lo, region.hi))


def projector_pm(S: SiteSet, sign: str, region: ChainRegion) -> Diagonal:
    """``P_+^S`` (no particle in ``S``) or ``P_-^S = I - P_+^S``."""
    mask = mask_in(region, S)
    idx = np.arange(1 << region.length, dtype=np.int64)
    plus = ((idx & mask) == 0).astype(float)
    support = SiteSet(region, mask)
    if sign in ("plus", "+"):
        return Diagonal(region, plus, support)
    if sign in ("minus", "-"):
        return Diagonal(region, 1.0 - plus, support)
    raise OperatorError(f"sign must be plus or minus, got {sign!r}")


def cluster_projector(region: ChainRegion, kmin: int, kmax: int,
                      ambient: ChainRegion | None = None) -> Diagonal:
    """Projection onto configurations whose cluster count lies in ``[kmin, kmax]``."""
    W = build_diagonal("cluster", region, ambient=ambient).values
    return Diagonal(ambient or region, ((W >= kmin) & (W <= kmax)).astype(float),
                    (ambient or region).interval(region.lo, region.hi))


def modified_shift(k: int, u: float):
    """Diagonal shift of the modified Hamiltonian as a function of bitmasks."""
    def shifts(masks):
        W = cluster_counts(masks)
        out = np.where((W >= 1) & (W <= k), k * u, 0.0)
        return out + np.where(W == 0, (k + 1) * u, 0.0)
    return shifts


def build_modified(params: ModelParams, omega, region: ChainRegion, k: int,
                   ambient: ChainRegion | None = None) -> SectorOperator:
    """``H + k u (Q_{1..k} + (k+1)/k Q_0)``; for ``k = 0`` this is ``H + u Q_0``.

    Its spectrum lies above ``(k+1) u``.
    """
    if k < 0:
        raise ModelError("k must be nonnegative")
    om = _omega_on(omega, region)
    op = assemble(params, om, region, list(range(region.length - 1)),
                  shifts=modified_shift(k, params.u), ambient=ambient, floors=True)
    op.k = k
    return op


def decouple(params: ModelParams, omega, region: ChainRegion, A: ChainRegion):
    """Split ``H`` into ``H^A + H^{A^c}`` and the crossing-bond part ``Gamma^A``."""
    if not region.contains_region(A):
        raise ModelError(f"{A.to_str()} not inside {region.to_str()}")
    om = _omega_on(omega, region)
    Aset = region.interval(A.lo, A.hi)
    crossing = {x - region.lo for x, _ in edge_boundary(region, Aset)}
    inner = [j for j in range(region.length - 1) if j not in crossing]
    H_AAc = assemble(params, om, region, inner)
    Gamma = assemble(params, om, region, sorted(crossing), onsite=False)
    return H_AAc, Gamma


def sector_csv(op: SectorOperator, N: int) -> str:
    """Dense CSV dump of one sector block (debugging at small sizes)."""
    buf = io.StringIO()
    np.savetxt(buf, np.real_if_close(op.dense_block(N)), delimiter=",", fmt="%.17g")
    return buf.getvalue()
