"""Per-sample quasi-locality statistics.

All norms are computed sector by sector: the projections ``P_-^A`` and
``P_+^B`` are diagonal in the configuration basis, so a crossing norm
``||P_-^A f(H) P_+^B||`` is the largest over sectors of the norm of a row/column
slice of ``U f(E) U^*``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import sector_states
from .geometry import SiteSet, components, set_distance
from .hamiltonian import EnergyIntervals, Interval, ModelError, ceil_half
from .operators import mask_in, power_norm
from .spectral import SingularityError, SpectralData

DENSE_SVD_LIMIT = 2000
CSV_COLUMNS = ("seed", "L", "delta", "lambda", "k_or_q", "ell", "dist", "statistic", "value")


class PreconditionError(ValueError):
    pass


@dataclass
class MeasurementRecord:
    seed: int
    L: int
    delta: float
    lam: float
    k_or_q: float
    ell: float | None
    dist: float | None
    statistic: str
    value: float
    aux: dict = field(default_factory=dict)

    def row(self) -> list:
        return [self.seed, self.L, self.delta, self.lam, self.k_or_q, self.ell, self.dist,
                self.statistic, self.value]

    def to_json(self) -> dict:
        return asdict(self)


def crossing_distance(A: SiteSet, B: SiteSet) -> float:
    """``dist(A, Lambda \\ B)``; infinite when ``B`` is everything."""
    return set_distance(A, B.complement())


def _rows_cols(S: SpectralData, A: SiteSet, B: SiteSet, N: int):
    masks = sector_states(S.X.length, N)
    shift = S.X.lo - S.region.lo
    amask = mask_in(S.region, A) >> shift if A.mask else 0
    bmask = mask_in(S.region, B) >> shift if B.mask else 0
    rows = np.nonzero(masks & amask)[0]
    cols = np.nonzero((masks & bmask) == 0)[0]
    return rows, cols


def _low_rank_norm(X: np.ndarray, Y: np.ndarray) -> float:
    """``||X Y^*||`` through triangular factors."""
    if X.shape[0] == 0 or Y.shape[0] == 0 or X.shape[1] == 0:
        return 0.0
    Rx = np.linalg.qr(X, mode="r")
    Ry = np.linalg.qr(Y, mode="r")
    return float(np.linalg.norm(Rx @ Ry.conj().T, 2))


def crossing_norm(S: SpectralData, A: SiteSet, B: SiteSet, values_of) -> float:
    """``||P_-^A f(H) P_+^B||`` with ``f`` given on the eigenvalues."""
    if not S.complete:
        raise PreconditionError("crossing norms need the complete spectrum")
    if A.is_empty:
        return 0.0
    best = 0.0
    for N, (E, U) in S.sectors.items():
        rows, cols = _rows_cols(S, A, B, N)
        if len(rows) == 0 or len(cols) == 0:
            continue
        f = values_of(E)
        Ur, Uc = U[rows], U[cols]
        if min(len(rows), len(cols)) <= DENSE_SVD_LIMIT:
            best = max(best, float(np.linalg.norm((Ur * f) @ Uc.conj().T, 2)))
        else:
            fa = f
            app = lambda v: Ur @ (fa * (Uc.conj().T @ v))
            adj = lambda w: Uc @ (np.conj(fa) * (Ur.conj().T @ w))
            best = max(best, power_norm(app, adj, len(cols)))
    return best


def resolvent_crossing_norm(S: SpectralData, A: SiteSet, B: SiteSet, z: complex,
                            power: float = 0.25):
    """``||P_-^A (H - z)^{-1} P_+^B||**power`` and ``dist(A, B^c)``."""
    if not A.issubset(B):
        raise PreconditionError("A must be contained in B")
    E = S.eigenvalues()
    if len(E) and np.min(np.abs(E - z)) < 1e-12:
        raise SingularityError(f"z = {z} lies on the spectrum")
    val = crossing_norm(S, A, B, lambda e: 1.0 / (e - z))
    return val ** power, crossing_distance(A, B)


def eigencorrelator(S: SpectralData, A: SiteSet, B: SiteSet, J: Interval,
                    group_tol: float = 1e-9) -> dict:
    """Bracket for the supremum over bounded spectral functions on ``J``.

    ``surrogate`` sums ``||P_-^A pi_E P_+^B||`` over distinct eigenvalues in ``J``
    (an upper bound); ``witness`` is the best of ``chi_J`` and the single
    eigenprojections (a lower bound).
    """
    if not A.issubset(B):
        raise PreconditionError("A must be contained in B")
    win = S.window(J)
    entries = []
    for N, (E, U) in win.items():
        entries.extend((e, N, i) for i, e in enumerate(E))
    entries.sort()
    groups, cur = [], []
    for e in entries:
        if cur and e[0] - cur[-1][0] > group_tol:
            groups.append(cur)
            cur = []
        cur.append(e)
    if cur:
        groups.append(cur)
    full = {N: _rows_cols(S, A, B, N) for N in win}
    surrogate, witness = 0.0, 0.0
    if A.is_empty:
        return {"surrogate": 0.0, "witness": 0.0, "n_eigenvalues": len(entries)}
    for g in groups:
        by_sector = {}
        for _, N, i in g:
            by_sector.setdefault(N, []).append(i)
        val = 0.0
        for N, cols_idx in by_sector.items():
            U = win[N][1][:, cols_idx]
            rows, cols = full[N]
            val = max(val, _low_rank_norm(U[rows], U[cols]))
        surrogate += val
        witness = max(witness, val)
    for N, (E, U) in win.items():
        rows, cols = full[N]
        witness = max(witness, _low_rank_norm(U[rows], U[cols]))
    return {"surrogate": surrogate, "witness": witness, "n_eigenvalues": len(entries)}


def ct_rate(delta0: float) -> float:
    if not delta0 > 9:
        raise ModelError("the decay rate needs delta0 > 9")
    return math.log((delta0 - 1) / 8)


@dataclass
class CTResult:
    bound: float
    measured: float
    passed: bool
    lemma_bound: float
    lemma_passed: bool
    dist: float
    rate: float


def ct_check(S_hat: SpectralData, A: SiteSet, B: SiteSet, z: complex, delta0: float,
             q: float | None = None, delta: float | None = None) -> CTResult:
    """Compare a gapped crossing norm with the exponential bound.

    ``bound`` is the stated prefactor ``1/delta0``; ``lemma_bound`` uses the
    prefactor ``delta0`` that the underlying deterministic lemma produces with
    hopping strength ``1/delta`` (see the decisions ledger).
    """
    params = S_hat.provenance.get("params")
    delta = delta if delta is not None else getattr(params, "delta", None)
    if delta is None or delta < delta0:
        raise PreconditionError("need delta >= delta0")
    m0 = ct_rate(delta0)
    if q is not None:
        top = EnergyIntervals(ceil_half(q), 1.0 - 1.0 / delta).I_check_le_q
        if not top.contains(np.real(z)):
            raise PreconditionError(f"Re z = {np.real(z)} outside the window up to {top.hi}")
    if A.is_empty or len(components(A.region, A)) != 1:
        raise PreconditionError("A must be a nonempty connected set")
    if not A.issubset(B):
        raise PreconditionError("A must be contained in B")
    measured, d = resolvent_crossing_norm(S_hat, A, B, z, power=1.0)
    decay = math.exp(-m0 * d) if math.isfinite(d) else 0.0
    bound = decay / delta0
    lemma_bound = decay * delta0
    tol = 1e-12
    return CTResult(bound, measured, measured <= bound + tol, lemma_bound,
                    measured <= lemma_bound + tol, d, m0)


def multi_probe_norm(S: SpectralData, k: int, probes: list[SiteSet], ell: int,
                     delta: float | None = None) -> float:
    """``||P_{I<=k} prod_i P_-^{S_i}||`` on the low-energy range."""
    if len(probes) != k + 1:
        raise PreconditionError(f"need exactly {k + 1} probes, got {len(probes)}")
    if any(p.is_empty for p in probes):
        raise PreconditionError("probes must be nonempty")
    for i in range(len(probes)):
        for j in range(i + 1, len(probes)):
            if set_distance(probes[i], probes[j]) < 2 * ell + 1:
                raise PreconditionError("probes closer than 2*ell+1")
    if delta is None:
        delta = S.provenance["params"].delta
    I = EnergyIntervals(k, 1.0 - 1.0 / delta).I_le_q
    win = S.window(I)
    shift = S.X.lo - S.region.lo
    pmasks = [mask_in(S.region, p) >> shift for p in probes]
    best = 0.0
    for N, (E, U) in win.items():
        masks = sector_states(S.X.length, N)
        keep = np.ones(len(masks), dtype=bool)
        for pm in pmasks:
            keep &= (masks & pm) != 0
        if np.any(keep):
            best = max(best, float(np.linalg.norm(U[keep], 2)))
    return best


def tail_probability_probe(S: SpectralData, k: int, ell: int, delta: float | None = None) -> bool:
    """Whether some eigenvalue with more than ``2 ell + k`` particles lies in ``I_{<=k}``."""
    if 2 * ell + k < 0:
        raise PreconditionError("2*ell + k must be nonnegative")
    if delta is None:
        delta = S.provenance["params"].delta
    I = EnergyIntervals(k, 1.0 - 1.0 / delta).I_le_q
    win = S.window(I)
    return any(N > 2 * ell + k and len(E) for N, (E, _) in win.items())
