"""Eigensystems of number-conserving Hamiltonians and their functional calculus.

Diagonalization may be restricted to an energy window ``(-inf, cutoff]``.
Sectors whose certified lower bound (``H.floors``) lies above the cutoff are
skipped entirely, which is what keeps 14-site chains cheap when only the
low-energy range matters.
"""
from __future__ import annotations

import heapq
import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .basis import sector_states
from .geometry import ChainRegion
from .hamiltonian import Interval, ModelError
from .operators import (BlockOperator, LocalDense, OperatorError, Product, SectorOperator,
                        embed_vectors)

DEGENERATE_GAP = 1e-9


class SpectralError(RuntimeError):
    pass


class SingularityError(SpectralError):
    pass


class HSConvergenceError(SpectralError):
    pass


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # first component of non-negligible size made real and positive
    if U.size == 0:
        return U
    mag = np.abs(U)
    first = np.argmax(mag > 1e-8 * mag.max(axis=0, keepdims=True), axis=0)
    ph = U[first, np.arange(U.shape[1])]
    return U * (np.abs(ph) / ph)[None, :] if np.iscomplexobj(U) else U * np.sign(ph)


@dataclass
class SpectralData:
    """Per-sector eigenpairs of a Hamiltonian on the subinterval ``X``.

    When ``cutoff`` is set only eigenpairs with energy up to the cutoff are
    stored; sectors listed in ``skipped`` are certified to have none.
    """

    region: ChainRegion
    X: ChainRegion
    sectors: dict
    cutoff: float | None = None
    skipped: tuple = ()
    provenance: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.cutoff is None

    def eigenvalues(self) -> np.ndarray:
        if not self.sectors:
            return np.zeros(0)
        return np.sort(np.concatenate([E for E, _ in self.sectors.values()]))

    def norm(self) -> float:
        E = self.eigenvalues()
        return float(np.max(np.abs(E))) if len(E) else 0.0

    def _covers(self, interval: Interval):
        if self.cutoff is not None and interval.upper > self.cutoff + 1e-12:
            raise SpectralError(f"window up to {interval.hi} exceeds the diagonalized "
                                f"range (cutoff {self.cutoff})")

    def window(self, interval: Interval) -> dict:
        self._covers(interval)
        out = {}
        for N, (E, U) in self.sectors.items():
            sel = interval.contains(E)
            if np.any(sel):
                out[N] = (E[sel], U[:, sel])
        return out

    def local_isometry(self, interval: Interval):
        """Eigenvectors with energy in ``interval`` as columns on ``H_X``.

        Returns ``(W, energies)`` with ``W`` of shape ``(2**|X|, rank)``.
        """
        win = self.window(interval)
        rank = sum(len(E) for E, _ in win.values())
        dtype = np.result_type(float, *[U for _, U in win.values()])
        W = np.zeros((1 << self.X.length, rank), dtype=dtype)
        energies = np.zeros(rank)
        col = 0
        for N in sorted(win):
            E, U = win[N]
            W[sector_states(self.X.length, N), col:col + len(E)] = U
            energies[col:col + len(E)] = E
            col += len(E)
        return W, energies

    def isometry(self, interval: Interval):
        W, E = self.local_isometry(interval)
        return embed_vectors(self.region, self.X, W), E

    def function_operator(self, values_of) -> SectorOperator:
        if not self.complete:
            raise SpectralError("functions of H need the complete spectrum")
        blocks = {N: (U, values_of(E)) for N, (E, U) in self.sectors.items()}
        return SectorOperator(self.region, self.X, blocks)


def diagonalize(H: SectorOperator, cutoff: float | None = None) -> SpectralData:
    """Eigen-decompose every sector block (or only the part below ``cutoff``)."""
    if not isinstance(H, SectorOperator) or not H.hermitian:
        raise OperatorError("diagonalize needs a Hermitian sector-blocked operator")
    floors = getattr(H, "floors", None)
    sectors, skipped = {}, []
    for N in sorted(H.blocks):
        if cutoff is not None and floors is not None and floors[N] > cutoff + 1e-12:
            skipped.append(N)
            continue
        B = H.dense_block(N)
        try:
            if cutoff is None:
                E, U = la.eigh(B)
            elif B.shape[0] <= 4:
                E, U = la.eigh(B)
                keep = E <= cutoff + 1e-12
                E, U = E[keep], U[:, keep]
            else:
                E, U = la.eigh(B, subset_by_value=(-np.inf, cutoff + 1e-12), driver="evr")
        except la.LinAlgError as exc:
            raise SpectralError(f"eigensolver failed in sector N={N}: {exc}") from exc
        sectors[N] = (E, _fix_signs(U))
    return SpectralData(H.region, H.X, sectors, cutoff, tuple(skipped),
                        {"params": getattr(H, "params", None)})


def spectral_projection(S: SpectralData, I: Interval):
    """``chi_I(H)`` and the isometry onto its range."""
    win = S.window(I)
    blocks = {N: (U, np.ones(len(E))) for N, (E, U) in win.items()}
    V, _ = S.isometry(I)
    return SectorOperator(S.region, S.X, blocks, hermitian=True), V


def apply_function(S: SpectralData, f) -> SectorOperator:
    def values_of(E):
        vals = np.asarray(f(E))
        if vals.shape != E.shape:
            vals = np.array([f(e) for e in E])
        if not np.all(np.isfinite(vals)):
            raise SpectralError("function returned non-finite values on the spectrum")
        return vals
    return S.function_operator(values_of)


def _resolvent_values(S: SpectralData, z: complex):
    E = S.eigenvalues()
    if len(E) and np.min(np.abs(E - z)) < 1e-12:
        raise SingularityError(f"z = {z} lies on the spectrum")
    return lambda e: 1.0 / (e - z)


def resolvent(S: SpectralData, z: complex) -> SectorOperator:
    return S.function_operator(_resolvent_values(S, z))


def resolvent_apply(S: SpectralData, z: complex, v: np.ndarray) -> np.ndarray:
    return resolvent(S, z).apply(v)


def evolution(S: SpectralData, t: float) -> SectorOperator:
    """``exp(-i t H)``."""
    return S.function_operator(lambda E: np.exp(-1j * t * E))


def heisenberg(S: SpectralData, T: BlockOperator, t: float) -> BlockOperator:
    """``exp(itH) T exp(-itH)``."""
    if t == 0:
        return T
    return Product([evolution(S, -t), T, evolution(S, t)])


def duhamel_kernel(E: np.ndarray, t: float, scale: float) -> np.ndarray:
    """``int_0^t exp(i s (E_m - E_n)) ds`` for all pairs."""
    w = E[:, None] - E[None, :]
    small = np.abs(w) < DEGENERATE_GAP * max(1.0, scale)
    safe = np.where(small, 1.0, w)
    out = (np.exp(1j * t * safe) - 1.0) / (1j * safe)
    return np.where(small, t, out)


def sector_matrix(D: BlockOperator, X: ChainRegion, N: int, chunk: int = 256) -> np.ndarray:
    """Block of a number-conserving ``D`` supported in ``X`` between the
    ``N``-particle configurations of ``X`` (vacuum elsewhere)."""
    idx = sector_states(X.length, N)
    rows = idx << (X.lo - D.region.lo)
    out = None
    for s in range(0, len(idx), chunk):
        n = min(chunk, len(idx) - s)
        cols = np.zeros((D.dim, n))
        cols[rows[s:s + n], np.arange(n)] = 1.0
        res = D.apply(cols)[rows]
        if out is None:
            out = np.zeros((len(idx), len(idx)), dtype=res.dtype)
        out[:, s:s + n] = res
    return out


def duhamel_integral(S: SpectralData, D: BlockOperator, t: float) -> BlockOperator:
    """``int_0^t exp(isH) D exp(-isH) ds`` in the eigenbasis; ``D`` must live on ``S.X``."""
    if not S.complete:
        raise SpectralError("Duhamel integrals need the complete spectrum")
    if not set(D.support.sites()) <= set(S.X):
        raise OperatorError(f"support {D.support.sites()} not inside {S.X.to_str()}")
    scale = S.norm()
    m = S.X.length
    if D.number_conserving:
        blocks = {}
        for N, (E, U) in S.sectors.items():
            Dn = U.conj().T @ sector_matrix(D, S.X, N) @ U
            blocks[N] = U @ (Dn * duhamel_kernel(E, t, scale)) @ U.conj().T
        return SectorOperator(S.region, S.X, blocks)
    DX = D.local_matrix(S.X)
    Ufull = np.zeros((1 << m, 1 << m), dtype=complex)
    Eall = np.zeros(1 << m)
    col = 0
    for N in sorted(S.sectors):
        E, U = S.sectors[N]
        Ufull[sector_states(m, N), col:col + len(E)] = U
        Eall[col:col + len(E)] = E
        col += len(E)
    Dn = Ufull.conj().T @ DX @ Ufull
    return LocalDense(S.region, S.X, Ufull @ (Dn * duhamel_kernel(Eall, t, scale)) @ Ufull.conj().T)


# --- smooth filters -------------------------------------------------------

@lru_cache(maxsize=None)
def _g_polys(nmax: int) -> tuple:
    # derivatives of exp(-1/x) are P_k(1/x) exp(-1/x) with P_{k+1} = y^2 (P_k - P_k')
    polys = [np.poly1d([1.0])]
    y2 = np.poly1d([1.0, 0.0, 0.0])
    for _ in range(nmax):
        P = polys[-1]
        polys.append(y2 * (P - P.deriv()))
    return tuple(polys)


def _g_taylor(x: np.ndarray, nmax: int, sign: float) -> np.ndarray:
    """Taylor coefficients g^(k)(x)/k! (sign=-1 gives those of x -> g(1-x))."""
    out = np.zeros((nmax + 1, len(x)))
    ok = x > 1.0 / 700.0
    if not np.any(ok):
        return out
    xs = x[ok]
    y = 1.0 / xs
    e = np.exp(-y)
    for k, P in enumerate(_g_polys(nmax)):
        out[k, ok] = (sign ** k) * P(y) * e / math.factorial(k)
    return out


def step_derivatives(x, nmax: int) -> np.ndarray:
    """Derivatives ``0..nmax`` of the smooth step ``s(x) = g(x)/(g(x)+g(1-x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((nmax + 1, len(x)))
    out[0, x >= 1] = 1.0
    mid = (x > 0) & (x < 1)
    if np.any(mid):
        xm = x[mid]
        a = _g_taylor(xm, nmax, 1.0)
        b = _g_taylor(1.0 - xm, nmax, -1.0)
        d = a + b
        s = np.zeros_like(a)
        for k in range(nmax + 1):
            acc = a[k] - sum(d[j] * s[k - j] for j in range(1, k + 1))
            s[k] = acc / d[0]
        for k in range(nmax + 1):
            out[k, mid] = s[k] * math.factorial(k)
    return out


class SmoothFilter:
    """Smooth cutoff equal to 1 on ``[0, (q+3/4)u]`` and 0 outside ``(-1, (q+7/8)u)``.

    With ``t != 0`` the filter is multiplied by ``exp(itx)``.
    """

    def __init__(self, q: float, delta: float, t: float = 0.0):
        if not delta > 1:
            raise ModelError("anisotropy must exceed 1")
        self.q = q
        self.delta = delta
        self.u = 1.0 - 1.0 / delta
        self.t = t
        self.plateau = (0.0, (q + 0.75) * self.u)
        self.knots = (-1.0, 0.0, self.plateau[1], (q + 0.875) * self.u)

    @property
    def support(self):
        return self.knots[0], self.knots[3]

    @property
    def breakpoints(self):
        return self.knots

    @property
    def scale(self) -> float:
        # narrowest transition; sets the imaginary extent of the extension
        return min(1.0, self.knots[3] - self.knots[2])

    def with_time(self, t: float) -> "SmoothFilter":
        return SmoothFilter(self.q, self.delta, t)

    def _psi_derivatives(self, x: np.ndarray, nmax: int) -> np.ndarray:
        a, b = self.knots[2], self.knots[3]
        w = b - a
        out = np.zeros((nmax + 1, len(x)))
        out[0, (x >= 0) & (x <= a)] = 1.0
        left = (x > -1) & (x < 0)
        if np.any(left):
            out[:, left] = step_derivatives(x[left] + 1.0, nmax)
        right = (x > a) & (x < b)
        if np.any(right):
            sd = step_derivatives((x[right] - a) / w, nmax)
            out[:, right] = -sd / (w ** np.arange(nmax + 1))[:, None]
            out[0, right] += 1.0
        return out

    def derivatives(self, x, nmax: int) -> np.ndarray:
        """Rows ``k = 0..nmax`` hold the ``k``-th derivative at the points ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        psi = self._psi_derivatives(x, nmax)
        if self.t == 0:
            return psi
        ph = np.exp(1j * self.t * x)
        out = np.zeros((nmax + 1, len(x)), dtype=complex)
        for k in range(nmax + 1):
            for j in range(k + 1):
                out[k] += math.comb(k, j) * psi[j] * (1j * self.t) ** (k - j)
            out[k] *= ph
        return out

    def derivative(self, x, order: int = 0):
        return self.derivatives(x, order)[order]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.derivatives(x.ravel(), 0)[0].reshape(x.shape)


def smooth_filter(q: float, delta: float) -> SmoothFilter:
    return SmoothFilter(q, delta)


# --- Helffer-Sjostrand ----------------------------------------------------

_GL_LO = np.polynomial.legendre.leggauss(7)
_GL_HI = np.polynomial.legendre.leggauss(12)


def _cutoff(y: np.ndarray, c: float):
    """``chi(y)`` equal to 1 for ``|y| <= c/2`` and 0 for ``|y| >= c``, with derivative."""
    h = c / 2
    ay = np.abs(y)
    sd = step_derivatives((ay - h) / h, 1)
    return 1.0 - sd[0], -np.sign(y) * sd[1] / h


def _rect_rules(f, E, rects: np.ndarray, order: int, c: float, rule) -> np.ndarray:
    """Tensor Gauss-Legendre integrals over a batch of cells; shape ``(cells, len(E))``."""
    nodes, weights = rule
    x0, x1, y0, y1 = rects.T
    xs = 0.5 * (x1 - x0)[:, None] * nodes + 0.5 * (x1 + x0)[:, None]
    ys = 0.5 * (y1 - y0)[:, None] * nodes + 0.5 * (y1 + y0)[:, None]
    jac = 0.25 * (x1 - x0) * (y1 - y0)
    k, p = xs.shape
    der = f.derivatives(xs.ravel(), order + 1).reshape(order + 2, k, p)
    chi, dchi = _cutoff(ys.ravel(), c)
    chi, dchi = chi.reshape(k, p), dchi.reshape(k, p)
    iy = 1j * ys
    powers = np.array([iy ** r / math.factorial(r) for r in range(order + 1)])
    F = np.einsum("rkx,rky->kxy", der[:order + 1], powers)
    G = (der[order + 1][:, :, None] * (powers[order] * chi)[:, None, :]
         + 1j * F * dchi[:, None, :])
    G = G * np.outer(weights, weights)[None] * jac[:, None, None]
    z = xs[:, :, None] + iy[:, None, :]
    inv = 1.0 / (E[None, :, None, None] - z[:, None, :, :])
    return np.einsum("kxy,kexy->ke", G, inv) / (2 * math.pi)


def hs_values(E, f, order: int = 4, tol: float = 1e-9, max_cells: int = 400000,
              batch: int = 256, uniform: int | None = None, strip: float = 0.0) -> np.ndarray:
    """Scalar Helffer-Sjostrand approximations of ``f(E)`` for an array of energies.

    Cells of an adaptive quadtree over ``support x [-c, c]`` are split where a
    12-point and a 7-point tensor Gauss rule disagree, until the summed
    disagreement drops below ``tol``.  With ``uniform=k`` every initial cell
    is instead cut into ``2**k x 2**k`` pieces and no adaptivity is used.
    A positive ``strip`` leaves out ``|y| < strip``; the omitted part is of
    size ``strip**order``, which is how the extension order shows up.
    """
    if order < 1:
        raise ValueError("extension order must be at least 1")
    E = np.asarray(E, dtype=float)
    if len(E) == 0:
        return np.zeros(0, dtype=complex)
    lo, hi = f.support
    c = getattr(f, "scale", 1.0)
    xs = sorted(set([lo, hi] + [b for b in getattr(f, "breakpoints", ()) if lo < b < hi]
                    + [e for e in E if lo < e < hi]))
    if strip > 0:
        ys = sorted({-c, -c / 2, -strip, strip, c / 2, c})
    else:
        ys = [-c, -c / 2, 0.0, c / 2, c]
    cells = np.array([(xs[i], xs[i + 1], ys[j], ys[j + 1])
                      for i in range(len(xs) - 1) if xs[i + 1] > xs[i]
                      for j in range(len(ys) - 1)
                      if not (strip > 0 and ys[j] >= -strip and ys[j + 1] <= strip)])

    def evaluate(rects):
        vals, errs = [], []
        for s in range(0, len(rects), batch):
            chunk = rects[s:s + batch]
            qh = _rect_rules(f, E, chunk, order, c, _GL_HI)
            ql = _rect_rules(f, E, chunk, order, c, _GL_LO)
            vals.append(qh)
            errs.append(np.max(np.abs(qh - ql), axis=1))
        return np.concatenate(vals), np.concatenate(errs)

    if uniform is not None:
        for _ in range(uniform):
            x0, x1, y0, y1 = cells.T
            xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            cells = np.concatenate([np.stack([a, b, cc, d], axis=1)
                                    for a, b in ((x0, xm), (xm, x1))
                                    for cc, d in ((y0, ym), (ym, y1))])
        return sum(_rect_rules(f, E, cells[s:s + batch], order, c, _GL_LO).sum(axis=0)
                   for s in range(0, len(cells), batch))

    vals, errs = evaluate(cells)
    done = np.zeros(len(E), dtype=complex)
    count = len(cells)
    while True:
        total_err = errs.sum()
        if total_err <= tol:
            break
        if count > max_cells:
            raise HSConvergenceError(f"quadrature did not reach {tol:g} "
                                     f"(estimate {total_err:.2e}) within {max_cells} cells")
        split = errs >= max(0.05 * errs.max(), tol / (4 * len(errs)))
        # cells that are left alone and already negligible are retired
        retire = ~split & (errs < tol * 1e-3 / max(1, len(errs)))
        done += vals[retire].sum(axis=0)
        keep = ~split & ~retire
        tol -= errs[retire].sum()
        parents = cells[split]
        x0, x1, y0, y1 = parents.T
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        children = np.concatenate([np.stack([a, b, cc, d], axis=1)
                                   for a, b in ((x0, xm), (xm, x1))
                                   for cc, d in ((y0, ym), (ym, y1))])
        cv, ce = evaluate(children)
        cells = np.concatenate([cells[keep], children])
        vals = np.concatenate([vals[keep], cv])
        errs = np.concatenate([errs[keep], ce])
        count += len(children)
    return done + vals.sum(axis=0)


def hs_apply(K, f, order: int = 4, tol: float = 1e-9, uniform: int | None = None,
             strip: float = 0.0):
    """``f(K)`` through the Helffer-Sjostrand formula with an almost analytic
    extension of the given order.

    ``K`` is either a ``SpectralData`` (returns a ``SectorOperator``) or a
    Hermitian matrix (returns a matrix).
    """
    if isinstance(K, SpectralData):
        E = K.eigenvalues()
        uniq = np.unique(np.round(E, 13))
        vals = hs_values(uniq, f, order, tol, uniform=uniform, strip=strip)
        lookup = lambda e: vals[np.clip(np.searchsorted(uniq, np.round(e, 13)), 0, len(uniq) - 1)]
        return K.function_operator(lookup)
    K = np.asarray(K)
    if not np.allclose(K, K.conj().T, atol=1e-12):
        raise OperatorError("hs_apply needs a Hermitian matrix")
    E, U = np.linalg.eigh(K)
    vals = hs_values(E, f, order, tol, uniform=uniform, strip=strip)
    return (U * vals) @ U.conj().T


def compressed_matrix(V: np.ndarray, X) -> np.ndarray:
    """``V^* X V`` for an ambient isometry ``V``."""
    if V.shape[1] == 0:
        return np.zeros((0, 0))
    XV = X.apply(V) if isinstance(X, BlockOperator) else np.asarray(X) @ V
    return V.conj().T @ XV


def compressed_norm(P, X) -> float:
    """``||P X P||`` computed on the range of ``P``.

    ``P`` is an isometry ``V`` or a ``(projection, V)`` pair.
    """
    V = P[1] if isinstance(P, tuple) else P
    if V.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(compressed_matrix(V, X), 2))
