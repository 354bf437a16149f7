"""Matrix-free operators on the configuration space of a chain region.

Every operator acts on full vectors of length ``2**n`` (``n`` the number of
sites of its ambient region), indexed by configuration bitmask.  An operator
supported on a subinterval ``X`` acts by viewing the state as a
``(2**(n-p-m), 2**m, 2**p)`` array, ``p`` being the offset of ``X`` and ``m``
its length, and contracting the middle axis.  Nothing of size
``2**n x 2**n`` is ever formed unless ``to_dense`` is requested.
"""
from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp

from .basis import popcounts, sector_states
from .geometry import ChainRegion, SiteSet

HERMITIAN_TOL = 1e-12


class OperatorError(ValueError):
    pass


def mask_in(region: ChainRegion, S: SiteSet) -> int:
    """Bitmask of ``S`` relative to ``region``; ``S`` must lie inside it."""
    if S.region == region:
        return S.mask
    mask = 0
    for x in S.sites():
        if x not in region:
            raise OperatorError(f"site {x} outside region {region.to_str()}")
        mask |= 1 << (x - region.lo)
    return mask


def _as2d(v):
    v = np.asarray(v)
    if v.ndim == 1:
        return v[:, None], True
    return v, False


def _split(v2, region: ChainRegion, X: ChainRegion):
    p = X.lo - region.lo
    m = X.length
    n = region.length
    return v2.reshape(1 << (n - p - m), 1 << m, (1 << p) * v2.shape[1])


def embed_vectors(region: ChainRegion, X: ChainRegion, W: np.ndarray) -> np.ndarray:
    """Columns ``W (x) vacuum`` as full vectors of ``region``."""
    W2, flat = _as2d(W)
    out = np.zeros((1 << region.length, W2.shape[1]), dtype=np.result_type(W2, float))
    out[np.arange(1 << X.length) << (X.lo - region.lo)] = W2
    return out[:, 0] if flat else out


def restrict_vectors(region: ChainRegion, X: ChainRegion, V: np.ndarray, check: bool = True):
    """Inverse of ``embed_vectors``; optionally verifies nothing lives outside ``X``."""
    V2, flat = _as2d(V)
    rows = np.arange(1 << X.length) << (X.lo - region.lo)
    out = V2[rows]
    if check:
        total = np.linalg.norm(V2)
        leak = np.sqrt(max(total ** 2 - np.linalg.norm(out) ** 2, 0.0))
        if leak > 1e-10 * max(1.0, total):
            raise OperatorError("operator moved weight outside the local region")
    return out[:, 0] if flat else out


class BlockOperator:
    """Base class: an operator on the configuration space of ``region``."""

    kind = "matrix-free"

    def __init__(self, region: ChainRegion, support: SiteSet, number_conserving: bool = True,
                 hermitian: bool = False):
        self.region = region
        self.support = support
        self.number_conserving = number_conserving
        self.hermitian = hermitian

    @property
    def dim(self) -> int:
        return 1 << self.region.length

    def _apply(self, v2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, v):
        v2, flat = _as2d(v)
        if v2.shape[0] != self.dim:
            raise OperatorError(f"vector length {v2.shape[0]} != {self.dim}")
        out = self._apply(np.ascontiguousarray(v2))
        return out[:, 0] if flat else out

    def adjoint(self) -> "BlockOperator":
        raise NotImplementedError

    @property
    def H(self) -> "BlockOperator":
        return self.adjoint()

    def to_dense(self) -> np.ndarray:
        if self.region.length > 13:
            raise OperatorError("refusing to densify more than 13 sites")
        return self.apply(np.eye(self.dim))

    def sector_block(self, N: int) -> np.ndarray:
        """Dense block between ``N``-particle configurations."""
        idx = sector_states(self.region.length, N)
        cols = np.zeros((self.dim, len(idx)))
        cols[idx, np.arange(len(idx))] = 1.0
        return self.apply(cols)[idx]

    def local_matrix(self, X: ChainRegion) -> np.ndarray:
        """The matrix ``T_X`` with ``self = T_X (x) I``; needs support inside ``X``."""
        if not set(self.support.sites()) <= set(X):
            raise OperatorError(f"support {self.support.sites()} not inside {X.to_str()}")
        E = embed_vectors(self.region, X, np.eye(1 << X.length))
        return restrict_vectors(self.region, X, self.apply(E))

    def __matmul__(self, other):
        if isinstance(other, BlockOperator):
            return Product([self, other])
        return self.apply(other)

    def __add__(self, other):
        if isinstance(other, numbers.Number):
            return Sum([self, Identity(self.region)], [1.0, other])
        return Sum([self, other])

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, numbers.Number):
            return Sum([self, Identity(self.region)], [1.0, -other])
        return Sum([self, other], [1.0, -1.0])

    def __neg__(self):
        return Sum([self], [-1.0])

    def __mul__(self, c):
        if not isinstance(c, numbers.Number):
            return NotImplemented
        return Sum([self], [c])

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.region.to_str()}, support={self.support.sites()})"


def _union(region, ops) -> SiteSet:
    mask = 0
    for op in ops:
        mask |= op.support.mask
    return SiteSet(region, mask)


def _check_regions(ops):
    region = ops[0].region
    for op in ops[1:]:
        if op.region != region:
            raise OperatorError("operators live on different regions")
    return region


class Identity(BlockOperator):
    kind = "diagonal"

    def __init__(self, region: ChainRegion):
        super().__init__(region, region.empty(), True, True)

    def _apply(self, v2):
        return v2.copy()

    def adjoint(self):
        return self


class Zero(BlockOperator):
    kind = "diagonal"

    def __init__(self, region: ChainRegion):
        super().__init__(region, region.empty(), True, True)

    def _apply(self, v2):
        return np.zeros_like(v2)

    def adjoint(self):
        return self


class Diagonal(BlockOperator):
    """Diagonal in the configuration basis; ``values[mask]`` is the eigenvalue."""

    kind = "diagonal"

    def __init__(self, region: ChainRegion, values: np.ndarray, support: SiteSet | None = None):
        values = np.asarray(values)
        if values.shape != (1 << region.length,):
            raise OperatorError("diagonal has the wrong length")
        herm = not np.iscomplexobj(values) or np.all(np.abs(values.imag) <= HERMITIAN_TOL)
        super().__init__(region, support if support is not None else region.full(), True, herm)
        self.values = values

    def _apply(self, v2):
        return v2 * self.values[:, None]

    def adjoint(self):
        if self.hermitian or not np.iscomplexobj(self.values):
            return self
        return Diagonal(self.region, self.values.conj(), self.support)


class LocalDense(BlockOperator):
    """``M (x) I`` for a dense matrix ``M`` on the subinterval ``X``."""

    kind = "general-dense-by-sector-pair"

    def __init__(self, region: ChainRegion, X: ChainRegion, M: np.ndarray):
        if not region.contains_region(X):
            raise OperatorError(f"{X.to_str()} not inside {region.to_str()}")
        M = np.asarray(M)
        if M.shape != (1 << X.length, 1 << X.length):
            raise OperatorError("local matrix shape mismatch")
        pc = popcounts(X.length)
        nz = np.abs(M) > 0
        conserving = not np.any(nz & (pc[:, None] != pc[None, :]))
        herm = bool(np.allclose(M, M.conj().T, rtol=0, atol=HERMITIAN_TOL))
        super().__init__(region, region.interval(X.lo, X.hi), conserving, herm)
        self.X = X
        self.M = M

    def _apply(self, v2):
        v3 = _split(v2, self.region, self.X)
        return np.matmul(self.M, v3).reshape(v2.shape[0], v2.shape[1])

    def adjoint(self):
        if self.hermitian:
            return self
        return LocalDense(self.region, self.X, self.M.conj().T)


class LocalLowRank(BlockOperator):
    """``W C W^* (x) I`` on the subinterval ``X`` (``W`` need not be orthonormal)."""

    def __init__(self, region: ChainRegion, X: ChainRegion, W: np.ndarray, C: np.ndarray,
                 number_conserving: bool = True):
        if W.shape[0] != 1 << X.length or C.shape != (W.shape[1], W.shape[1]):
            raise OperatorError("low-rank factor shapes mismatch")
        super().__init__(region, region.interval(X.lo, X.hi), number_conserving, False)
        self.X = X
        self.W = W
        self.C = C

    def _apply(self, v2):
        if self.W.shape[1] == 0:
            return np.zeros(v2.shape, dtype=np.result_type(v2, self.W, self.C))
        v3 = _split(v2, self.region, self.X)
        inner = np.matmul(self.W.conj().T, v3)
        out = np.matmul(self.W, np.matmul(self.C, inner))
        return out.reshape(v2.shape[0], v2.shape[1])

    def adjoint(self):
        return LocalLowRank(self.region, self.X, self.W, self.C.conj().T, self.number_conserving)


class SectorOperator(BlockOperator):
    """Number-conserving operator on ``X`` given sector by sector.

    A block is either a dense or sparse matrix over the sector basis of ``X``,
    or a pair ``(U, f)`` meaning ``U diag(f) U^*``.  Missing sectors act as zero.
    """

    kind = "sector-dense"

    def __init__(self, region: ChainRegion, X: ChainRegion, blocks: dict, hermitian: bool = False,
                 check_hermitian: bool = False):
        if not region.contains_region(X):
            raise OperatorError(f"{X.to_str()} not inside {region.to_str()}")
        super().__init__(region, region.interval(X.lo, X.hi), True, hermitian)
        self.X = X
        self.blocks = blocks
        if check_hermitian:
            for N, B in blocks.items():
                if isinstance(B, tuple):
                    continue
                diff = B - B.conj().T
                err = abs(diff).max() if sp.issparse(diff) else np.max(np.abs(diff), initial=0.0)
                if err > HERMITIAN_TOL:
                    raise OperatorError(f"sector {N} block not Hermitian (error {err:.3e})")

    def _apply(self, v2):
        v3 = _split(v2, self.region, self.X)
        kinds = [B for B in self.blocks.values()]
        dtype = np.result_type(v2, *[b[0] if isinstance(b, tuple) else b.dtype for b in kinds],
                               *[b[1] for b in kinds if isinstance(b, tuple)])
        out = np.zeros(v3.shape, dtype=dtype)
        h, _, l = v3.shape
        for N, B in self.blocks.items():
            idx = sector_states(self.X.length, N)
            sub = v3[:, idx, :]
            if isinstance(B, tuple):
                U, f = B
                if U.shape[1] == 0:
                    continue
                res = np.matmul(U, f[:, None] * np.matmul(U.conj().T, sub))
            elif sp.issparse(B):
                flat = sub.transpose(1, 0, 2).reshape(len(idx), h * l)
                res = (B @ flat).reshape(len(idx), h, l).transpose(1, 0, 2)
            else:
                res = np.matmul(B, sub)
            out[:, idx, :] = res
        return out.reshape(v2.shape[0], v2.shape[1])

    def adjoint(self):
        if self.hermitian:
            return self
        blocks = {}
        for N, B in self.blocks.items():
            if isinstance(B, tuple):
                blocks[N] = (B[0], np.conj(B[1]))
            else:
                blocks[N] = B.conj().T
        return SectorOperator(self.region, self.X, blocks)

    def dense_block(self, N: int) -> np.ndarray:
        B = self.blocks.get(N)
        d = len(sector_states(self.X.length, N))
        if B is None:
            return np.zeros((d, d))
        if isinstance(B, tuple):
            U, f = B
            return (U * f) @ U.conj().T
        return B.toarray() if sp.issparse(B) else np.asarray(B)


class Sum(BlockOperator):
    def __init__(self, terms: list[BlockOperator], coeffs=None):
        if not terms:
            raise OperatorError("empty sum")
        region = _check_regions(terms)
        coeffs = [1.0] * len(terms) if coeffs is None else list(coeffs)
        herm = all(t.hermitian for t in terms) and all(np.isreal(c) for c in coeffs)
        super().__init__(region, _union(region, terms), all(t.number_conserving for t in terms),
                         herm)
        self.terms = list(terms)
        self.coeffs = coeffs

    def _apply(self, v2):
        out = None
        for c, t in zip(self.coeffs, self.terms):
            if c == 0:
                continue
            r = t._apply(v2)
            if c != 1:
                r = c * r
            out = r if out is None else out + r
        return np.zeros_like(v2) if out is None else out

    def adjoint(self):
        return Sum([t.adjoint() for t in self.terms], [np.conj(c) for c in self.coeffs])


class Product(BlockOperator):
    """``factors[0] @ factors[1] @ ...`` (the last factor acts first)."""

    def __init__(self, factors: list[BlockOperator]):
        if not factors:
            raise OperatorError("empty product")
        region = _check_regions(factors)
        flat = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, Product) else [f])
        super().__init__(region, _union(region, flat), all(f.number_conserving for f in flat),
                         False)
        self.factors = flat

    def _apply(self, v2):
        for f in reversed(self.factors):
            v2 = f._apply(v2)
        return v2

    def adjoint(self):
        return Product([f.adjoint() for f in reversed(self.factors)])


def commutator(a: BlockOperator, b: BlockOperator) -> BlockOperator:
    return Sum([Product([a, b]), Product([b, a])], [1.0, -1.0])


def operator_norm(op: BlockOperator, tol: float = 1e-8, restarts: int = 3, maxiter: int = 5000,
                  seed: int = 12345) -> float:
    """Largest singular value; dense for small regions, power iteration otherwise."""
    if op.region.length <= 10:
        return float(np.linalg.norm(op.to_dense(), 2))
    return power_norm(op.apply, op.adjoint().apply, op.dim, tol, restarts, maxiter, seed)


def power_norm(apply, apply_adj, dim: int, tol: float = 1e-8, restarts: int = 3,
               maxiter: int = 5000, seed: int = 12345) -> float:
    """Power iteration on ``X^* X`` with random restarts; returns ``||X||``."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(restarts):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        prev = 0.0
        for _ in range(maxiter):
            w = apply_adj(apply(v))
            nrm = np.linalg.norm(w)
            if nrm == 0:
                break
            v = w / nrm
            est = np.sqrt(nrm)
            if abs(est - prev) <= tol * max(est, 1e-300):
                prev = est
                break
            prev = est
        best = max(best, prev)
    return float(best)
