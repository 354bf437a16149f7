"""Canonical configuration basis and particle-number sectors.

A configuration is an integer bitmask relative to the left end of its region:
bit ``i - lo`` set means site ``i`` carries a particle (spin down).  Inside a
sector, states are listed in increasing bitmask order.

Local operators follow the same convention: a ``2**m x 2**m`` matrix on an
interval ``X`` of ``m`` sites is indexed by the local bitmask, bit ``j`` being
the ``j``-th site of ``X`` counted from the left.  Note that this is the
reverse of ``np.kron`` ordering, where the first factor is the most
significant digit; ``from_kron``/``to_kron`` convert between the two.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .geometry import ChainRegion, SiteSet, cluster_count_mask, components


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class Configuration:
    region: ChainRegion
    occ: int

    @property
    def particle_count(self) -> int:
        return bin(self.occ).count("1")

    @property
    def cluster_count(self) -> int:
        return cluster_count_mask(self.occ)

    def occupied(self) -> SiteSet:
        return SiteSet(self.region, self.occ)

    def __str__(self) -> str:
        return "".join("↓" if self.occ >> j & 1 else "." for j in range(self.region.length))


@lru_cache(maxsize=None)
def sector_states(length: int, n: int) -> np.ndarray:
    """Sorted bitmasks with ``n`` set bits among ``length`` bits (read-only)."""
    if not 0 <= n <= length:
        raise BasisError(f"particle number {n} outside [0, {length}]")
    if n == 0:
        out = np.zeros(1, dtype=np.int64)
    else:
        out = np.array(sorted(sum(1 << j for j in c) for c in combinations(range(length), n)),
                       dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def popcounts(length: int) -> np.ndarray:
    """Particle number of every bitmask ``0 .. 2**length - 1``."""
    idx = np.arange(1 << length, dtype=np.int64)
    out = np.zeros(1 << length, dtype=np.int64)
    for j in range(length):
        out += (idx >> j) & 1
    out.setflags(write=False)
    return out


class SectorBasis:
    """The ``N``-particle configurations of a region."""

    def __init__(self, region: ChainRegion, n_particles: int):
        self.region = region
        self.n_particles = n_particles
        self.masks = sector_states(region.length, n_particles)

    def __len__(self) -> int:
        return len(self.masks)

    @property
    def dim(self) -> int:
        return len(self.masks)

    @property
    def states(self) -> list[Configuration]:
        return [Configuration(self.region, int(m)) for m in self.masks]

    def index_of(self, config) -> int:
        occ = config.occ if isinstance(config, Configuration) else int(config)
        i = int(np.searchsorted(self.masks, occ))
        if i >= len(self.masks) or self.masks[i] != occ:
            raise BasisError(f"configuration {occ:b} not in sector N={self.n_particles}")
        return i

    def indices(self, masks: np.ndarray) -> np.ndarray:
        """Vectorized ``index_of``; masks must belong to the sector."""
        return np.searchsorted(self.masks, masks)


def sector_basis(region: ChainRegion, N: int) -> SectorBasis:
    if not 0 <= N <= region.length:
        raise BasisError(f"particle number {N} outside [0, {region.length}]")
    return SectorBasis(region, N)


def cluster_count(c: Configuration) -> int:
    return c.cluster_count


def cluster_count_reference(c: Configuration) -> int:
    return len(components(c.region, c.occupied()))


def cluster_counts(masks: np.ndarray) -> np.ndarray:
    """Vectorized cluster counting for bitmask arrays."""
    starts = masks & ~(masks << 1)
    out = np.zeros(masks.shape, dtype=np.int64)
    while np.any(starts):
        out += starts & 1
        starts = starts >> 1
    return out


def adjacent_pairs(masks: np.ndarray) -> np.ndarray:
    """Number of occupied nearest-neighbour pairs."""
    pairs = masks & (masks >> 1)
    out = np.zeros(masks.shape, dtype=np.int64)
    while np.any(pairs):
        out += pairs & 1
        pairs = pairs >> 1
    return out


def occupation_matrix(masks: np.ndarray, length: int) -> np.ndarray:
    """``(len(masks), length)`` 0/1 matrix of site occupations."""
    return ((masks[:, None] >> np.arange(length)) & 1).astype(float)


def field_sum(c: Configuration, omega) -> float:
    """Sum of the random field over occupied sites."""
    vals = getattr(omega, "omega", omega)
    return float(sum(vals[j] for j in range(c.region.length) if c.occ >> j & 1))


def field_sums(masks: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return occupation_matrix(masks, len(omega)) @ np.asarray(omega, dtype=float)


def kron_permutation(m: int) -> np.ndarray:
    """``perm[k]`` = local bitmask of the ``k``-th Kronecker basis vector."""
    k = np.arange(1 << m)
    out = np.zeros_like(k)
    for j in range(m):
        out |= ((k >> (m - 1 - j)) & 1) << j
    return out


def from_kron(T: np.ndarray) -> np.ndarray:
    """Reorder a matrix given in ``np.kron`` site order to bitmask order."""
    m = int(np.log2(T.shape[0]))
    perm = kron_permutation(m)
    out = np.empty_like(T)
    out[np.ix_(perm, perm)] = T
    return out


def to_kron(T: np.ndarray) -> np.ndarray:
    m = int(np.log2(T.shape[0]))
    perm = kron_permutation(m)
    return T[np.ix_(perm, perm)]


def embed_local(T_local: np.ndarray, X: ChainRegion, region: ChainRegion):
    """Embed a local matrix on ``X`` as ``T (x) I`` on the region."""
    from .operators import LocalDense

    T_local = np.asarray(T_local)
    if not region.contains_region(X):
        raise BasisError(f"support {X.to_str()} not inside {region.to_str()}")
    if T_local.shape != (1 << X.length, 1 << X.length):
        raise BasisError(f"local matrix shape {T_local.shape} does not match {X.length} sites")
    return LocalDense(region, X, T_local)
