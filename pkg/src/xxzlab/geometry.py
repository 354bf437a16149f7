"""Finite intervals of the integer chain and bitmask-encoded site sets.

A ``SiteSet`` stores its members as a Python integer bitmask relative to the
left end of its ``ChainRegion`` (site ``lo`` is bit 0).  All set operations
reduce to a handful of shifts and masks.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Iterable, Iterator

MAX_SITES = 64


class GeometryError(ValueError):
    """Raised for malformed regions or out-of-region queries."""


@dataclass(frozen=True, order=True)
class ChainRegion:
    lo: int
    hi: int

    def __post_init__(self):
        if self.hi < self.lo:
            raise GeometryError(f"empty region [{self.lo}, {self.hi}]")
        if self.hi - self.lo + 1 > MAX_SITES:
            raise GeometryError(f"region longer than {MAX_SITES} sites")

    @property
    def length(self) -> int:
        return self.hi - self.lo + 1

    @property
    def full_mask(self) -> int:
        return (1 << self.length) - 1

    def __contains__(self, x) -> bool:
        try:
            x = operator.index(x)
        except TypeError:
            return False
        return self.lo <= x <= self.hi

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi + 1))

    def __len__(self) -> int:
        return self.length

    def contains_region(self, other: "ChainRegion") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def full(self) -> "SiteSet":
        return SiteSet(self, self.full_mask)

    def empty(self) -> "SiteSet":
        return SiteSet(self, 0)

    def interval(self, lo: int, hi: int) -> "SiteSet":
        """Sites of ``[lo, hi]`` intersected with the region."""
        lo, hi = max(lo, self.lo), min(hi, self.hi)
        if hi < lo:
            return self.empty()
        return SiteSet(self, ((1 << (hi - lo + 1)) - 1) << (lo - self.lo))

    def sites(self, sites: Iterable[int]) -> "SiteSet":
        return SiteSet.from_sites(self, sites)

    def to_str(self) -> str:
        return f"{self.lo}:{self.hi}"

    @classmethod
    def parse(cls, text: str) -> "ChainRegion":
        """Parse ``"lo:hi"``; a bare integer ``L`` means ``1:L``."""
        text = text.strip()
        try:
            if ":" in text:
                lo, hi = text.split(":")
                return cls(int(lo), int(hi))
            return cls(1, int(text))
        except ValueError as exc:
            raise GeometryError(f"cannot parse region {text!r}") from exc


@dataclass(frozen=True)
class SiteSet:
    region: ChainRegion
    mask: int

    def __post_init__(self):
        if self.mask < 0 or self.mask & ~self.region.full_mask:
            raise GeometryError("mask has bits outside the region")

    @classmethod
    def from_sites(cls, region: ChainRegion, sites: Iterable[int]) -> "SiteSet":
        mask = 0
        for x in sites:
            x = int(x)
            if x not in region:
                raise GeometryError(f"site {x} outside region {region.to_str()}")
            mask |= 1 << (x - region.lo)
        return cls(region, mask)

    @classmethod
    def from_json(cls, region: ChainRegion, data) -> "SiteSet":
        return cls.from_sites(region, data)

    def to_json(self) -> list[int]:
        return self.sites()

    def sites(self) -> list[int]:
        out, m, x = [], self.mask, self.region.lo
        while m:
            if m & 1:
                out.append(x)
            m >>= 1
            x += 1
        return out

    def __iter__(self) -> Iterator[int]:
        return iter(self.sites())

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __bool__(self) -> bool:
        return self.mask != 0

    def __contains__(self, x) -> bool:
        return x in self.region and bool(self.mask >> (x - self.region.lo) & 1)

    def _check(self, other: "SiteSet"):
        if other.region != self.region:
            raise GeometryError("site sets live in different regions")

    def __or__(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        return SiteSet(self.region, self.mask | other.mask)

    def __and__(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        return SiteSet(self.region, self.mask & other.mask)

    def __sub__(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        return SiteSet(self.region, self.mask & ~other.mask)

    def complement(self) -> "SiteSet":
        return SiteSet(self.region, self.region.full_mask & ~self.mask)

    def issubset(self, other: "SiteSet") -> bool:
        self._check(other)
        return self.mask & ~other.mask == 0

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    @property
    def min(self) -> int:
        if not self.mask:
            raise GeometryError("empty set has no minimum")
        return self.region.lo + ((self.mask & -self.mask).bit_length() - 1)

    @property
    def max(self) -> int:
        if not self.mask:
            raise GeometryError("empty set has no maximum")
        return self.region.lo + self.mask.bit_length() - 1

    def is_interval(self) -> bool:
        if not self.mask:
            return False
        m = self.mask >> ((self.mask & -self.mask).bit_length() - 1)
        return m & (m + 1) == 0

    def hull(self) -> ChainRegion:
        return ChainRegion(self.min, self.max)

    def as_region(self) -> ChainRegion:
        if not self.is_interval():
            raise GeometryError("site set is not a nonempty interval")
        return self.hull()

    def within(self, region: ChainRegion) -> "SiteSet":
        """Intersect with ``region`` and re-express relative to it."""
        return SiteSet.from_sites(region, [x for x in self.sites() if x in region])

    def __repr__(self) -> str:
        return f"SiteSet({self.region.to_str()}, {self.sites()})"


def _shift_union(mask: int, s: int, full: int) -> int:
    # union of the mask shifted by -s..s, clipped to the region
    out = mask
    for _ in range(s):
        out |= (out << 1) | (out >> 1)
        out &= full
    return out


def dist_in(region: ChainRegion, x: int, M: SiteSet) -> float:
    """Distance from site ``x`` to ``M``; ``inf`` when ``M`` is empty."""
    if x not in region:
        raise GeometryError(f"site {x} outside region {region.to_str()}")
    if M.region != region:
        M = M.within(region)
    if M.is_empty:
        return math.inf
    return min(abs(x - y) for y in M.sites())


def set_distance(a: SiteSet, b: SiteSet) -> float:
    """Minimum distance between two site sets of the same region."""
    a._check(b)
    if a.is_empty or b.is_empty:
        return math.inf
    sb = b.sites()
    return min(min(abs(x - y) for y in sb) for x in a.sites())


def fatten(region: ChainRegion, M: SiteSet, s: int) -> SiteSet:
    """``{x : dist(x, M) <= s}`` for ``s >= 0``; ``M`` minus the ``|s|``-fattened
    complement for ``s < 0``."""
    if M.region != region:
        raise GeometryError("site set not expressed in this region")
    full = region.full_mask
    if s >= 0:
        if M.is_empty:
            return M
        return SiteSet(region, _shift_union(M.mask, s, full))
    comp = full & ~M.mask
    if comp == 0:
        return M
    return SiteSet(region, M.mask & ~_shift_union(comp, -s, full))


BOUNDARY_KINDS = ("outer", "inner", "both", "outer_layer", "inner_layer")


def boundary(region: ChainRegion, M: SiteSet, s: int, kind: str = "both") -> SiteSet:
    """Boundary sets of ``M``.

    ``outer``/``inner`` are the sites at distance exactly ``s`` from ``M`` (resp.
    inside ``M`` at distance exactly ``s`` from the complement).  ``both`` is the
    two-sided slab ``[M]_s \\ [M]_{-s}``.  The ``*_layer`` kinds are the full
    layers of width ``s``: ``[M]_s \\ M`` and ``M \\ [M]_{-s}``.
    """
    if s < 1:
        raise GeometryError("boundary width must be positive")
    if kind == "outer":
        return fatten(region, M, s) - fatten(region, M, s - 1)
    if kind == "inner":
        return fatten(region, M, -(s - 1)) - fatten(region, M, -s)
    if kind == "both":
        return fatten(region, M, s) - fatten(region, M, -s)
    if kind == "outer_layer":
        return fatten(region, M, s) - M
    if kind == "inner_layer":
        return M - fatten(region, M, -s)
    raise GeometryError(f"unknown boundary kind {kind!r}")


def edge_boundary(region: ChainRegion, M: SiteSet) -> list[tuple[int, int]]:
    """Nearest-neighbour bonds of the region with exactly one end in ``M``."""
    out = []
    for x in range(region.lo, region.hi):
        if (x in M) != (x + 1 in M):
            out.append((x, x + 1))
    return out


def components(region: ChainRegion, M: SiteSet) -> list[ChainRegion]:
    """Maximal runs of consecutive sites of ``M``, left to right."""
    out, start, prev = [], None, None
    for x in M.sites():
        if start is not None and x != prev + 1:
            out.append(ChainRegion(start, prev))
            start = None
        if start is None:
            start = x
        prev = x
    if start is not None:
        out.append(ChainRegion(start, prev))
    return out


def cluster_count_mask(mask: int) -> int:
    """Number of maximal runs of set bits."""
    return bin(mask & ~(mask << 1)).count("1")
