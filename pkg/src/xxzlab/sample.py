"""Per-sample operator and eigensystem cache."""
from __future__ import annotations

from .geometry import ChainRegion
from .hamiltonian import DisorderSample, ModelParams, build_modified, build_subchain
from .spectral import SpectralData, diagonalize


class SampleContext:
    """Operators of one disorder sample on the chain ``region``.

    Hamiltonians of subintervals and their (possibly windowed) eigensystems
    are memoized; nothing is shared between samples.
    """

    def __init__(self, params: ModelParams, omega: DisorderSample, region: ChainRegion | None = None):
        self.params = params
        self.omega = omega
        self.region = region or omega.region
        self._ham: dict = {}
        self._spec: dict = {}
        self._mod: dict = {}

    @property
    def u(self) -> float:
        return self.params.u

    def hamiltonian(self, X: ChainRegion | None = None):
        X = X or self.region
        if X not in self._ham:
            self._ham[X] = build_subchain(self.params, self.omega, X, ambient=self.region)
        return self._ham[X]

    def spectrum(self, X: ChainRegion | None = None, cutoff: float | None = None) -> SpectralData:
        """Eigensystem of ``H^X``; with a cutoff only the part below it."""
        X = X or self.region
        full = self._spec.get((X, None))
        if full is not None:
            return full
        if cutoff is not None:
            for (Y, c), S in self._spec.items():
                if Y == X and c is not None and c >= cutoff:
                    return S
        key = (X, cutoff)
        if key not in self._spec:
            self._spec[key] = diagonalize(self.hamiltonian(X), cutoff)
        return self._spec[key]

    def full_spectrum(self, X: ChainRegion | None = None) -> SpectralData:
        return self.spectrum(X, None)

    def modified(self, k: int, cutoff: float | None = None) -> SpectralData:
        key = (k, cutoff)
        if key not in self._mod:
            H = build_modified(self.params, self.omega, self.region, k)
            self._mod[key] = diagonalize(H, cutoff)
        return self._mod[key]
