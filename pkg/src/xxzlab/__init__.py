"""Exact-diagonalization toolkit for localization in the random XXZ chain.

Submodules: ``geometry`` (sites and fattened sets), ``basis`` (configuration
bitmasks), ``operators`` (matrix-free block operators), ``hamiltonian``,
``spectral`` (eigensystems and functional calculus), ``quasiloc``
(per-sample statistics), ``approximant`` (localized Heisenberg evolutions),
``ensemble`` (seeded disorder averages) and ``cli``.
"""
from .geometry import ChainRegion, SiteSet, fatten, boundary
from .hamiltonian import ModelParams, DisorderSample, EnergyIntervals, build_hamiltonian
from .sample import SampleContext
from .approximant import GeometryPolicy, build_approximant, build_approximant_top
from .ensemble import EnsembleConfig, run_experiment

__version__ = "0.1.0"

__all__ = ["ChainRegion", "SiteSet", "fatten", "boundary", "ModelParams", "DisorderSample",
           "EnergyIntervals", "build_hamiltonian", "SampleContext", "GeometryPolicy",
           "build_approximant", "build_approximant_top", "EnsembleConfig", "run_experiment"]
