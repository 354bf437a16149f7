import numpy as np
import pytest

from xxzlab.basis import sector_states
from xxzlab.geometry import ChainRegion
from xxzlab.operators import (Diagonal, Identity, LocalDense, LocalLowRank, OperatorError,
                              Product, SectorOperator, Sum, Zero, commutator, embed_vectors,
                              operator_norm, power_norm, restrict_vectors)

REG = ChainRegion(1, 6)


def _local(rng, m):
    return rng.standard_normal((1 << m, 1 << m)) + 1j * rng.standard_normal((1 << m, 1 << m))


def test_local_dense_matches_kron(rng):
    X = ChainRegion(3, 4)
    M = _local(rng, 2)
    op = LocalDense(REG, X, M)
    # bitmask order: sites 1-2 low bits, 3-4 middle, 5-6 high bits
    ref = np.kron(np.kron(np.eye(4), M), np.eye(4))
    assert np.allclose(op.to_dense(), ref)
    assert np.allclose(op.local_matrix(X), M)
    assert op.support.sites() == [3, 4]


def test_low_rank_and_adjoint(rng):
    X = ChainRegion(2, 4)
    W = rng.standard_normal((8, 3))
    C = rng.standard_normal((3, 3))
    op = LocalLowRank(REG, X, W, C)
    assert np.allclose(op.local_matrix(X), W @ C @ W.T)
    assert np.allclose(op.adjoint().to_dense(), op.to_dense().conj().T)


def test_sum_product_commutator(rng):
    A = LocalDense(REG, ChainRegion(1, 2), _local(rng, 2))
    B = LocalDense(REG, ChainRegion(2, 3), _local(rng, 2))
    dA, dB = A.to_dense(), B.to_dense()
    assert np.allclose(Sum([A, B], [2.0, -1j]).to_dense(), 2 * dA - 1j * dB)
    assert np.allclose(Product([A, B]).to_dense(), dA @ dB)
    assert np.allclose(commutator(A, B).to_dense(), dA @ dB - dB @ dA)
    assert np.allclose((A @ B).to_dense(), dA @ dB)
    far = LocalDense(REG, ChainRegion(5, 6), _local(rng, 2))
    assert np.abs(commutator(A, far).to_dense()).max() < 1e-12


def test_trivial_operators():
    v = np.arange(64.0)
    assert np.array_equal(Identity(REG).apply(v), v)
    assert not np.any(Zero(REG).apply(v))
    d = Diagonal(REG, np.arange(64.0))
    assert np.allclose(d.apply(np.ones(64)), np.arange(64.0))
    with pytest.raises(OperatorError):
        Identity(REG).apply(np.ones(3))
    with pytest.raises(OperatorError):
        Sum([])


def test_sector_operator_blocks(rng):
    X = ChainRegion(1, 3)
    blocks = {N: np.diag(np.full(len(sector_states(3, N)), float(N))) for N in range(4)}
    op = SectorOperator(ChainRegion(1, 3), X, blocks, hermitian=True)
    assert np.allclose(np.diag(op.to_dense()), [bin(k).count("1") for k in range(8)])


def test_embed_restrict_and_leak(rng):
    X = ChainRegion(2, 3)
    W = rng.standard_normal((4, 2))
    V = embed_vectors(REG, X, W)
    assert np.allclose(restrict_vectors(REG, X, V), W)
    V[0b100000] = 1.0
    with pytest.raises(OperatorError):
        restrict_vectors(REG, X, V)


def test_norms(rng):
    M = _local(rng, 3)
    op = LocalDense(ChainRegion(1, 3), ChainRegion(1, 3), M)
    ref = np.linalg.norm(M, 2)
    assert abs(operator_norm(op) - ref) < 1e-10
    est = power_norm(lambda v: M @ v, lambda v: M.conj().T @ v, 8, tol=1e-12)
    assert abs(est - ref) < 1e-8 * ref
