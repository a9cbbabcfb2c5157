#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import numpy as np
import pytest
from scipy import sparse

from slflab import kernel
from slflab.scenario import GridSpec

GRID = GridSpec(5, 4, 1.0)
XI = np.array([[0.0, 0.0], [1.0, 3.0], [4.0, 0.0]])
XJ = np.array([[4.0, 3.0], [3.0, 0.0], [0.0, 2.0]])


def test_features():
    features = kernel.build_features(GRID, XI, XJ)
    assert (features.M, features.P) == (3, 20)
    np.testing.assert_allclose(features.c, [5.0, np.hypot(2, 3), np.hypot(4, 2)])
    phi = features.phi
    assert phi.shape == (60, 2)
    # link-major: the first P rows belong to the first link
    np.testing.assert_allclose(phi[:20, 0], 5.0)
    # detour through an endpoint is the direct length
    assert phi[0, 1] == pytest.approx(5.0)
    assert np.all(phi[:, 1] >= phi[:, 0] - 1e-12)
    with pytest.raises(ValueError):
        kernel.FeatureSet(np.ones(2), np.ones(5))


def test_rbf():
    assert kernel.rbf([0.0, 0.0], [0.0, 0.0], 1.0) == pytest.approx(1.0)
    assert kernel.rbf([0.0, 0.0], [1.0, 1.0], 1.0) == pytest.approx(np.exp(-1.0))
    with pytest.raises(ValueError):
        kernel.rbf([0.0], [0.0], 0.0)


def test_dense_kernel():
    features = kernel.build_features(GRID, XI, XJ)
    K = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=1.0, truncate=0))
    assert not K.is_sparse
    Kd = K.toarray()
    assert Kd.shape == (60, 60)
    np.testing.assert_allclose(np.diag(Kd), 1.0)
    np.testing.assert_allclose(Kd, Kd.T)
    assert np.all(Kd > 0) and np.all(Kd <= 1)
    assert K.trace() == pytest.approx(60.0)


def test_truncated_kernel_matches_dense():
    features = kernel.build_features(GRID, XI, XJ)
    dense = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=0.5, truncate=0)).toarray()
    truncated = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=0.5, truncate=1e-10))
    assert truncated.is_sparse
    np.testing.assert_allclose(truncated.toarray(), dense, rtol=0, atol=1e-10)
    auto = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=0.5, dense_limit=10))
    assert auto.is_sparse
    np.testing.assert_allclose(auto.toarray(), dense, rtol=0, atol=1e-15)


def test_standardized_kernel():
    features = kernel.build_features(GRID, XI, XJ)
    K = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=1.0, standardize=True, truncate=0))
    np.testing.assert_allclose(np.diag(K.toarray()), 1.0)
    with pytest.raises(ValueError):
        kernel.KernelConfig(sigma=0)
    with pytest.raises(ValueError):
        kernel.KernelConfig(truncate=1.5)


def test_kernel_window_products():
    features = kernel.build_features(GRID, XI, XJ)
    K = kernel.build_kernel_matrix(features, kernel.KernelConfig(sigma=0.7, truncate=0))
    rng = np.random.default_rng(1)
    alpha = rng.standard_normal(K.size)
    f = rng.random(GRID.P)
    w = kernel.alpha_to_w(K, alpha)
    np.testing.assert_allclose(w, K.toarray() @ alpha)
    A = kernel.materialize_Aalpha(alpha, K)
    assert A.shape == (3, 20)
    np.testing.assert_allclose(A.ravel(), w)
    np.testing.assert_allclose(kernel.apply_Af(f, K, alpha), kernel.apply_Aalpha(alpha, K, f))
    AK = kernel.materialize_AK(f, K)
    assert AK.shape == (3, 60)
    np.testing.assert_allclose(AK @ alpha, A @ f)
    with pytest.raises(ValueError):
        kernel.alpha_to_w(K, np.ones(59))
    with pytest.raises(ValueError):
        kernel.materialize_AK(np.ones(19), K)


def test_bilinear_products_agree_on_random_shapes():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        M, P = rng.integers(1, 6), rng.integers(1, 13)
        B = rng.standard_normal((M * P, M * P))
        values = B @ B.T
        if rng.random() < 0.5:
            values[np.abs(values) < 1.0] = 0.0
            values = sparse.csr_matrix(values)
        K = kernel.KernelMatrix(values, M, P)
        f, alpha = rng.standard_normal(P), rng.standard_normal(M * P)
        left = kernel.apply_Af(f, K, alpha)
        right = kernel.apply_Aalpha(alpha, K, f)
        scale = np.linalg.norm(kernel.materialize_AK(f, K)) * np.linalg.norm(alpha)
        assert np.linalg.norm(left - right) <= 1e-12 * max(scale, 1.0)
