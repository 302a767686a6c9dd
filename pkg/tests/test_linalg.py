#!/usr/bin/env python3
"""
Tests for the dense symmetric kernels: eigendecomposition, norms and the
pseudoinverse least-squares oracle
"""

import unittest
import sys
import os

import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from flatscan.errors import DimensionError
from flatscan.linalg import (DenseSymMatrix, frobenius_norm, kernel_basis, pinv_solve,
                             spectral_norm, sym_eig)


def random_symmetric(n, rank=None, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = rng.uniform(0.5, 3.0, n) * rng.choice([-1.0, 1.0], n)
    if rank is not None:
        vals[rank:] = 0.0
    return DenseSymMatrix((Q * vals) @ Q.T)


class TestDenseSymMatrix(unittest.TestCase):
    """Construction invariants"""

    def test_symmetrized_on_construction(self):
        M = DenseSymMatrix([[1.0, 2.0], [4.0, 3.0]])
        np.testing.assert_array_equal(M.entries, [[1.0, 3.0], [3.0, 3.0]])

    def test_immutable(self):
        M = DenseSymMatrix.identity(2)
        with self.assertRaises(AttributeError):
            M.entries = np.zeros((2, 2))
        with self.assertRaises(ValueError):
            M.entries[0, 0] = 5.0

    def test_rejects_non_square(self):
        with self.assertRaises(DimensionError):
            DenseSymMatrix(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        with self.assertRaises(DimensionError):
            DenseSymMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_matvec(self):
        M = DenseSymMatrix.diag([2.0, 0.0])
        np.testing.assert_array_equal(M.matvec(np.array([1.0, 5.0])), [2.0, 0.0])
        np.testing.assert_array_equal(M @ np.array([1.0, 5.0]), [2.0, 0.0])


class TestSymEig(unittest.TestCase):
    """Spectra and their residual bounds"""

    def test_quartic_origin_hessian(self):
        spectrum = sym_eig(DenseSymMatrix.diag([-6.0, 10.0]))
        np.testing.assert_allclose(spectrum.eigenvalues, [-6.0, 10.0])

    def test_identity(self):
        spectrum = sym_eig(DenseSymMatrix.identity(3))
        np.testing.assert_allclose(spectrum.eigenvalues, [1.0, 1.0, 1.0])
        V = spectrum.eigenvectors
        np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-10)

    def test_random_reconstruction(self):
        M = random_symmetric(20, seed=3)
        spectrum = sym_eig(M)
        fro = frobenius_norm(M)
        np.testing.assert_allclose(spectrum.reconstruct(), M.entries, atol=1e-8 * fro)
        V = spectrum.eigenvectors
        np.testing.assert_allclose(V.T @ V, np.eye(20), atol=1e-10)
        for i in range(20):
            residual = M.matvec(V[:, i]) - spectrum.eigenvalues[i] * V[:, i]
            self.assertLessEqual(np.linalg.norm(residual), 1e-8 * fro)

    def test_ascending_and_trace(self):
        M = random_symmetric(15, seed=4)
        vals = sym_eig(M).eigenvalues
        self.assertTrue(np.all(np.diff(vals) >= 0))
        self.assertAlmostEqual(float(vals.sum()), float(np.trace(M.entries)),
                               delta=1e-8 * frobenius_norm(M))


class TestNorms(unittest.TestCase):

    def test_frobenius_examples(self):
        self.assertEqual(frobenius_norm(DenseSymMatrix(np.zeros((3, 3)))), 0.0)
        self.assertAlmostEqual(frobenius_norm(DenseSymMatrix.diag([0.0, 10.0])), 10.0)
        self.assertAlmostEqual(frobenius_norm(DenseSymMatrix.identity(4)), 2.0)

    def test_spectral_below_frobenius(self):
        M = random_symmetric(10, seed=5)
        self.assertLessEqual(spectral_norm(M), frobenius_norm(M) + 1e-12)
        self.assertAlmostEqual(spectral_norm(DenseSymMatrix.diag([-7.0, 2.0])), 7.0)


class TestPinvSolve(unittest.TestCase):
    """Minimum-norm least-squares solutions"""

    def test_gradient_in_kernel(self):
        b = np.array([9.0 - 4.0 * np.sqrt(2.0), 0.0])
        np.testing.assert_allclose(pinv_solve(DenseSymMatrix.diag([0.0, 10.0]), b), [0.0, 0.0])

    def test_identity(self):
        np.testing.assert_allclose(pinv_solve(DenseSymMatrix.identity(2), [3.0, 4.0]), [3.0, 4.0])

    def test_singular_block(self):
        np.testing.assert_allclose(pinv_solve(DenseSymMatrix.diag([2.0, 0.0]), [4.0, 3.0]), [2.0, 0.0])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(pinv_solve(DenseSymMatrix(np.zeros((2, 2))), [1.0, 1.0]), [0.0, 0.0])

    def test_rank_deficient_properties(self):
        rng = np.random.default_rng(11)
        for rank in (6, 9):
            M = random_symmetric(12, rank=rank, seed=rank)
            b = rng.standard_normal(12)
            x = pinv_solve(M, b)
            scale = frobenius_norm(M) * np.linalg.norm(b)
            normal = M.entries.T @ (M.matvec(x) - b)
            self.assertLessEqual(np.linalg.norm(normal), 1e-8 * scale)
            K = kernel_basis(M)
            self.assertEqual(K.shape[1], 12 - rank)
            self.assertLessEqual(np.linalg.norm(K.T @ x), 1e-8 * scale)

    def test_invertible_matches_dense_solve(self):
        M = random_symmetric(25, seed=8)
        b = np.random.default_rng(8).standard_normal(25)
        expected = np.linalg.solve(M.entries, b)
        x = pinv_solve(M, b)
        self.assertLessEqual(np.linalg.norm(x - expected), 1e-8 * np.linalg.norm(expected))

    def test_rejects_bad_inputs(self):
        with self.assertRaises(DimensionError):
            pinv_solve(DenseSymMatrix.identity(2), [1.0, 2.0, 3.0])
        with self.assertRaises(ValueError):
            pinv_solve(DenseSymMatrix.identity(2), [1.0, 2.0], rank_tol=-1.0)


def run_tests():
    """Run all tests"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestDenseSymMatrix))
    suite.addTests(loader.loadTestsFromTestCase(TestSymEig))
    suite.addTests(loader.loadTestsFromTestCase(TestNorms))
    suite.addTests(loader.loadTestsFromTestCase(TestPinvSolve))

    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite)


if __name__ == '__main__':
    result = run_tests()
    sys.exit(0 if result.wasSuccessful() else 1)
