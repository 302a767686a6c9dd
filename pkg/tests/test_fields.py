#!/usr/bin/env python3
"""
Tests for ScalarField and the finite-difference derivative oracles
"""

import unittest
import sys
import os

import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from flatscan.errors import DimensionError
from flatscan.fields import (ScalarField, default_step, dense_hessian, derivative_errors,
                             fd_gradient, fd_hvp)
from flatscan.models import linear_field, quadratic_field, quartic_field


class TestScalarField(unittest.TestCase):
    """Evaluation through the field interface"""

    def setUp(self):
        self.field = quartic_field()

    def test_quartic_values(self):
        self.assertAlmostEqual(self.field.value([0.0, 0.0]), 40.0)
        np.testing.assert_allclose(self.field.gradient([0.0, 0.0]), [9.0, 0.0])
        np.testing.assert_allclose(self.field.hessian([0.0, 0.0]).entries, np.diag([-6.0, 10.0]))

    def test_hvp_matches_hessian(self):
        theta = np.array([1.5, -0.5])
        v = np.array([0.3, 2.0])
        np.testing.assert_allclose(self.field.hvp(theta, v), self.field.hessian(theta).matvec(v))

    def test_sq_grad_norm(self):
        self.assertAlmostEqual(self.field.sq_grad_norm([0.0, 0.0]), 81.0)

    def test_dimension_checks(self):
        with self.assertRaises(DimensionError):
            self.field.value([1.0, 2.0, 3.0])
        with self.assertRaises(DimensionError):
            self.field.hvp([1.0, 2.0], [1.0])
        with self.assertRaises(DimensionError):
            self.field.value([np.inf, 0.0])

    def test_needs_a_parameter(self):
        with self.assertRaises(DimensionError):
            ScalarField(0, lambda t: 0.0, lambda t: t, lambda t, v: v)

    def test_dense_hessian_from_hvp(self):
        A = np.array([[2.0, 1.0], [1.0, -3.0]])
        f = ScalarField(2, lambda t: 0.5 * t @ A @ t, lambda t: A @ t, lambda t, v: A @ v)
        self.assertFalse(f.has_analytic_hessian)
        np.testing.assert_allclose(dense_hessian(f, [0.2, 0.1]).entries, A)


class TestFiniteDifferences(unittest.TestCase):
    """Central differences against analytic derivatives"""

    def test_default_step(self):
        self.assertAlmostEqual(default_step(np.array([0.0, 0.0])), 1e-5)
        self.assertAlmostEqual(default_step(np.array([-3.0, 1.0])), 4e-5)

    def test_quartic_gradient_and_hvp(self):
        field = quartic_field()
        rng = np.random.default_rng(0)
        for _ in range(5):
            theta = rng.uniform(-4.0, 4.0, 2)
            errors = derivative_errors(field, theta, v=rng.standard_normal(2))
            self.assertLess(errors['gradient'], 1e-6)
            self.assertLess(errors['hvp'], 1e-6)

    def test_quadratic_exact(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        field = quadratic_field(A, [1.0, -1.0])
        theta = np.array([0.5, 2.0])
        np.testing.assert_allclose(fd_gradient(field, theta), A @ theta + [1.0, -1.0], rtol=1e-8)
        np.testing.assert_allclose(fd_hvp(field, theta, [1.0, 0.0]), A[:, 0], rtol=1e-8)

    def test_linear_field_has_zero_hessian(self):
        field = linear_field([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(field.hvp(np.zeros(3), np.ones(3)), np.zeros(3))
        np.testing.assert_allclose(fd_gradient(field, np.ones(3)), [1.0, 2.0, 3.0], rtol=1e-8)

    def test_rejects_non_positive_step(self):
        with self.assertRaises(ValueError):
            fd_gradient(quartic_field(), [0.0, 0.0], h=0.0)
        with self.assertRaises(ValueError):
            fd_hvp(quartic_field(), [0.0, 0.0], [1.0, 0.0], h=-1.0)


def run_tests():
    """Run all tests"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestScalarField))
    suite.addTests(loader.loadTestsFromTestCase(TestFiniteDifferences))

    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite)


if __name__ == '__main__':
    result = run_tests()
    sys.exit(0 if result.wasSuccessful() else 1)
