"""
flatscan fields - twice-differentiable objectives and derivative oracles

A ScalarField bundles value, gradient and Hessian-vector product callables
for a flat parameter vector. Finite-difference oracles check every shipped
field against its own value function.
"""

from typing import Callable, Dict, Optional

import numpy as np

from .errors import DimensionError
from .linalg import DenseSymMatrix, ParamVector, as_vector

# cube root of machine epsilon, the central-difference optimum
FD_STEP = 1e-5


class ScalarField:
    """
    Objective f: R^n -> R with analytic first and second order information.

    All captured state must be immutable so that a field can be evaluated
    from several threads at once.
    """

    def __init__(self,
                 dim: int,
                 value: Callable[[ParamVector], float],
                 gradient: Callable[[ParamVector], ParamVector],
                 hvp: Callable[[ParamVector, ParamVector], ParamVector],
                 hessian: Optional[Callable[[ParamVector], np.ndarray]] = None,
                 name: str = 'field'):
        if dim < 1:
            raise DimensionError("a field needs at least one parameter")
        self.dim = dim
        self.name = name
        self._value = value
        self._gradient = gradient
        self._hvp = hvp
        self._hessian = hessian

    def _check(self, theta) -> ParamVector:
        return as_vector(theta, self.dim, name='theta')

    def value(self, theta) -> float:
        return float(self._value(self._check(theta)))

    def gradient(self, theta) -> ParamVector:
        return np.asarray(self._gradient(self._check(theta)), dtype=np.float64)

    def hvp(self, theta, v) -> ParamVector:
        theta = self._check(theta)
        v = as_vector(v, self.dim, name='v')
        return np.asarray(self._hvp(theta, v), dtype=np.float64)

    @property
    def has_analytic_hessian(self) -> bool:
        return self._hessian is not None

    def hessian(self, theta) -> DenseSymMatrix:
        return dense_hessian(self, theta)

    def sq_grad_norm(self, theta) -> float:
        g = self.gradient(theta)
        return float(g @ g)

    def __repr__(self):
        return f"ScalarField(name={self.name!r}, dim={self.dim})"


def default_step(theta: ParamVector) -> float:
    return FD_STEP * (1.0 + float(np.max(np.abs(theta))))


def fd_gradient(field: ScalarField, theta, h: Optional[float] = None) -> ParamVector:
    """Central-difference gradient, entry i = (f(x + h e_i) - f(x - h e_i)) / 2h"""
    theta = as_vector(theta, field.dim, name='theta')
    if h is None:
        h = default_step(theta)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    grad = np.empty_like(theta)
    for i in range(field.dim):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (field.value(theta + e) - field.value(theta - e)) / (2.0 * h)
    return grad


def fd_hvp(field: ScalarField, theta, v, h: Optional[float] = None) -> ParamVector:
    """Central difference of the gradient along v"""
    theta = as_vector(theta, field.dim, name='theta')
    v = as_vector(v, field.dim, name='v')
    if h is None:
        h = default_step(theta)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    return (field.gradient(theta + h * v) - field.gradient(theta - h * v)) / (2.0 * h)


def dense_hessian(field: ScalarField, theta) -> DenseSymMatrix:
    """Materialize the Hessian from analytic rules or from n Hessian-vector products"""
    theta = as_vector(theta, field.dim, name='theta')
    if field._hessian is not None:
        return DenseSymMatrix(field._hessian(theta))
    n = field.dim
    cols = np.empty((n, n))
    eye = np.eye(n)
    for i in range(n):
        cols[:, i] = field.hvp(theta, eye[i])
    return DenseSymMatrix(cols)


def derivative_errors(field: ScalarField, theta, v=None, h: Optional[float] = None) -> Dict[str, float]:
    """
    Relative discrepancies between analytic and finite-difference derivatives.

    gradient: |g - g_fd| / (1 + |g|); hvp: |Hv - (Hv)_fd| / (1 + |Hv|).
    """
    theta = as_vector(theta, field.dim, name='theta')
    if v is None:
        v = np.ones(field.dim) / np.sqrt(field.dim)
    g = field.gradient(theta)
    g_fd = fd_gradient(field, theta, h)
    hv = field.hvp(theta, v)
    hv_fd = fd_hvp(field, theta, v, h)
    return {
        'gradient': float(np.linalg.norm(g - g_fd) / (1.0 + np.linalg.norm(g))),
        'hvp': float(np.linalg.norm(hv - hv_fd) / (1.0 + np.linalg.norm(hv))),
    }
