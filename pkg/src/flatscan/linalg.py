"""
flatscan linear algebra - dense symmetric kernels
Symmetric eigendecomposition, matrix norms and a pseudoinverse-based
minimum-norm least-squares oracle, sized for n up to a few thousand.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionError, EigenSolverError

# Singular values below RANK_TOL * sigma_max are treated as zero
RANK_TOL = 1e-10

ParamVector = np.ndarray


def as_vector(values, n: Optional[int] = None, name: str = 'vector') -> ParamVector:
    """Return a finite 1-d float64 copy of values, optionally checking its length"""
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if n is not None and vec.shape[0] != n:
        raise DimensionError(f"{name} has length {vec.shape[0]}, expected {n}")
    if not np.all(np.isfinite(vec)):
        raise DimensionError(f"{name} has non-finite entries")
    return vec


class DenseSymMatrix:
    """Immutable symmetric matrix, symmetrized as (M + M^T)/2 on construction"""

    __slots__ = ('entries',)

    def __init__(self, entries):
        arr = np.array(entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("matrix has non-finite entries")
        arr = 0.5 * (arr + arr.T)
        arr.setflags(write=False)
        object.__setattr__(self, 'entries', arr)

    def __setattr__(self, name, value):
        raise AttributeError("DenseSymMatrix is immutable")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def matvec(self, v: ParamVector) -> ParamVector:
        return self.entries @ v

    def __matmul__(self, v):
        return self.entries @ v

    @classmethod
    def diag(cls, values) -> 'DenseSymMatrix':
        return cls(np.diag(np.asarray(values, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> 'DenseSymMatrix':
        return cls(np.eye(n))

    def __repr__(self):
        return f"DenseSymMatrix(n={self.n})"


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues in ascending order with orthonormal eigenvector columns"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def sym_eig(M: DenseSymMatrix) -> Spectrum:
    """Full spectrum of a symmetric matrix"""
    try:
        vals, vecs = scipy.linalg.eigh(M.entries, check_finite=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports the number of off-diagonal elements that failed to converge
        info = 0
        for token in str(exc).split():
            if token.isdigit():
                info = int(token)
                break
        raise EigenSolverError(f"symmetric eigensolver did not converge: {exc}", info=info) from exc
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return Spectrum(eigenvalues=vals, eigenvectors=vecs)


def frobenius_norm(M: DenseSymMatrix) -> float:
    return float(np.linalg.norm(M.entries, 'fro'))


def spectral_norm(M: DenseSymMatrix) -> float:
    """Largest eigenvalue magnitude"""
    if M.n == 0:
        return 0.0
    vals = scipy.linalg.eigvalsh(M.entries, check_finite=False)
    return float(max(abs(vals[0]), abs(vals[-1])))


def pinv_solve(M: DenseSymMatrix, b, rank_tol: float = RANK_TOL) -> ParamVector:
    """
    Minimum-norm least-squares solution M^+ b.

    For a symmetric matrix the singular values are the eigenvalue magnitudes,
    so the pseudoinverse is applied in the eigenbasis; directions with
    |lambda| <= rank_tol * sigma_max are dropped.
    """
    if rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    b = as_vector(b, M.n, name='b')
    spectrum = sym_eig(M)
    vals = spectrum.eigenvalues
    sigma_max = float(np.max(np.abs(vals))) if vals.size else 0.0
    if sigma_max == 0.0:
        return np.zeros_like(b)
    keep = np.abs(vals) > rank_tol * sigma_max
    V = spectrum.eigenvectors[:, keep]
    coeffs = (V.T @ b) / vals[keep]
    return V @ coeffs


def kernel_basis(M: DenseSymMatrix, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal columns spanning the numerical kernel of M"""
    spectrum = sym_eig(M)
    vals = spectrum.eigenvalues
    sigma_max = float(np.max(np.abs(vals))) if vals.size else 0.0
    drop = np.abs(vals) <= rank_tol * sigma_max
    return spectrum.eigenvectors[:, drop]
