"""
flatscan diagnostics - flatness and curvature measurements

r and r_H measure how well a Newton step solves H p = -g and whether the
unsolvable part of the system lies in the Hessian's kernel. Together with
the Rayleigh quotient of the gradient they separate critical points from
gradient-flat points; the Morse index summarizes curvature.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .config import Cutoffs, SolverConfig
from .fields import ScalarField, dense_hessian
from .linalg import DenseSymMatrix, Spectrum, as_vector, frobenius_norm, sym_eig
from .solvers import newton_system

logger = logging.getLogger(__name__)

OUTCOME_CLASSES = ('critical', 'gradient_flat', 'neither')


def relative_residual(H: DenseSymMatrix, p, g) -> float:
    """|Hp + g| / (|H|_F |p| + |g|); 0 when p and g both vanish"""
    p = as_vector(p, H.n, name='p')
    g = as_vector(g, H.n, name='g')
    denom = frobenius_norm(H) * float(np.linalg.norm(p)) + float(np.linalg.norm(g))
    if denom == 0:
        return 0.0
    return min(float(np.linalg.norm(H.matvec(p) + g)) / denom, 1.0)


def cokernel_residual(H: DenseSymMatrix, p, g) -> float:
    """|H(Hp + g)| / (|H|_F |Hp + g|); 0 when the residual vanishes"""
    p = as_vector(p, H.n, name='p')
    g = as_vector(g, H.n, name='g')
    res = H.matvec(p) + g
    res_norm = float(np.linalg.norm(res))
    hnorm = frobenius_norm(H)
    if res_norm == 0 or hnorm == 0:
        return 0.0
    return float(np.linalg.norm(H.matvec(res))) / (hnorm * res_norm)


def rayleigh_flatness(field: ScalarField, theta) -> float:
    """g^T H g / g^T g from one Hessian-vector product"""
    g = field.gradient(theta)
    gg = float(g @ g)
    if gg == 0:
        raise ValueError("Rayleigh quotient of the gradient is undefined at a zero gradient")
    return float(g @ field.hvp(theta, g)) / gg


def morse_index(spectrum: Spectrum, tol: float = 1e-10) -> float:
    """Fraction of eigenvalues below -tol * max(1, |lambda|_max)"""
    lam = spectrum.eigenvalues
    if lam.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(lam))))
    return float(np.count_nonzero(lam < -tol * scale)) / lam.size


@dataclass(frozen=True)
class FlatnessReport:
    r: float
    r_H: float
    rayleigh: float
    is_gradient_flat: bool
    r_cutoff: float = 0.9
    r_H_cutoff: float = 5e-4
    hnorm_kind: str = 'frobenius'

    def to_dict(self) -> Dict[str, Any]:
        return {'r': self.r, 'r_H': self.r_H, 'rayleigh': self.rayleigh,
                'is_gradient_flat': self.is_gradient_flat, 'r_cutoff': self.r_cutoff,
                'r_H_cutoff': self.r_H_cutoff, 'hnorm_kind': self.hnorm_kind}


def is_flat(r: float, r_H: float, cutoffs: Cutoffs) -> bool:
    if math.isnan(r) or math.isnan(r_H):
        return False
    return r > cutoffs.r and r_H < cutoffs.r_H


def flatness_report(H: Union[DenseSymMatrix, np.ndarray, ScalarField], p, g,
                    cutoffs: Optional[Cutoffs] = None, theta=None) -> FlatnessReport:
    """
    r, r_H and the Rayleigh quotient of g for a step p, with the gradient-flat decision.

    H may be a field, in which case its Hessian is materialized at theta.
    """
    cutoffs = cutoffs or Cutoffs()
    if isinstance(H, ScalarField):
        if theta is None:
            raise ValueError("a field needs theta to give a Hessian")
        H = dense_hessian(H, theta)
    elif isinstance(H, np.ndarray):
        H = DenseSymMatrix(H)
    g = as_vector(g, H.n, name='g')
    r = relative_residual(H, p, g)
    r_H = cokernel_residual(H, p, g)
    gg = float(g @ g)
    rayleigh = float(g @ H.matvec(g)) / gg if gg > 0 else math.nan
    return FlatnessReport(r, r_H, rayleigh, is_flat(r, r_H, cutoffs), cutoffs.r, cutoffs.r_H)


@dataclass(frozen=True)
class RunOutcome:
    """Terminal classification of one finder run"""
    outcome_class: str
    terminal_sq_grad_norm: float
    terminal_loss: float
    morse_index: float
    max_r_over_run: float
    terminal_r: float = math.nan
    terminal_r_H: float = math.nan
    stop_reason: Optional[str] = None
    iterations: int = 0
    max_flat_iter: Optional[int] = None
    max_flat_loss: float = math.nan
    max_flat_sq_grad_norm: float = math.nan
    max_flat_morse_index: float = math.nan
    rH_stop_fraction: float = 0.0
    morse_tol: float = 1e-10
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunOutcome':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for key, value in known.items():
            if value is None and key not in ('stop_reason', 'max_flat_iter', 'error'):
                known[key] = math.nan
        return cls(**known)


def hessian_morse_index(field: ScalarField, theta, tol: float) -> float:
    return morse_index(sym_eig(dense_hessian(field, theta)), tol)


def classify_outcome(trace, field: Optional[ScalarField] = None,
                     cutoffs: Optional[Cutoffs] = None,
                     morse: Optional[float] = None,
                     max_flat_morse: Optional[float] = None) -> RunOutcome:
    """
    Classify a run from its terminal row.

    critical: terminal squared gradient norm below cutoffs.grad_sq.
    gradient_flat: not critical, and the terminal r and r_H pass the cutoffs.
    Morse indices are computed from the field at the stored terminal and
    maximally flat parameters, or taken from morse/max_flat_morse when the
    field is not available (replays).
    """
    cutoffs = cutoffs or Cutoffs()
    if not trace.rows:
        raise ValueError("cannot classify an empty trace")
    last = trace.terminal
    sq = last['sq_grad_norm']
    if sq < cutoffs.grad_sq:
        outcome_class = 'critical'
    elif is_flat(last['r'], last['r_H'], cutoffs):
        outcome_class = 'gradient_flat'
    else:
        outcome_class = 'neither'

    r_values = trace.column('r')
    finite_r = r_values[~np.isnan(r_values)]
    max_r = float(finite_r.max()) if finite_r.size else math.nan
    stops = [row['krylov_stop'] for row in trace.rows if row.get('krylov_stop')]
    rH_fraction = stops.count('rtol_rH') / len(stops) if stops else 0.0

    if morse is None:
        morse = math.nan
        if field is not None and trace.theta is not None:
            morse = hessian_morse_index(field, trace.theta, cutoffs.morse_tol)
    max_flat_iter = trace.max_flat_iter
    max_flat_loss = max_flat_sq = math.nan
    if max_flat_iter is not None:
        max_flat_loss = trace.rows[max_flat_iter]['loss']
        max_flat_sq = trace.rows[max_flat_iter]['sq_grad_norm']
    if max_flat_morse is None:
        max_flat_morse = math.nan
        if field is not None and trace.max_flat_params is not None:
            max_flat_morse = hessian_morse_index(field, trace.max_flat_params, cutoffs.morse_tol)

    return RunOutcome(
        outcome_class=outcome_class,
        terminal_sq_grad_norm=sq,
        terminal_loss=last['loss'],
        morse_index=float(morse),
        max_r_over_run=max_r,
        terminal_r=last['r'],
        terminal_r_H=last['r_H'],
        stop_reason=trace.stop_reason,
        iterations=len(trace.rows) - 1,
        max_flat_iter=max_flat_iter,
        max_flat_loss=max_flat_loss,
        max_flat_sq_grad_norm=max_flat_sq,
        max_flat_morse_index=float(max_flat_morse),
        rH_stop_fraction=rH_fraction,
        morse_tol=cutoffs.morse_tol,
    )


def smooth_trace(values: Sequence[float], window: int) -> List[float]:
    """Centered moving average; the window shrinks at both ends"""
    if window < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return []
    left = (window - 1) // 2
    right = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, n - 1) + 1
    return list((csum[hi] - csum[lo]) / (hi - lo))


def diagnose_point(field: ScalarField, theta, cfg: Optional[SolverConfig] = None,
                   cutoffs: Optional[Cutoffs] = None) -> Dict[str, Any]:
    """Loss, gradient, fresh Newton-system residuals, Rayleigh flatness and Morse index at theta"""
    cfg = cfg or SolverConfig()
    cutoffs = cutoffs or Cutoffs()
    theta = as_vector(theta, field.dim, name='theta')
    g = field.gradient(theta)
    sq = float(g @ g)
    sol, Hg = newton_system(field, theta, g, cfg)
    rayleigh = float(g @ Hg) / sq if sq > 0 else math.nan
    morse = hessian_morse_index(field, theta, cutoffs.morse_tol)
    flat = is_flat(sol.rel_residual, sol.cokernel_residual, cutoffs)
    if sq < cutoffs.grad_sq:
        point_class = 'critical'
    elif flat:
        point_class = 'gradient_flat'
    else:
        point_class = 'neither'
    return {
        'loss': field.value(theta),
        'sq_grad_norm': sq,
        'r': sol.rel_residual,
        'r_H': sol.cokernel_residual,
        'krylov_iters': sol.iterations,
        'krylov_stop': sol.stop_reason,
        'hnorm_kind': sol.hnorm_kind,
        'step_norm': float(np.linalg.norm(sol.step)),
        'rayleigh': rayleigh,
        'morse_index': morse,
        'morse_tol': cutoffs.morse_tol,
        'is_gradient_flat': flat,
        'class': point_class,
    }
