"""
flatscan solvers - critical-point finders and the pretraining loop

Newton-MR drives the squared gradient norm to zero with minimum-length
Newton steps from MINRES-QLP and a two-stage backtracking line search.
Damped Newton and gradient-norm minimization share its trace contract;
full-batch gradient descent with momentum produces the starting points.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .config import FinderConfig, SolverConfig
from .errors import DimensionError
from .fields import ScalarField, dense_hessian
from .krylov import KrylovSolution, mrqlp_solve, residual_norms
from .linalg import DenseSymMatrix, ParamVector, as_vector, frobenius_norm, pinv_solve

logger = logging.getLogger(__name__)

# merit or loss above this counts as divergence
DIVERGENCE_LIMIT = 1e12

STOP_REASONS = ('grad_tol', 'max_iters', 'fixed_point', 'stalled', 'diverged')


class IterateTrace:
    """
    Per-iteration record of one solver run.

    Row t describes the iterate theta_t: its loss and squared gradient norm,
    the Newton system solved there (r, r_H, Krylov iterations and stop
    reason) and the step size taken from it. The terminal row has step size 0.
    Rows without a Newton system carry NaN residuals.
    """

    COLUMNS = ('iter', 'loss', 'sq_grad_norm', 'r', 'r_H', 'step_size', 'krylov_iters', 'krylov_stop')

    def __init__(self, method: str, snapshot_every: int = 0):
        self.method = method
        self.snapshot_every = snapshot_every
        self.rows: List[Dict] = []
        self.snapshots: List[Tuple[int, np.ndarray]] = []
        self.theta: Optional[np.ndarray] = None
        self.stop_reason: Optional[str] = None
        self.max_flat_iter: Optional[int] = None
        self.max_flat_params: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.rows)

    def record(self, theta: ParamVector, loss: float, sq_grad_norm: float,
               r: float = math.nan, r_H: float = math.nan, step_size: float = 0.0,
               krylov_iters: int = 0, krylov_stop: str = '') -> Dict:
        t = len(self.rows)
        row = {'iter': t, 'loss': float(loss), 'sq_grad_norm': float(sq_grad_norm),
               'r': float(r), 'r_H': float(r_H), 'step_size': float(step_size),
               'krylov_iters': int(krylov_iters), 'krylov_stop': krylov_stop}
        self.rows.append(row)
        if t == 0 or (self.snapshot_every and t % self.snapshot_every == 0):
            self.snapshots.append((t, np.array(theta, dtype=np.float64)))
        if not math.isnan(row['r']):
            best = None if self.max_flat_iter is None else self.rows[self.max_flat_iter]['r']
            if best is None or row['r'] > best:
                self.max_flat_iter = t
                self.max_flat_params = np.array(theta, dtype=np.float64)
        return row

    def set_step(self, step_size: float):
        self.rows[-1]['step_size'] = float(step_size)

    def finish(self, theta: ParamVector, stop_reason: str):
        self.theta = np.array(theta, dtype=np.float64)
        self.stop_reason = stop_reason
        last = len(self.rows) - 1
        if not self.snapshots or self.snapshots[-1][0] != last:
            self.snapshots.append((last, self.theta.copy()))

    @property
    def terminal(self) -> Dict:
        return self.rows[-1]

    @property
    def iterations(self) -> int:
        return len(self.rows) - 1

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=np.float64)

    def snapshot_losses(self) -> List[Tuple[np.ndarray, float]]:
        return [(theta, self.rows[t]['loss']) for t, theta in self.snapshots]

    @classmethod
    def from_rows(cls, rows: List[Dict], method: str = 'replay',
                  stop_reason: Optional[str] = None) -> 'IterateTrace':
        """Rebuild a trace (without parameters) from stored rows"""
        trace = cls(method)
        trace.rows = [dict(row) for row in rows]
        r = trace.column('r') if rows else np.array([])
        if r.size and not np.all(np.isnan(r)):
            trace.max_flat_iter = int(np.nanargmax(r))
        trace.stop_reason = stop_reason
        return trace


def _log_progress(trace: IterateTrace, cfg: SolverConfig):
    t = len(trace.rows) - 1
    if cfg.log_every and t % cfg.log_every == 0:
        row = trace.rows[-1]
        logger.info("%s iter %d: loss=%.6g |g|^2=%.3e r=%.3f step=%.3g",
                    trace.method, t, row['loss'], row['sq_grad_norm'], row['r'], row['step_size'])


# ----------------------------------------------------------------------------
# Line search
# ----------------------------------------------------------------------------

def line_search(merit: Callable[[ParamVector], float], merit_dirderiv: float,
                theta: ParamVector, p: ParamVector, cfg: SolverConfig,
                merit0: Optional[float] = None) -> float:
    """
    Step size along p for the merit m = |grad f|^2.

    The unit step is tried first and accepted when
        sqrt(m(theta + p)) <= sqrt(m) + rho_unit * s / (2 sqrt(m)),
    the sufficient-decrease test on the gradient-norm scale. Otherwise
    alpha = alpha0 * beta^k, k = 0..max_backtracks, is accepted on
        m(theta + alpha p) <= m + rho * alpha * s.
    s is merit_dirderiv clipped at 0. Returns 0 when nothing is accepted and
    1 for a zero direction.
    """
    if not np.any(p):
        return 1.0
    m0 = merit(theta) if merit0 is None else merit0
    slope = min(float(merit_dirderiv), 0.0)

    m1 = merit(theta + p)
    if np.isfinite(m1):
        root0 = math.sqrt(m0)
        if root0 == 0:
            if m1 <= 0:
                return 1.0
        elif math.sqrt(m1) <= root0 + cfg.rho_unit * slope / (2.0 * root0):
            return 1.0

    alpha = cfg.alpha0
    for k in range(cfg.max_backtracks + 1):
        m = merit(theta + alpha * p)
        logger.debug("line search trial %d: alpha=%.3g merit=%.6g (from %.6g)", k, alpha, m, m0)
        if np.isfinite(m) and m <= m0 + cfg.rho * alpha * slope:
            return alpha
        alpha *= cfg.beta
    return 0.0


# ----------------------------------------------------------------------------
# Newton-type finders
# ----------------------------------------------------------------------------

def _use_dense(field: ScalarField, cfg: SolverConfig) -> bool:
    return cfg.dense and field.dim <= cfg.dense_max_n


def newton_system(field: ScalarField, theta: ParamVector, g: ParamVector,
                  cfg: SolverConfig) -> Tuple[KrylovSolution, ParamVector]:
    """Solve H p = -g at theta; returns the solution and Hg for the merit slope"""
    if _use_dense(field, cfg):
        H = dense_hessian(field, theta)
        return mrqlp_solve(H, g, cfg), H.matvec(g)
    sol = mrqlp_solve(lambda v: field.hvp(theta, v), g, cfg)
    return sol, field.hvp(theta, g)


def _start(field: ScalarField, theta0) -> np.ndarray:
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (field.dim,):
        raise DimensionError(f"field {field.name} has {field.dim} parameters, start has shape {theta0.shape}")
    return as_vector(theta0, field.dim, name='theta0')


def _newton_loop(field: ScalarField, theta0, cfg: SolverConfig, method: str,
                 solve: Callable[[np.ndarray, np.ndarray], Tuple[KrylovSolution, np.ndarray]]) -> IterateTrace:
    theta = _start(field, theta0)
    trace = IterateTrace(method, cfg.snapshot_every)

    def merit(t):
        g_t = field.gradient(t)
        return float(g_t @ g_t)

    g = field.gradient(theta)
    sq = float(g @ g)
    loss = field.value(theta)
    stop = 'max_iters'
    zero_steps = 0
    sol = None
    alpha = 0.0
    moved = True
    for _ in range(cfg.outer_iters):
        if moved:
            sol, Hg = solve(theta, g)
            slope = 2.0 * float(Hg @ sol.step)
            alpha = line_search(merit, slope, theta, sol.step, cfg, merit0=sq)
        trace.record(theta, loss, sq, sol.rel_residual, sol.cokernel_residual, alpha,
                     sol.iterations, sol.stop_reason)
        _log_progress(trace, cfg)

        if alpha == 0:
            moved = False
            zero_steps += 1
            if zero_steps >= cfg.stall_limit:
                logger.warning("%s stalled: %d consecutive failed line searches", method, zero_steps)
                stop = 'stalled'
                break
            continue
        zero_steps = 0
        new_theta = theta + alpha * sol.step
        if np.array_equal(new_theta, theta):
            stop = 'fixed_point'
            moved = False
            break
        theta = new_theta
        moved = True
        g = field.gradient(theta)
        sq = float(g @ g)
        loss = field.value(theta)
        if sq <= cfg.grad_tol_sq:
            stop = 'grad_tol'
            break

    if moved or sol is None:
        sol, _ = solve(theta, g)
    trace.record(theta, loss, sq, sol.rel_residual, sol.cokernel_residual, 0.0,
                 sol.iterations, sol.stop_reason)
    trace.finish(theta, stop)
    logger.info("%s finished after %d iterations (%s): loss=%.6g |g|^2=%.3e",
                method, trace.iterations, stop, loss, sq)
    return trace


def newton_mr(field: ScalarField, theta0, cfg: Optional[SolverConfig] = None) -> IterateTrace:
    """Newton-MR: theta <- theta + alpha p with p the MINRES-QLP step for H p = -g"""
    cfg = cfg or SolverConfig()
    return _newton_loop(field, theta0, cfg, 'newton_mr',
                        lambda theta, g: newton_system(field, theta, g, cfg))


def damped_newton(field: ScalarField, theta0, damping: float,
                  cfg: Optional[SolverConfig] = None) -> IterateTrace:
    """Newton steps from (H + damping I) p = -g solved densely, same line search as newton_mr"""
    if damping < 0:
        raise ValueError("damping must be non-negative")
    cfg = cfg or SolverConfig()

    def solve(theta, g):
        H = dense_hessian(field, theta)
        damped = H.entries + damping * np.eye(field.dim)
        try:
            p = scipy.linalg.solve(damped, -g, assume_a='sym')
        except scipy.linalg.LinAlgError:
            p = pinv_solve(DenseSymMatrix(damped), -g, cfg.rank_tol)
        if not np.all(np.isfinite(p)):
            p = pinv_solve(DenseSymMatrix(damped), -g, cfg.rank_tol)
        r, r_H = residual_norms(H.matvec, frobenius_norm(H), p, g)
        sol = KrylovSolution(p, r, r_H, 0, 'dense', frobenius_norm(H), 'frobenius')
        return sol, H.matvec(g)

    return _newton_loop(field, theta0, cfg, 'damped_newton', solve)


def gradient_norm_min(field: ScalarField, theta0, lr: float, iters: int,
                      cfg: Optional[SolverConfig] = None) -> IterateTrace:
    """
    Gradient descent on the merit 1/2 |grad f|^2, whose gradient is H grad f.

    The update is zero wherever the gradient lies in the Hessian's kernel.
    The terminal row carries a fresh Newton-system solve for flatness checks.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    cfg = cfg or SolverConfig()
    theta = _start(field, theta0)
    trace = IterateTrace('gradient_norm_min', cfg.snapshot_every)
    g = field.gradient(theta)
    sq = float(g @ g)
    loss = field.value(theta)
    stop = 'max_iters'
    for _ in range(iters):
        trace.record(theta, loss, sq, step_size=lr)
        _log_progress(trace, cfg)
        new_theta = theta - lr * field.hvp(theta, g)
        if np.array_equal(new_theta, theta):
            stop = 'fixed_point'
            break
        theta = new_theta
        g = field.gradient(theta)
        sq = float(g @ g)
        loss = field.value(theta)
        if not np.isfinite(sq) or not np.isfinite(loss) or 0.5 * sq > DIVERGENCE_LIMIT:
            logger.warning("gradient_norm_min diverged at iteration %d", len(trace.rows))
            stop = 'diverged'
            break
        if sq <= cfg.grad_tol_sq:
            stop = 'grad_tol'
            break

    if stop == 'diverged':
        trace.record(theta, loss, sq)
    else:
        sol, _ = newton_system(field, theta, g, cfg)
        trace.record(theta, loss, sq, sol.rel_residual, sol.cokernel_residual, 0.0,
                     sol.iterations, sol.stop_reason)
    trace.finish(theta, stop)
    return trace


def train_gd_momentum(field: ScalarField, theta0, lr: float, momentum: float,
                      epochs: int, snapshot_every: int = 1) -> IterateTrace:
    """Full-batch classical momentum: v <- momentum v - lr g; theta <- theta + v"""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    theta = _start(field, theta0)
    trace = IterateTrace('gd_momentum', snapshot_every)
    velocity = np.zeros_like(theta)
    stop = 'max_iters'
    for epoch in range(epochs + 1):
        g = field.gradient(theta)
        loss = field.value(theta)
        sq = float(g @ g)
        if not np.isfinite(loss) or not np.isfinite(sq) or loss > DIVERGENCE_LIMIT:
            trace.record(theta, loss, sq)
            logger.warning("training diverged at epoch %d", epoch)
            stop = 'diverged'
            break
        if epoch == epochs:
            trace.record(theta, loss, sq)
            break
        trace.record(theta, loss, sq, step_size=lr)
        if epoch % 100 == 0:
            logger.debug("epoch %d: loss=%.6g |g|^2=%.3e", epoch, loss, sq)
        velocity = momentum * velocity - lr * g
        theta = theta + velocity
    trace.finish(theta, stop)
    logger.info("training finished after %d epochs: loss=%.6g", trace.iterations, trace.terminal['loss'])
    return trace


# ----------------------------------------------------------------------------
# Finder registry
# ----------------------------------------------------------------------------

def _run_newton_mr(field, theta0, finder: FinderConfig, solver: SolverConfig):
    return newton_mr(field, theta0, solver)


def _run_damped_newton(field, theta0, finder: FinderConfig, solver: SolverConfig):
    return damped_newton(field, theta0, finder.damping, solver)


def _run_gradient_norm_min(field, theta0, finder: FinderConfig, solver: SolverConfig):
    return gradient_norm_min(field, theta0, finder.lr, solver.outer_iters, solver)


FINDERS: Dict[str, Callable[..., IterateTrace]] = {
    'newton_mr': _run_newton_mr,
    'damped_newton': _run_damped_newton,
    'gradient_norm_min': _run_gradient_norm_min,
}


def run_finder(field: ScalarField, theta0, finder: Optional[FinderConfig] = None,
               solver: Optional[SolverConfig] = None) -> IterateTrace:
    finder = finder or FinderConfig()
    solver = solver or SolverConfig()
    try:
        run = FINDERS[finder.method]
    except KeyError:
        raise ValueError(f"unknown finder {finder.method!r}; expected one of {sorted(FINDERS)}")
    return run(field, theta0, finder, solver)
