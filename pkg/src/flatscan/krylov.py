"""
flatscan krylov - MINRES-QLP for symmetric, possibly singular Newton systems

Computes the minimum-length least-squares solution of H p = -g for a
symmetric H given either as a dense matrix or as a Hessian-vector product
callable. The recurrences follow Choi, Paige and Saunders' MINRES-QLP run in
QLP mode from the first iteration, with optional full reorthogonalization of
the Lanczos basis.

Stopping uses the relative residual
    r   = |Hp + g| / (|H| |p| + |g|)
and the co-kernel residual
    r_H = |H(Hp + g)| / (|H| |Hp + g|)
where |H| is the Frobenius norm for dense input and the Lanczos estimate of
the spectral norm otherwise. The recurrence estimates only trigger a check:
a stop is taken when the explicit r or r_H of the returned step meets rtol.
With a stored basis the returned step is the minimum-length solution of the
projected tridiagonal problem. Curvature below max(rank_tol, rtol) |H| is
treated as kernel.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .config import SolverConfig
from .errors import DimensionError, SolverBreakdown
from .linalg import DenseSymMatrix, ParamVector, as_vector, frobenius_norm

logger = logging.getLogger(__name__)

Operator = Union[DenseSymMatrix, np.ndarray, Callable[[np.ndarray], np.ndarray]]

STOP_REASONS = ('rtol_r', 'rtol_rH', 'maxit', 'breakdown')

# Lanczos is exhausted once the next beta falls below this fraction of |H|
EXHAUSTION_TOL = 1e-13


@dataclass(frozen=True)
class KrylovSolution:
    """An inexact Newton step and how well it solves the Newton system"""
    step: np.ndarray
    rel_residual: float
    cokernel_residual: float
    iterations: int
    stop_reason: str
    hnorm: float
    hnorm_kind: str

    def to_dict(self) -> dict:
        return {'r': self.rel_residual, 'r_H': self.cokernel_residual,
                'iterations': self.iterations, 'stop_reason': self.stop_reason,
                'hnorm': self.hnorm, 'hnorm_kind': self.hnorm_kind}


def sym_givens(a: float, b: float):
    """Stable symmetric Givens rotation: returns c, s, r with [c s; s -c][a; b] = [r; 0]"""
    if b == 0:
        c = 1.0 if a == 0 else float(np.sign(a))
        return c, 0.0, abs(a)
    if a == 0:
        return 0.0, float(np.sign(b)), abs(b)
    if abs(b) > abs(a):
        t = a / b
        s = np.sign(b) / np.sqrt(1.0 + t * t)
        c = s * t
        return float(c), float(s), float(b / s)
    t = b / a
    c = np.sign(a) / np.sqrt(1.0 + t * t)
    s = c * t
    return float(c), float(s), float(a / c)


def as_operator(H: Operator, n: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(H, DenseSymMatrix):
        if H.n != n:
            raise DimensionError(f"matrix is {H.n}x{H.n} but the right-hand side has {n} entries")
        return H.matvec
    if isinstance(H, np.ndarray):
        return as_operator(DenseSymMatrix(H), n)
    if callable(H):
        return H
    raise TypeError(f"expected a matrix or a callable operator, got {type(H).__name__}")


def residual_norms(apply: Callable[[np.ndarray], np.ndarray], hnorm: float,
                   p: ParamVector, g: ParamVector):
    """(r, r_H) of step p for the system H p = -g; r is clipped to [0, 1]"""
    res = apply(p) + g
    res_norm = float(np.linalg.norm(res))
    denom = hnorm * float(np.linalg.norm(p)) + float(np.linalg.norm(g))
    r = 0.0 if denom == 0 else min(res_norm / denom, 1.0)
    if res_norm == 0 or hnorm == 0:
        r_H = 0.0
    else:
        r_H = float(np.linalg.norm(apply(res))) / (hnorm * res_norm)
    return r, r_H


def projected_step(basis, alphas, betas, beta1: float, cutoff: float) -> np.ndarray:
    """
    Minimum-length minimizer of |beta1 e1 - T y| mapped back through the
    Lanczos basis, where T is the (k+1) x k tridiagonal of the recurrence.
    Singular values of T at or below cutoff are dropped.
    """
    k = len(alphas)
    T = np.zeros((k + 1, k))
    idx = np.arange(k)
    T[idx, idx] = alphas
    T[idx + 1, idx] = betas
    T[idx[:-1], idx[:-1] + 1] = betas[:-1]
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    keep = s > cutoff
    y = Vt[keep].T @ (beta1 * U[0, keep] / s[keep])
    return np.asarray(basis).T @ y


def mrqlp_solve(H: Operator, g, cfg: Optional[SolverConfig] = None,
                hnorm: Optional[float] = None) -> KrylovSolution:
    """
    Minimum-length least-squares Newton step p ~ -H^+ g.

    Args:
        H: DenseSymMatrix/ndarray, or a callable v -> Hv
        g: gradient at the current point
        cfg: tolerances (rtol, maxit, reorthogonalize, rank_tol)
        hnorm: norm of H used in r and r_H; defaults to the Frobenius norm of
            dense input and to the Lanczos estimate for operators

    Raises:
        SolverBreakdown: a product with H returned NaN or Inf
    """
    cfg = cfg or SolverConfig()
    g = as_vector(g, name='g')
    n = g.shape[0]
    apply = as_operator(H, n)
    if hnorm is not None:
        hnorm_kind = 'given'
    elif isinstance(H, (DenseSymMatrix, np.ndarray)):
        hnorm = frobenius_norm(H if isinstance(H, DenseSymMatrix) else DenseSymMatrix(H))
        hnorm_kind = 'frobenius'
    else:
        hnorm_kind = 'lanczos_estimate'
    rtol = cfg.rtol
    maxit = cfg.maxit_for(n)
    # curvature below the solve tolerance is not resolved and counts as kernel
    rank_cut = max(cfg.rank_tol, rtol)

    def product(v, iteration, what):
        out = np.asarray(apply(v), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise SolverBreakdown(f"non-finite value in {what}", iteration=iteration)
        return out

    b = -g
    beta1 = float(np.linalg.norm(b))
    x = np.zeros(n)
    if beta1 == 0:
        return KrylovSolution(x, 0.0, 0.0, 0, 'rtol_r', float(hnorm or 0.0), hnorm_kind)

    r1 = b.copy()
    r2 = b.copy()
    r3 = b.copy()
    basis = [] if cfg.reorthogonalize else None
    alphas, betas = [], []

    flag = None
    iters = 0
    beta = 0.0
    tau = 0.0
    taul = 0.0
    phi = beta1
    betan = beta1
    cs, sn = -1.0, 0.0
    cr1, sr1 = -1.0, 0.0
    cr2, sr2 = -1.0, 0.0
    dltan = 0.0
    eplnn = 0.0
    gama = gamal = gamal2 = 0.0
    eta = etal = etal2 = 0.0
    vepln = veplnl = veplnl2 = 0.0
    ul3 = ul2 = ul = u = 0.0
    xl2norm = 0.0
    xnorm = 0.0
    Anorm = 0.0
    w = np.zeros(n)
    wl = np.zeros(n)
    xl2 = np.zeros(n)

    while flag is None and iters < maxit:
        iters += 1
        betal = beta
        beta = betan
        v = r3 / beta
        if basis is not None:
            basis.append(v)
        r3 = product(v, iters, 'Hessian-vector product')
        if iters > 1:
            r3 = r3 - r1 * (beta / betal)
        alfa = float(r3 @ v)
        alphas.append(alfa)
        r3 = r3 - r2 * (alfa / beta)
        if basis is not None:
            V = np.array(basis)
            for _ in range(2):
                r3 = r3 - V.T @ (V @ r3)
        r1 = r2
        r2 = r3
        betan = float(np.linalg.norm(r3))
        betas.append(betan)
        pnorm = float(np.sqrt(betal ** 2 + alfa ** 2 + betan ** 2))
        exhausted = betan <= EXHAUSTION_TOL * max(Anorm, pnorm)

        if iters == 1 and exhausted:
            # b is an eigenvector of H
            if abs(alfa) > rank_cut * (hnorm or pnorm):
                x = b / alfa
            Anorm = pnorm
            flag = 'exhausted'
            break

        # previous left rotation
        dbar = dltan
        dlta = cs * dbar + sn * alfa
        epln = eplnn
        gbar = sn * dbar - cs * alfa
        eplnn = sn * betan
        dltan = -cs * betan
        # current left rotation
        gamal2 = gamal
        gamal = gama
        cs, sn, gama = sym_givens(gbar, betan)
        taul2 = taul
        taul = tau
        tau = cs * phi
        phi = sn * phi
        # previous right rotation P_{k-2,k}
        if iters > 2:
            veplnl2 = veplnl
            etal2 = etal
            etal = eta
            dlta_tmp = sr2 * vepln - cr2 * dlta
            veplnl = cr2 * vepln + sr2 * dlta
            dlta = dlta_tmp
            eta = sr2 * gama
            gama = -cr2 * gama
        # current right rotation P_{k-1,k}
        if iters > 1:
            cr1, sr1, gamal = sym_givens(gamal, dlta)
            vepln = sr1 * gama
            gama = -cr1 * gama

        # solution coordinates; diagonals below the rank threshold count as zero
        guard = rank_cut * max(Anorm, pnorm)
        ul4 = ul3
        ul3 = ul2
        if iters > 2:
            ul2 = (taul2 - etal2 * ul4 - veplnl2 * ul3) / gamal2 if abs(gamal2) > guard else 0.0
        if iters > 1:
            ul = (taul - etal * ul3 - veplnl * ul2) / gamal if abs(gamal) > guard else 0.0
        singular = abs(gama) <= guard
        u = 0.0 if singular else (tau - eta * ul2 - vepln * ul) / gama
        xl2norm = float(np.sqrt(xl2norm ** 2 + ul2 ** 2))
        xnorm = float(np.sqrt(xl2norm ** 2 + ul ** 2 + u ** 2))

        # QLP update of the basis W and the iterate
        if iters == 1:
            wl2 = wl
            wl = v * sr1
            w = -v * cr1
        elif iters == 2:
            wl2 = wl
            wl = w * cr1 + v * sr1
            w = w * sr1 - v * cr1
        else:
            wl2 = wl
            wl = w
            w = wl2 * sr2 - v * cr2
            wl2 = wl2 * cr2 + v * sr2
            v_rot = wl * cr1 + w * sr1
            w = wl * sr1 - w * cr1
            wl = v_rot
        xl2 = xl2 + wl2 * ul2
        x = xl2 + wl * ul + w * u

        # next right rotation P_{k-1,k+1}
        cr2, sr2, gamal = sym_givens(gamal, eplnn)

        Anorm = max(Anorm, pnorm, abs(gamal), abs(gama))
        scale = hnorm if hnorm is not None else Anorm
        # a zeroed diagonal leaves its tau component in the residual
        rnorm = float(np.hypot(phi, tau)) if singular else abs(phi)
        relres = rnorm / (scale * xnorm + beta1)
        rootl = float(np.sqrt(gbar ** 2 + dltan ** 2))
        relAresl = rootl / scale if scale > 0 else 0.0
        logger.debug("krylov iter %d: relres=%.3e relAres=%.3e |x|=%.3e", iters, relres, relAresl, xnorm)

        if relres <= rtol or relAresl <= rtol or exhausted or iters >= maxit:
            # relAresl belongs to the previous iterate; stop on explicit residuals only
            candidate = x if basis is None else projected_step(basis, alphas, betas, beta1, rank_cut * Anorm)
            r, r_H = residual_norms(lambda vec: product(vec, iters, 'residual check'), scale, candidate, g)
            if r <= rtol or r_H <= rtol or exhausted or iters >= maxit:
                x = candidate
                flag = 'exhausted' if exhausted else 'checked'
            else:
                logger.debug("krylov iter %d: estimates met rtol but r=%.3e r_H=%.3e", iters, r, r_H)

    if hnorm is None:
        hnorm = Anorm
    if not np.all(np.isfinite(x)):
        raise SolverBreakdown("non-finite Newton step", iteration=iters)
    r, r_H = residual_norms(lambda vec: product(vec, iters, 'residual check'), hnorm, x, g)

    if r <= rtol:
        reason = 'rtol_r'
    elif r_H <= rtol:
        reason = 'rtol_rH'
    else:
        reason = 'breakdown' if flag == 'exhausted' else 'maxit'
    logger.debug("krylov stop %s after %d iterations (r=%.3e r_H=%.3e)", reason, iters, r, r_H)
    return KrylovSolution(x, r, r_H, iters, reason, float(hnorm), hnorm_kind)
