"""Berndt-Hall-Hall-Hausman ascent with backtracking line search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

# objective(params, want_scores) -> (loglik, per-observation score matrix or None)
Objective = Callable[[np.ndarray, bool], tuple[float, "np.ndarray | None"]]


class SingularInformationError(np.linalg.LinAlgError):
    """Outer-product-of-gradients matrix is singular at the reported point."""

    def __init__(self, cond: float, names=None):
        self.cond = cond
        msg = f"outer-product-of-gradients matrix is singular (condition number {cond:.3g})"
        if names:
            msg += f"; parameters: {', '.join(names)}"
        super().__init__(msg)


@dataclass
class OptimizerOptions:
    tol: float = 1e-6
    ftol: float = 1e-9
    max_iter: int = 200
    armijo: float = 1e-4
    max_halvings: int = 40
    max_abs_param: float | None = 50.0
    threads: int = 1


@dataclass
class OptimizeResult:
    x: np.ndarray
    loglik: float
    scores: np.ndarray
    gradient: np.ndarray
    n_iterations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def bhhh_maximize(objective: Objective, x0, opts: OptimizerOptions | None = None) -> OptimizeResult:
    """Maximize a sum of per-observation log-likelihoods.

    The search direction solves ``(G'G) d = g`` where ``G`` stacks the
    per-observation scores; steps are halved until the Armijo condition
    holds. When ``d`` is not an ascent direction the raw gradient is used.

    Convergence is checked before each step: ``max|g| < tol``, or the
    improvement predicted by the BHHH quadratic model, ``g'd / 2``, below
    ``ftol * |loglik|``, so a returned optimum is a fixed point of the
    iteration. Hitting ``max_iter``, a failed line search or any ``|x_k|``
    above ``max_abs_param`` ends the run unconverged.
    """
    opts = opts or OptimizerOptions()
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point must be finite")
    f, G = objective(x, True)
    if not np.isfinite(f):
        raise FloatingPointError("log-likelihood is not finite at the initial point")
    history = [f]
    converged, message = False, "maximum iterations reached"
    it = 0
    while True:
        g = G.sum(axis=0)
        if np.max(np.abs(g), initial=0.0) < opts.tol:
            converged, message = True, "gradient tolerance reached"
            break
        d = _bhhh_direction(G, g)
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= 0:
            d = g / max(1.0, np.linalg.norm(g))
            slope = float(g @ d)
        elif 0.5 * slope < opts.ftol * abs(f):
            converged, message = True, "predicted relative improvement below ftol"
            break
        if it >= opts.max_iter:
            break
        it += 1
        step = 1.0
        for _ in range(opts.max_halvings):
            x_new = x + step * d
            f_new, _ = objective(x_new, False)
            if np.isfinite(f_new) and f_new >= f + opts.armijo * step * slope:
                break
            step *= 0.5
        else:
            message = "line search failed to improve the log-likelihood"
            break
        f, G = objective(x_new, True)
        x = x_new
        history.append(f)
        if opts.max_abs_param is not None and np.max(np.abs(x)) > opts.max_abs_param:
            message = (
                f"parameter magnitude exceeded {opts.max_abs_param:g}; "
                "the likelihood may have no finite maximizer (perfect separation)"
            )
            break
    log.debug("bhhh: %d iterations, loglik %.6f, %s", it, f, message)
    return OptimizeResult(x, float(f), G, G.sum(axis=0), it, converged, message, history)


def _bhhh_direction(G: np.ndarray, g: np.ndarray) -> np.ndarray:
    B = G.T @ G
    try:
        return np.linalg.solve(B, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(B, g, rcond=None)[0]


def opg_covariance(G: np.ndarray, names=None, max_cond: float = 1e14) -> np.ndarray:
    """Inverse of the outer product of per-observation scores."""
    B = G.T @ G
    cond = np.linalg.cond(B) if B.size else 1.0
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularInformationError(float(cond), names)
    cov = np.linalg.inv(B)
    return 0.5 * (cov + cov.T)


def z_inference(params: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standard errors and two-sided normal p-values for H0: param = 0."""
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, params / se, np.where(params == 0, 0.0, np.inf))
    p = 2.0 * stats.norm.sf(np.abs(z))
    return se, np.clip(p, 0.0, 1.0)
