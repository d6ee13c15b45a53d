"""Conditional multinomial logit estimation."""
from __future__ import annotations

import numpy as np

from .kernels import sequence_log_probs
from .model import ChoiceArrays, ChoiceSituation, Dataset, FitResult
from .optimize import (
    OptimizerOptions,
    SingularInformationError,
    bhhh_maximize,
    opg_covariance,
    z_inference,
)


def mnl_choice_prob(beta, situation: "ChoiceSituation | np.ndarray") -> np.ndarray:
    """Logit probabilities over a situation's alternatives (max-subtracted softmax)."""
    X = situation.matrix() if isinstance(situation, ChoiceSituation) else np.atleast_2d(situation)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite covariates")
    b = np.asarray(beta, dtype=float)
    v = X @ b
    e = np.exp(v - v.max())
    return e / e.sum()


def _situation_arrays(arrays: ChoiceArrays) -> ChoiceArrays:
    """Same rows, with every situation treated as its own sequence."""
    return ChoiceArrays(arrays.X, arrays.sit_ptr, np.arange(arrays.n_situations + 1, dtype=np.int64),
                        arrays.chosen)


def _tile(beta: np.ndarray, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(beta, dtype=float), (n, 1, beta.size))


def mnl_loglik_value(beta, arrays: ChoiceArrays, threads: int = 1) -> float:
    log_s, _ = sequence_log_probs(arrays, _tile(np.asarray(beta, float), arrays.n_sequences),
                                  want_grad=False, threads=threads)
    return float(np.sum(log_s[:, 0]))


def mnl_scores(beta, arrays: ChoiceArrays, threads: int = 1) -> np.ndarray:
    """Per-situation score vectors, shape (n_situations, K)."""
    sa = _situation_arrays(arrays)
    _, grad = sequence_log_probs(sa, _tile(np.asarray(beta, float), sa.n_sequences), threads=threads)
    return grad[:, 0, :]


def mnl_log_likelihood(beta, data: "Dataset | ChoiceArrays", threads: int = 1) -> tuple[float, np.ndarray]:
    """Log-likelihood and its gradient."""
    arrays = data.arrays if isinstance(data, Dataset) else data
    return mnl_loglik_value(beta, arrays, threads), mnl_scores(beta, arrays, threads).sum(axis=0)


def mnl_hessian(beta, data: "Dataset | ChoiceArrays") -> np.ndarray:
    """Analytic Hessian: minus the sum of within-situation covariate covariances."""
    arrays = data.arrays if isinstance(data, Dataset) else data
    b = np.asarray(beta, dtype=float)
    K = arrays.n_characteristics
    H = np.zeros((K, K))
    for t in range(arrays.n_situations):
        X = arrays.X[arrays.sit_ptr[t] : arrays.sit_ptr[t + 1]]
        p = mnl_choice_prob(b, X)
        d = X - p @ X
        H -= (d * p[:, None]).T @ d
    return H


def fit_mnl(data: Dataset, init=None, opts: OptimizerOptions | None = None) -> FitResult:
    """Maximum-likelihood MNL fit by BHHH; covariance is the inverse OPG matrix."""
    opts = opts or OptimizerOptions()
    arrays = data.arrays
    K = arrays.n_characteristics
    x0 = np.zeros(K) if init is None else np.asarray(init, dtype=float)
    if x0.shape != (K,):
        raise ValueError(f"init must have length {K}")

    def objective(b, want_scores):
        f = mnl_loglik_value(b, arrays, opts.threads)
        return f, (mnl_scores(b, arrays, opts.threads) if want_scores else None)

    res = bhhh_maximize(objective, x0, opts)
    names = [f"beta{i + 1}" for i in range(K)]
    cov = _covariance(res, names)
    se, p = z_inference(res.x, cov)
    return FitResult(
        model="mnl",
        theta_hat=res.x.copy(),
        params=res.x.copy(),
        param_names=names,
        covariance=cov,
        std_errors=se,
        p_values=p,
        log_likelihood=res.loglik,
        n_iterations=res.n_iterations,
        converged=res.converged,
        n_draws=0,
        n_obs=arrays.n_situations,
        message=res.message,
        characteristic_names=data.characteristic_names,
    )


def _covariance(res, names) -> np.ndarray:
    try:
        return opg_covariance(res.scores, names)
    except SingularInformationError:
        if res.converged:
            raise
        return np.full((res.x.size, res.x.size), np.nan)
