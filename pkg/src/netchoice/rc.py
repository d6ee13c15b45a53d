"""Repeated-choice mixed logit by maximum simulated likelihood.

Each chooser's draws are fixed for the whole optimization (common random
numbers), so the simulated log-likelihood is a smooth deterministic function
of the packed parameter vector ``(means, scales, factor entries)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import sequence_log_probs
from .mnl import fit_mnl, mnl_choice_prob
from .model import (
    ChoiceSequence,
    ChoiceSituation,
    Dataset,
    Family,
    FitResult,
    MixingSpec,
    ThetaVector,
)
from .optimize import (
    OptimizerOptions,
    SingularInformationError,
    bhhh_maximize,
    opg_covariance,
    z_inference,
)
from .rng import (
    DEFAULT_DRAWS,
    DrawMatrix,
    Stream,
    base_draws,
    base_uniforms,
    halton_sequence,
    transform_draws,
)


class SimulationUnderflowError(FloatingPointError):
    def __init__(self, chooser_ids):
        self.chooser_ids = list(chooser_ids)
        super().__init__(
            "simulated sequence probability underflowed to zero for chooser(s) "
            + ", ".join(map(str, self.chooser_ids[:10]))
        )


@dataclass
class RCOptions(OptimizerOptions):
    n_draws: int = DEFAULT_DRAWS
    seed: int = 0
    draw_scheme: str = "pseudo"
    halton_skip: int = 0
    # the scale bound guard is for MNL separation; mixed logit keeps it off
    max_abs_param: float | None = None


def rc_conditional_prob(beta_n, situation: ChoiceSituation) -> np.ndarray:
    """Logit probabilities for one situation given a single coefficient draw."""
    return mnl_choice_prob(beta_n, situation)


def _seq_log_prob(betas: np.ndarray, seq: ChoiceSequence) -> np.ndarray:
    data = Dataset((seq,), tuple(f"x{i}" for i in range(betas.shape[-1])))
    log_s, _ = sequence_log_probs(data.arrays, betas[None, :, :], want_grad=False)
    return log_s[0]


def sequence_prob(beta_n, seq: ChoiceSequence) -> float:
    """Product over the sequence of chosen-alternative probabilities."""
    b = np.asarray(beta_n, dtype=float).reshape(1, -1)
    return float(math.exp(_seq_log_prob(b, seq)[0]))


def log_mean_exp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.mean(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def simulated_seq_prob(spec: MixingSpec, theta: ThetaVector, seq: ChoiceSequence,
                       draws: DrawMatrix) -> float:
    """Average of the sequence probability over coefficient draws."""
    theta.check(spec)
    if draws.draws.shape[1] != spec.n_coefficients:
        raise ValueError("draw matrix width does not match the spec")
    return float(math.exp(log_mean_exp(_seq_log_prob(np.asarray(draws.draws), seq))))


def sequence_base_draws(spec: MixingSpec, n_sequences: int, n_draws: int, seed: int,
                        scheme: str = "pseudo", halton_skip: int = 0) -> np.ndarray:
    """Base draws of shape (n_sequences, R, K).

    Pseudo-random draws for sequence ``n`` come from the stream
    ``(seed, n)``; Halton draws assign sequence ``n`` the consecutive block of
    points ``n*R .. (n+1)*R - 1`` after ``halton_skip``.
    """
    K = spec.n_coefficients
    if scheme == "pseudo":
        root = Stream(seed)
        u = np.empty((n_sequences, n_draws, K))
        for n in range(n_sequences):
            u[n] = base_uniforms(spec, n_draws, root.child(n), "pseudo")
    elif scheme == "halton":
        u = halton_sequence(K, n_sequences * n_draws, skip=halton_skip).reshape(n_sequences, n_draws, K)
    else:
        raise ValueError(f"unknown draw scheme {scheme!r}")
    return base_draws(spec, u)


class SimulatedLikelihood:
    """Simulated log-likelihood and per-chooser scores for a fixed draw set."""

    def __init__(self, data: Dataset, spec: MixingSpec, n_draws: int = DEFAULT_DRAWS, seed: int = 0,
                 scheme: str = "pseudo", halton_skip: int = 0, threads: int = 1, base=None):
        if spec.n_coefficients != len(data.characteristic_names):
            raise ValueError(
                f"spec has {spec.n_coefficients} coefficients but data has "
                f"{len(data.characteristic_names)} characteristics"
            )
        self.data = data
        self.spec = spec
        self.arrays = data.arrays
        self.threads = threads
        if base is None:
            base = sequence_base_draws(spec, len(data), n_draws, seed, scheme, halton_skip)
        self.base = np.ascontiguousarray(base)
        self.n_draws = self.base.shape[1]
        self._lognormal = np.array([f is Family.LOGNORMAL for f in spec.families])
        self._rows, self._cols = self._jacobian_layout()

    def _jacobian_layout(self):
        spec = self.spec
        rows = list(spec.random_index) + [r for r, _ in spec.corr_pairs()]
        cols = list(spec.random_index) + [c for _, c in spec.corr_pairs()]
        return np.array(rows, dtype=int), np.array(cols, dtype=int)

    def theta(self, params) -> ThetaVector:
        return ThetaVector.unpack(self.spec, params)

    def per_sequence(self, params, want_scores: bool = True):
        """``ln P_n`` for every chooser and, optionally, the (N, P) score matrix."""
        theta = self.theta(params)
        with np.errstate(over="ignore", invalid="ignore"):
            betas, latent = transform_draws(self.spec, theta, self.base)
            log_s, gb = sequence_log_probs(self.arrays, betas, want_grad=want_scores, threads=self.threads)
        lp = log_mean_exp(log_s, axis=1)
        if not want_scores:
            return lp, None
        w = np.exp(log_s - lp[:, None]) / self.n_draws  # posterior draw weights, rows sum to 1
        D = gb
        if self._lognormal.any():
            D = gb.copy()
            D[:, :, self._lognormal] *= betas[:, :, self._lognormal]
        score_m = np.einsum("nr,nrk->nk", w, D)
        if self._rows.size:
            score_s = np.einsum("nr,nrj->nj", w, D[:, :, self._rows] * self.base[:, :, self._cols])
            scores = np.concatenate([score_m, score_s], axis=1)
        else:
            scores = score_m
        return lp, scores

    def loglik(self, params, want_scores: bool = True):
        lp, scores = self.per_sequence(params, want_scores)
        f = float(np.sum(lp))
        if not math.isfinite(f):
            f = -math.inf
        return f, scores

    def gradient(self, params) -> np.ndarray:
        return self.loglik(params, True)[1].sum(axis=0)


def default_init(data: Dataset, spec: MixingSpec, opts: OptimizerOptions | None = None) -> ThetaVector:
    """Means from an MNL fit (log of it for LogNormal), scales 0.1, factors 0."""
    mnl = fit_mnl(data, opts=OptimizerOptions(threads=getattr(opts, "threads", 1)))
    means = []
    for b, fam in zip(mnl.params, spec.families):
        means.append(math.log(max(b, 1e-2)) if fam is Family.LOGNORMAL else float(b))
    return ThetaVector(tuple(means), (0.1,) * len(spec.random_index), (0.0,) * spec.n_corr)


def normalize_signs(spec: MixingSpec, params: np.ndarray, cov: np.ndarray | None = None):
    """Flip factor columns so every diagonal scale is non-negative.

    ``L -> L S`` with ``S`` a diagonal sign matrix leaves ``L L'`` (and the
    exact likelihood) unchanged; the covariance is transformed accordingly.
    """
    k = spec.n_coefficients
    flip = np.ones(params.size)
    scale_pos = {c: k + j for j, c in enumerate(spec.random_index)}
    sign = {c: (-1.0 if params[scale_pos[c]] < 0 else 1.0) for c in spec.random_index}
    for c, pos in scale_pos.items():
        flip[pos] = sign[c]
    base = k + len(spec.random_index)
    for j, (_, c) in enumerate(spec.corr_pairs()):
        flip[base + j] = sign[c]
    out = params * flip
    if cov is None:
        return out
    return out, cov * np.outer(flip, flip)


def reported_parameters(spec: MixingSpec, params: np.ndarray):
    """Means, implied standard deviations and implied correlations (normal scale)."""
    theta = ThetaVector.unpack(spec, params)
    L = theta.factor(spec)
    cov = L @ L.T
    names, values = [], []
    for i in range(spec.n_coefficients):
        names.append(f"m{i + 1}")
        values.append(params[i])
    for i in spec.random_index:
        names.append(f"s{i + 1}")
        values.append(math.sqrt(cov[i, i]))
    for r, c in spec.corr_pairs():
        names.append(f"cor{c + 1}{r + 1}")
        den = math.sqrt(cov[r, r] * cov[c, c])
        values.append(cov[r, c] / den if den > 0 else 0.0)
    return names, np.array(values)


def _reported_view(spec: MixingSpec, params: np.ndarray, cov: np.ndarray) -> dict:
    names, values = reported_parameters(spec, params)
    if not spec.correlated:
        # identity apart from |s|, which normalize_signs already applied
        rcov = cov
    else:
        h = 1e-6
        J = np.empty((values.size, params.size))
        for j in range(params.size):
            e = np.zeros(params.size)
            e[j] = h
            J[:, j] = (reported_parameters(spec, params + e)[1] - reported_parameters(spec, params - e)[1]) / (2 * h)
        rcov = J @ cov @ J.T
    se, p = z_inference(values, rcov)
    return {
        "names": names,
        "values": values.tolist(),
        "std_errors": se.tolist(),
        "p_values": p.tolist(),
        "covariance": rcov.tolist(),
    }


def fit_rc(data: Dataset, spec: MixingSpec, init: ThetaVector | None = None,
           opts: RCOptions | None = None) -> FitResult:
    """Maximum simulated likelihood fit of the repeated-choice mixed logit."""
    opts = opts or RCOptions()
    sim = SimulatedLikelihood(data, spec, opts.n_draws, opts.seed, opts.draw_scheme,
                              opts.halton_skip, opts.threads)
    if init is None:
        init = default_init(data, spec, opts)
    init.check(spec)
    x0 = init.pack()
    lp0, _ = sim.per_sequence(x0, want_scores=False)
    bad = ~np.isfinite(lp0)
    if bad.any():
        raise SimulationUnderflowError([data.sequences[i].chooser_id for i in np.flatnonzero(bad)])

    res = bhhh_maximize(sim.loglik, x0, opts)
    raw_names = spec.param_names()
    try:
        cov = opg_covariance(res.scores, raw_names)
    except SingularInformationError:
        if res.converged:
            raise
        cov = np.full((res.x.size, res.x.size), np.nan)
    # raw parameters are kept as optimized: with a finite draw set the
    # simulated likelihood is not symmetric in the sign of a scale, so only
    # the reported view is sign-normalized
    params = res.x.copy()
    se, p = z_inference(params, cov)
    return FitResult(
        model="rc",
        theta_hat=ThetaVector.unpack(spec, params),
        params=params,
        param_names=raw_names,
        covariance=cov,
        std_errors=se,
        p_values=p,
        log_likelihood=res.loglik,
        n_iterations=res.n_iterations,
        converged=res.converged,
        n_draws=sim.n_draws,
        n_obs=len(data),
        message=res.message,
        spec=spec,
        characteristic_names=data.characteristic_names,
        extra={
            "reported": _reported_view(spec, *normalize_signs(spec, params, cov)),
            "draw_scheme": opts.draw_scheme,
            "seed": int(opts.seed),
        },
    )
