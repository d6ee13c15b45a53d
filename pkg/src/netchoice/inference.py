"""Post-estimation interpretation: medians, substitution rates, probability
intervals, Wald and likelihood-ratio tests, and report tables."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import Family, FitResult, MixingSpec

RANDOMNESS_CAVEAT = "heuristic — not a formal test"
DEFAULT_RANDOM_THRESHOLD = 0.10


# ---------------------------------------------------------------------------
# Distribution summaries


def coefficient_median(family, m: float, s: float = 0.0) -> float:
    fam = Family.parse(family)
    return math.exp(m) if fam is Family.LOGNORMAL else float(m)


def substitution_rate(numerator_median: float, denominator_median: float) -> float:
    """How much of the denominator characteristic offsets one unit of the numerator one."""
    if denominator_median == 0:
        raise ZeroDivisionError("denominator median is zero")
    return numerator_median / denominator_median


def _triangular_ppf(q):
    q = np.asarray(q, dtype=float)
    return np.where(q < 0.5, np.sqrt(2 * q) - 1, 1 - np.sqrt(2 * (1 - q)))


def coefficient_ppf(family, m: float, s: float, q):
    fam = Family.parse(family)
    s = abs(s)
    q = np.asarray(q, dtype=float)
    if fam is Family.FIXED or s == 0:
        return np.full_like(q, m) if fam is not Family.LOGNORMAL else np.full_like(q, math.exp(m))
    if fam is Family.NORMAL:
        return stats.norm.ppf(q, m, s)
    if fam is Family.LOGNORMAL:
        return np.exp(stats.norm.ppf(q, m, s))
    if fam is Family.UNIFORM:
        return m + s * (2 * q - 1)
    return m + s * _triangular_ppf(q)


def coefficient_cdf(family, m: float, s: float, x):
    fam = Family.parse(family)
    s = abs(s)
    x = np.asarray(x, dtype=float)
    if fam is Family.NORMAL:
        return stats.norm.cdf(x, m, s)
    if fam is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            return np.where(x > 0, stats.norm.cdf(np.log(np.where(x > 0, x, 1.0)), m, s), 0.0)
    if fam is Family.UNIFORM:
        return np.clip((x - (m - s)) / (2 * s), 0, 1)
    if fam is Family.TRIANGULAR:
        z = np.clip((x - m) / s, -1, 1)
        return np.where(z < 0, 0.5 * (1 + z) ** 2, 1 - 0.5 * (1 - z) ** 2)
    return (x >= m).astype(float)


def coefficient_pdf(family, m: float, s: float, x):
    fam = Family.parse(family)
    s = abs(s)
    x = np.asarray(x, dtype=float)
    if fam is Family.NORMAL:
        return stats.norm.pdf(x, m, s)
    if fam is Family.LOGNORMAL:
        return stats.lognorm.pdf(x, s, scale=math.exp(m))
    if fam is Family.UNIFORM:
        return np.where(np.abs(x - m) <= s, 0.5 / s, 0.0)
    if fam is Family.TRIANGULAR:
        return np.clip(1 - np.abs(x - m) / s, 0, None) / s
    raise ValueError("Fixed coefficients have no density")


def probability_interval(family, m: float, s: float, mass: float) -> tuple[float, float]:
    """Equal-tail interval holding ``mass`` of the coefficient distribution."""
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    a = (1 - mass) / 2
    lo, hi = coefficient_ppf(family, m, s, [a, 1 - a])
    return float(lo), float(hi)


def interval_mass(family, m: float, s: float, lo: float, hi: float) -> float:
    lo_c, hi_c = coefficient_cdf(family, m, s, [lo, hi])
    return float(hi_c - lo_c)


# ---------------------------------------------------------------------------
# Tests


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    p_value: float

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "dof": self.dof, "p_value": self.p_value}


def restriction_matrix(fit: FitResult, names) -> np.ndarray:
    """Rows selecting the named parameters (for H0: all of them are zero)."""
    idx = [fit.param_names.index(n) for n in names]
    R = np.zeros((len(idx), fit.n_params))
    R[np.arange(len(idx)), idx] = 1.0
    return R


def wald_test(fit: FitResult, R, q=None) -> TestResult:
    """Wald test of the linear restriction ``R theta = q``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != fit.n_params:
        raise ValueError(f"restriction has {R.shape[1]} columns, fit has {fit.n_params} parameters")
    q = np.zeros(R.shape[0]) if q is None else np.asarray(q, dtype=float).ravel()
    rank = np.linalg.matrix_rank(R)
    if rank < R.shape[0]:
        raise ValueError("restriction rows are linearly dependent")
    diff = R @ fit.params - q
    V = R @ fit.covariance @ R.T
    try:
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        W = float(diff @ np.linalg.solve(V, diff))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("restricted covariance is singular") from None
    W = max(W, 0.0)
    return TestResult(W, int(rank), float(stats.chi2.sf(W, rank)))


def lr_test(fit_full: FitResult, fit_restricted: FitResult, dof: int | None = None,
            tol: float = 1e-6) -> TestResult:
    """Likelihood-ratio test of a restricted model nested in the full one."""
    lr = 2.0 * (fit_full.log_likelihood - fit_restricted.log_likelihood)
    if lr < -tol:
        raise ValueError(
            f"negative likelihood-ratio statistic {lr:.3g}: models are not nested or an optimizer failed"
        )
    lr = max(lr, 0.0)
    if dof is None:
        dof = fit_full.n_params - fit_restricted.n_params
    if dof < 1:
        if lr == 0.0:
            return TestResult(0.0, int(dof), 1.0)
        raise ValueError("full model must have more parameters than the restricted one")
    return TestResult(lr, int(dof), float(stats.chi2.sf(lr, dof)))


def derived_fit(fit: FitResult) -> FitResult:
    """A view of an RC fit over its reported parameters (means, implied
    standard deviations, implied correlations) with delta-method covariance."""
    if fit.model != "rc":
        return fit
    rep = fit.extra["reported"]
    values = np.array(rep["values"], dtype=float)
    return FitResult(
        model="rc-reported",
        theta_hat=values,
        params=values,
        param_names=list(rep["names"]),
        covariance=np.array(rep["covariance"], dtype=float),
        std_errors=np.array(rep["std_errors"], dtype=float),
        p_values=np.array(rep["p_values"], dtype=float),
        log_likelihood=fit.log_likelihood,
        n_iterations=fit.n_iterations,
        converged=fit.converged,
        n_draws=fit.n_draws,
        n_obs=fit.n_obs,
        spec=fit.spec,
        characteristic_names=fit.characteristic_names,
    )


def randomness_diagnostic(fit: FitResult, threshold: float = DEFAULT_RANDOM_THRESHOLD) -> dict:
    """Per-coefficient guess at whether its distribution is degenerate.

    A scale whose z-test of zero has ``p > threshold`` is reported as
    likely deterministic.
    """
    view = derived_fit(fit)
    verdicts = []
    for name, value, se, p in zip(view.param_names, view.params, view.std_errors, view.p_values):
        m = re.fullmatch(r"s(\d+)", name)
        if not m:
            continue
        i = int(m.group(1)) - 1
        char = fit.characteristic_names[i] if i < len(fit.characteristic_names) else name
        verdicts.append({
            "parameter": name,
            "characteristic": char,
            "scale": float(value),
            "std_error": float(se),
            "p_value": float(p),
            "verdict": "likely-deterministic" if p > threshold else "likely-random",
        })
    return {"caveat": RANDOMNESS_CAVEAT, "threshold": threshold, "coefficients": verdicts}


# ---------------------------------------------------------------------------
# Tables


def significance_stars(p: float) -> str:
    """R-style codes: *** < 0.001, ** < 0.01, * < 0.05, • < 0.1."""
    if p is None or not math.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "•"
    return ""


def format_p(p: float) -> str:
    if p is None or not math.isfinite(p):
        return "nan"
    text = "<0.0001" if p < 1e-4 else f"{p:.4f}"
    return text + significance_stars(p)


def _characteristic(name: str, chars) -> str:
    m = re.fullmatch(r"(?:beta|m|s)(\d+)", name)
    if m:
        i = int(m.group(1)) - 1
        return chars[i] if i < len(chars) else name
    return "-"


def table_rows(fit: FitResult) -> list[dict]:
    view = derived_fit(fit)
    return [
        {
            "parameter": n,
            "characteristic": _characteristic(n, fit.characteristic_names),
            "coefficient": float(v),
            "std_error": float(se),
            "p_value": float(p),
            "stars": significance_stars(float(p)),
        }
        for n, v, se, p in zip(view.param_names, view.params, view.std_errors, view.p_values)
    ]


def format_table(fit: FitResult) -> str:
    header = ("Parameter", "Characteristic", "Coefficient", "Standard Error", "p-value")
    body = [
        (r["parameter"], r["characteristic"], f"{r['coefficient']:.4f}", f"{r['std_error']:.4f}",
         format_p(r["p_value"]))
        for r in table_rows(fit)
    ]
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(header)]
    line = "  ".join("-" * w for w in widths)
    out = [line, "  ".join(h.ljust(w) for h, w in zip(header, widths)), line]
    out += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    out.append(line)
    out.append(
        f"log-likelihood {fit.log_likelihood:.4f}; observations {fit.n_obs}; "
        f"iterations {fit.n_iterations}; converged {fit.converged}"
        + (f"; draws {fit.n_draws}" if fit.n_draws else "")
    )
    out.append("Significance: *** 0.001, ** 0.01, * 0.05, • 0.1")
    return "\n".join(out)


def medians_report(fit: FitResult) -> list[dict]:
    """Median of every coefficient distribution (MNL coefficients as-is)."""
    spec: MixingSpec | None = fit.spec
    rows = []
    if spec is None:
        for i, b in enumerate(fit.params):
            rows.append({"coefficient": f"beta{i + 1}", "characteristic": _characteristic(f"beta{i + 1}", fit.characteristic_names), "median": float(b)})
        return rows
    for i, fam in enumerate(spec.families):
        rows.append({
            "coefficient": f"beta{i + 1}",
            "characteristic": _characteristic(f"m{i + 1}", fit.characteristic_names),
            "family": fam.value,
            "median": coefficient_median(fam, float(fit.params[i])),
        })
    return rows
