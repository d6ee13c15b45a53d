"""Core data types: choice situations, sequences, mixing specifications,
parameter vectors and fit results, plus the choice-sequence interchange format.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

import numpy as np


class Family(str, enum.Enum):
    FIXED = "fixed"
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    UNIFORM = "uniform"
    TRIANGULAR = "triangular"

    @property
    def normal_base(self) -> bool:
        """True when draws start from a standard normal (and may be correlated)."""
        return self in (Family.NORMAL, Family.LOGNORMAL)

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown mixing family {value!r}") from None


@dataclass(frozen=True)
class Alternative:
    id: Hashable
    covariates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))


@dataclass(frozen=True)
class ChoiceSituation:
    alternatives: tuple[Alternative, ...]
    chosen_index: int

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "chosen_index", int(self.chosen_index))

    @property
    def chosen(self) -> Alternative:
        return self.alternatives[self.chosen_index]

    def matrix(self) -> np.ndarray:
        """Covariate rows as a (J, K) array."""
        return np.array([a.covariates for a in self.alternatives], dtype=float).reshape(
            len(self.alternatives), -1
        )


@dataclass(frozen=True)
class ChoiceSequence:
    chooser_id: Hashable
    situations: tuple[ChoiceSituation, ...]

    def __post_init__(self):
        object.__setattr__(self, "situations", tuple(self.situations))

    def __len__(self) -> int:
        return len(self.situations)


@dataclass(frozen=True)
class ChoiceArrays:
    """Flat, contiguous view of a dataset used by the likelihood kernels.

    ``X`` stacks every alternative row; ``sit_ptr`` gives row offsets per
    situation, ``seq_ptr`` situation offsets per sequence and ``chosen`` the
    absolute row of each situation's chosen alternative.
    """

    X: np.ndarray
    sit_ptr: np.ndarray
    seq_ptr: np.ndarray
    chosen: np.ndarray

    @property
    def n_sequences(self) -> int:
        return len(self.seq_ptr) - 1

    @property
    def n_situations(self) -> int:
        return len(self.sit_ptr) - 1

    @property
    def n_characteristics(self) -> int:
        return self.X.shape[1]

    def subset(self, lo: int, hi: int) -> "ChoiceArrays":
        """Sequences ``lo:hi`` re-based to start at zero."""
        s0, s1 = self.seq_ptr[lo], self.seq_ptr[hi]
        r0, r1 = self.sit_ptr[s0], self.sit_ptr[s1]
        return ChoiceArrays(
            X=self.X[r0:r1],
            sit_ptr=self.sit_ptr[s0 : s1 + 1] - r0,
            seq_ptr=self.seq_ptr[lo : hi + 1] - s0,
            chosen=self.chosen[s0:s1] - r0,
        )


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[ChoiceSequence, ...]
    characteristic_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "characteristic_names", tuple(self.characteristic_names))

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_situations(self) -> int:
        return sum(len(s) for s in self.sequences)

    @cached_property
    def arrays(self) -> ChoiceArrays:
        k = len(self.characteristic_names)
        rows: list[tuple[float, ...]] = []
        sit_ptr = [0]
        seq_ptr = [0]
        chosen = []
        for seq in self.sequences:
            for sit in seq.situations:
                chosen.append(len(rows) + sit.chosen_index)
                rows.extend(a.covariates for a in sit.alternatives)
                sit_ptr.append(len(rows))
            seq_ptr.append(len(sit_ptr) - 1)
        X = np.array(rows, dtype=float).reshape(len(rows), k)
        return ChoiceArrays(
            X=np.ascontiguousarray(X),
            sit_ptr=np.asarray(sit_ptr, dtype=np.int64),
            seq_ptr=np.asarray(seq_ptr, dtype=np.int64),
            chosen=np.asarray(chosen, dtype=np.int64),
        )


def validate_dataset(d: Dataset) -> list[str]:
    """Return a description of every invariant violation; empty when valid."""
    problems: list[str] = []
    k = len(d.characteristic_names)
    if k == 0:
        problems.append("no characteristics")
    for seq in d.sequences:
        sid = seq.chooser_id
        if not seq.situations:
            problems.append(f"empty sequence @ seq {sid}")
            continue
        for t, sit in enumerate(seq.situations):
            where = f"@ seq {sid}, t={t}"
            if not sit.alternatives:
                problems.append(f"empty alternative set {where}")
                continue
            if not 0 <= sit.chosen_index < len(sit.alternatives):
                problems.append(f"chosen_index out of range {where}")
            ids = [a.id for a in sit.alternatives]
            if len(set(ids)) != len(ids):
                problems.append(f"duplicate alternative ids {where}")
            for a in sit.alternatives:
                if len(a.covariates) != k:
                    problems.append(
                        f"covariate length {len(a.covariates)} != {k} for alternative {a.id} {where}"
                    )
                elif not all(math.isfinite(v) for v in a.covariates):
                    problems.append(f"non-finite covariate for alternative {a.id} {where}")
    return problems


# ---------------------------------------------------------------------------
# Mixing specification and parameter vector


@dataclass(frozen=True)
class MixingSpec:
    families: tuple[Family, ...]
    correlated: bool = False
    names: tuple[str, ...] = ()

    def __post_init__(self):
        fams = tuple(Family.parse(f) for f in self.families)
        if not fams:
            raise ValueError("MixingSpec needs at least one coefficient")
        names = tuple(self.names) or tuple(f"x{i + 1}" for i in range(len(fams)))
        if len(names) != len(fams):
            raise ValueError("names and families differ in length")
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "correlated", bool(self.correlated))

    @classmethod
    def all_fixed(cls, k: int, names: Sequence[str] = ()) -> "MixingSpec":
        return cls((Family.FIXED,) * k, False, tuple(names))

    @classmethod
    def from_json(cls, obj: dict) -> "MixingSpec":
        coefs = obj["coefficients"]
        return cls(
            families=tuple(Family.parse(c["family"]) for c in coefs),
            correlated=bool(obj.get("correlated", False)),
            names=tuple(str(c.get("name", f"x{i + 1}")) for i, c in enumerate(coefs)),
        )

    def to_json(self) -> dict:
        return {
            "coefficients": [
                {"name": n, "family": f.value} for n, f in zip(self.names, self.families)
            ],
            "correlated": self.correlated,
        }

    @property
    def n_coefficients(self) -> int:
        return len(self.families)

    @property
    def random_index(self) -> tuple[int, ...]:
        """Coefficients that carry a scale parameter (everything but Fixed)."""
        return tuple(i for i, f in enumerate(self.families) if f is not Family.FIXED)

    @property
    def correlated_index(self) -> tuple[int, ...]:
        """Coefficients entering the lower-triangular factor (empty if uncorrelated)."""
        if not self.correlated:
            return ()
        return tuple(i for i, f in enumerate(self.families) if f.normal_base)

    @property
    def n_corr(self) -> int:
        q = len(self.correlated_index)
        return q * (q - 1) // 2

    @property
    def n_params(self) -> int:
        return self.n_coefficients + len(self.random_index) + self.n_corr

    @property
    def is_fixed(self) -> bool:
        return not self.random_index

    def corr_pairs(self) -> list[tuple[int, int]]:
        """(row, col) coefficient indices of packed factor entries, row-major strict lower."""
        idx = self.correlated_index
        return [(idx[a], idx[b]) for a in range(len(idx)) for b in range(a)]

    def param_names(self) -> list[str]:
        names = [f"m{i + 1}" for i in range(self.n_coefficients)]
        names += [f"s{i + 1}" for i in self.random_index]
        names += [f"chol{r + 1}{c + 1}" for r, c in self.corr_pairs()]
        return names


@dataclass(frozen=True)
class ThetaVector:
    means: tuple[float, ...]
    scales: tuple[float, ...] = ()
    corr_factors: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("means", "scales", "corr_factors"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def pack(self) -> np.ndarray:
        return np.array(self.means + self.scales + self.corr_factors, dtype=float)

    @classmethod
    def unpack(cls, spec: MixingSpec, vec: Iterable[float]) -> "ThetaVector":
        v = np.asarray(vec, dtype=float).ravel()
        if v.size != spec.n_params:
            raise ValueError(f"expected {spec.n_params} parameters, got {v.size}")
        k, r = spec.n_coefficients, len(spec.random_index)
        return cls(tuple(v[:k]), tuple(v[k : k + r]), tuple(v[k + r :]))

    def check(self, spec: MixingSpec) -> None:
        if (
            len(self.means) != spec.n_coefficients
            or len(self.scales) != len(spec.random_index)
            or len(self.corr_factors) != spec.n_corr
        ):
            raise ValueError(
                f"theta dimensions ({len(self.means)}, {len(self.scales)}, "
                f"{len(self.corr_factors)}) do not match spec "
                f"({spec.n_coefficients}, {len(spec.random_index)}, {spec.n_corr})"
            )

    def factor(self, spec: MixingSpec) -> np.ndarray:
        """Lower-triangular factor over the normal-base block (identity-free: diagonal = scales)."""
        self.check(spec)
        k = spec.n_coefficients
        L = np.zeros((k, k))
        for i, s in zip(spec.random_index, self.scales):
            L[i, i] = s
        for (r, c), v in zip(spec.corr_pairs(), self.corr_factors):
            L[r, c] = v
        return L

    def with_scales(self, spec: MixingSpec) -> dict[int, float]:
        return dict(zip(spec.random_index, self.scales))

    def to_json(self) -> dict:
        return {
            "means": list(self.means),
            "scales": list(self.scales),
            "corr_factors": list(self.corr_factors),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ThetaVector":
        return cls(
            tuple(obj["means"]), tuple(obj.get("scales", ())), tuple(obj.get("corr_factors", ()))
        )


@dataclass
class FitResult:
    """Estimates and asymptotic inference from one fit.

    ``theta_hat`` is a :class:`ThetaVector` for mixed-logit fits and a plain
    coefficient array for MNL. ``params`` always holds the packed raw vector
    the covariance refers to.
    """

    model: str
    theta_hat: Any
    params: np.ndarray
    param_names: list[str]
    covariance: np.ndarray
    std_errors: np.ndarray
    p_values: np.ndarray
    log_likelihood: float
    n_iterations: int
    converged: bool
    n_draws: int = 0
    n_obs: int = 0
    message: str = ""
    spec: MixingSpec | None = None
    characteristic_names: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "param_names": list(self.param_names),
            "params": _floats(self.params),
            "std_errors": _floats(self.std_errors),
            "p_values": _floats(self.p_values),
            "covariance": [_floats(row) for row in np.atleast_2d(self.covariance)],
            "log_likelihood": float(self.log_likelihood),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "n_draws": int(self.n_draws),
            "n_obs": int(self.n_obs),
            "message": self.message,
            "characteristic_names": list(self.characteristic_names),
        }
        if self.spec is not None:
            out["spec"] = self.spec.to_json()
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "FitResult":
        spec = MixingSpec.from_json(obj["spec"]) if "spec" in obj else None
        params = np.array(obj["params"], dtype=float)
        theta = ThetaVector.unpack(spec, params) if spec is not None and obj["model"] == "rc" else params
        return cls(
            model=obj["model"],
            theta_hat=theta,
            params=params,
            param_names=list(obj["param_names"]),
            covariance=np.array(obj["covariance"], dtype=float).reshape(params.size, params.size),
            std_errors=np.array(obj["std_errors"], dtype=float),
            p_values=np.array(obj["p_values"], dtype=float),
            log_likelihood=float(obj["log_likelihood"]),
            n_iterations=int(obj["n_iterations"]),
            converged=bool(obj["converged"]),
            n_draws=int(obj.get("n_draws", 0)),
            n_obs=int(obj.get("n_obs", 0)),
            message=obj.get("message", ""),
            spec=spec,
            characteristic_names=tuple(obj.get("characteristic_names", ())),
            extra=obj.get("extra", {}),
        )


def _floats(a) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]


# ---------------------------------------------------------------------------
# Interchange format

_FIXED_COLUMNS = ("chooser_id", "situation_index", "alternative_id", "is_chosen")


def write_dataset(d: Dataset, path_or_buf) -> None:
    """Write ``d`` as one CSV line per alternative (UTF-8, LF line endings)."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIXED_COLUMNS + d.characteristic_names)
        for seq in d.sequences:
            for t, sit in enumerate(seq.situations):
                for j, a in enumerate(sit.alternatives):
                    w.writerow(
                        [seq.chooser_id, t, a.id, int(j == sit.chosen_index)]
                        + [repr(float(v)) for v in a.covariates]
                    )
    finally:
        if own:
            fh.close()


def read_dataset(path_or_buf) -> Dataset:
    """Inverse of :func:`write_dataset`. Ids are read back as strings."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, encoding="utf-8", newline="") if own else path_or_buf
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:4]) != _FIXED_COLUMNS:
            raise ValueError(f"bad interchange header {header[:4]}")
        names = tuple(header[4:])
        sequences: list[ChoiceSequence] = []
        cur_id = None
        sits: list[ChoiceSituation] = []
        alts: list[Alternative] = []
        chosen = -1
        cur_t = None

        def close_sit():
            nonlocal alts, chosen
            if alts:
                sits.append(ChoiceSituation(tuple(alts), chosen))
            alts, chosen = [], -1

        for row in reader:
            if not row:
                continue
            cid, t = row[0], int(row[1])
            if cid != cur_id:
                close_sit()
                if cur_id is not None:
                    sequences.append(ChoiceSequence(cur_id, tuple(sits)))
                cur_id, sits, cur_t = cid, [], t
            elif t != cur_t:
                close_sit()
                cur_t = t
            if int(row[3]) == 1:
                chosen = len(alts)
            alts.append(Alternative(row[2], tuple(float(v) for v in row[4:])))
        close_sit()
        if cur_id is not None:
            sequences.append(ChoiceSequence(cur_id, tuple(sits)))
        return Dataset(tuple(sequences), names)
    finally:
        if own:
            fh.close()


def dataset_to_string(d: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(d, buf)
    return buf.getvalue()
