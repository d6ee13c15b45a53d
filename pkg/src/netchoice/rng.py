"""Seeded streams and sampling primitives for simulation and data generation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtri

from .model import Family, MixingSpec, ThetaVector

DEFAULT_DRAWS = 100
DrawScheme = Literal["pseudo", "halton"]

_TWO53 = float(2**53)


@dataclass(frozen=True)
class Stream:
    """A splittable, value-typed random stream.

    A stream is identified by a 64-bit master seed and a path of integer keys;
    ``child`` extends the path. Two streams with the same seed and path always
    yield identical generators, whichever worker builds them.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", tuple(int(k) for k in self.path))

    def child(self, *keys: int) -> "Stream":
        return Stream(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def as_stream(s: "Stream | int") -> Stream:
    return s if isinstance(s, Stream) else Stream(int(s))


def open_uniform(gen: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1): midpoints of a 2**-53 grid."""
    k = gen.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(float) + 0.5) / _TWO53


def gumbel_inverse_cdf(u):
    return -np.log(-np.log(u))


def sample_gumbel(stream: "Stream | int", count: int) -> np.ndarray:
    """i.i.d. standard type-1 extreme-value draws by inverse CDF."""
    if count < 0:
        raise ValueError("count must be >= 0")
    return gumbel_inverse_cdf(open_uniform(as_stream(stream).generator(), count))


# ---------------------------------------------------------------------------
# Halton points

def _primes(n: int) -> list[int]:
    out: list[int] = []
    c = 2
    while len(out) < n:
        if all(c % p for p in out if p * p <= c):
            out.append(c)
        c += 1
    return out


def radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.zeros(idx.shape, dtype=float)
    f = 1.0 / base
    while np.any(idx > 0):
        out += f * (idx % base)
        idx //= base
        f /= base
    return out


def halton_sequence(dimension: int, count: int, skip: int = 0) -> np.ndarray:
    """Radical-inverse Halton points in the first ``dimension`` prime bases.

    Point ``i`` (1-based, after discarding ``skip``) has coordinate ``d`` equal
    to the base-``p_d`` radical inverse of ``i + skip``; index 0 is never used
    so every coordinate lies strictly inside (0, 1).
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if count < 0 or skip < 0:
        raise ValueError("count and skip must be >= 0")
    idx = np.arange(1 + skip, 1 + skip + count, dtype=np.int64)
    return np.column_stack([radical_inverse(idx, p) for p in _primes(dimension)]).reshape(
        count, dimension
    )


# ---------------------------------------------------------------------------
# Coefficient draws

def triangular_from_uniform(u):
    """Symmetric triangular on [-1, 1] by inverse CDF."""
    u = np.asarray(u, dtype=float)
    return np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))


def base_uniforms(spec: MixingSpec, r: int, stream: "Stream | int", scheme: DrawScheme = "pseudo",
                  halton_offset: int = 0) -> np.ndarray:
    """(r, K) uniforms in (0, 1); one column per coefficient (Fixed columns unused)."""
    k = spec.n_coefficients
    if scheme == "pseudo":
        return open_uniform(as_stream(stream).generator(), (r, k))
    if scheme == "halton":
        return halton_sequence(k, r, skip=halton_offset)
    raise ValueError(f"unknown draw scheme {scheme!r}")


def base_draws(spec: MixingSpec, uniforms: np.ndarray) -> np.ndarray:
    """Map uniforms to the per-family base: standard normal for Normal/LogNormal,
    ``2u - 1`` for Uniform, the [-1, 1] triangular variate for Triangular, and
    zero for Fixed. Shape is preserved; the last axis indexes coefficients."""
    u = np.asarray(uniforms, dtype=float)
    e = np.zeros_like(u)
    for i, fam in enumerate(spec.families):
        if fam.normal_base:
            e[..., i] = ndtri(u[..., i])
        elif fam is Family.UNIFORM:
            e[..., i] = 2.0 * u[..., i] - 1.0
        elif fam is Family.TRIANGULAR:
            e[..., i] = triangular_from_uniform(u[..., i])
    return e


def transform_draws(spec: MixingSpec, theta: ThetaVector, base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply theta to base draws.

    Returns ``(beta, latent)`` where ``latent = m + L e`` (with ``L`` the
    lower-triangular factor, diagonal = scales) and ``beta`` is ``latent``
    passed through ``exp`` for LogNormal coordinates. Uniform and Triangular
    coordinates are ``m + s * e`` with ``e`` on [-1, 1]; Fixed are ``m``.
    """
    theta.check(spec)
    L = theta.factor(spec)
    latent = np.asarray(theta.means) + base @ L.T
    beta = latent.copy()
    for i, fam in enumerate(spec.families):
        if fam is Family.LOGNORMAL:
            beta[..., i] = np.exp(latent[..., i])
    return beta, latent


@dataclass(frozen=True)
class DrawMatrix:
    draws: np.ndarray
    seed: int
    generation: str

    def __post_init__(self):
        self.draws.setflags(write=False)

    @property
    def r(self) -> int:
        return self.draws.shape[0]


def draw_coefficients(spec: MixingSpec, theta: ThetaVector, r: int, stream: "Stream | int",
                      scheme: DrawScheme = "pseudo") -> DrawMatrix:
    """``r`` coefficient vectors from the mixing distribution."""
    if r < 1:
        raise ValueError("r must be >= 1")
    theta.check(spec)
    st = as_stream(stream)
    beta, _ = transform_draws(spec, theta, base_draws(spec, base_uniforms(spec, r, st, scheme)))
    return DrawMatrix(np.ascontiguousarray(beta), st.seed, scheme)


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed derived from ``seed`` and a key path (for nested jobs)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)
