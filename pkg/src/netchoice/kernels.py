"""Backend selection for the likelihood kernel.

The compiled extension is used when importable; otherwise (or when
``NETCHOICE_BACKEND=python``) the numpy implementation is used. Both expose
``seq_loglik_grad`` with the same signature.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernel
from .model import ChoiceArrays

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_BACKENDS = {"python": _pykernel}
if _ckernel is not None:
    _BACKENDS["c"] = _ckernel


def _initial_backend() -> str:
    want = os.environ.get("NETCHOICE_BACKEND", "auto").lower()
    if want == "auto":
        return "c" if "c" in _BACKENDS else "python"
    if want not in _BACKENDS:
        raise ImportError(f"NETCHOICE_BACKEND={want!r} is not available (have {sorted(_BACKENDS)})")
    return want


BACKEND = _initial_backend()


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {sorted(_BACKENDS)})")
    BACKEND = name


def sequence_log_probs(arrays: ChoiceArrays, betas: np.ndarray, want_grad: bool = True,
                       threads: int = 1, backend: str | None = None):
    """Per-draw log sequence probabilities and their coefficient gradients.

    ``betas`` has shape (n_sequences, R, K). Returns ``log_s`` (n_sequences, R)
    and ``grad`` (n_sequences, R, K) (``None`` when ``want_grad`` is false).
    Work is split into contiguous sequence ranges; each output cell is written
    by exactly one worker, so results do not depend on ``threads``.
    """
    impl = _BACKENDS[backend or BACKEND]
    n = arrays.n_sequences
    betas = np.ascontiguousarray(betas, dtype=float)
    if betas.ndim != 3 or betas.shape[0] != n or betas.shape[2] != arrays.n_characteristics:
        raise ValueError(f"betas shape {betas.shape} does not match data ({n}, R, {arrays.n_characteristics})")
    R, K = betas.shape[1], betas.shape[2]
    log_s = np.empty((n, R))
    grad = np.empty((n, R, K)) if want_grad else np.empty((0, R, K))
    args = (arrays.X, arrays.sit_ptr, arrays.seq_ptr, arrays.chosen, betas, log_s, grad)
    threads = max(1, int(threads))
    if threads == 1 or n < 2 * threads:
        impl.seq_loglik_grad(*args, 0, n, want_grad)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            futs = [
                pool.submit(impl.seq_loglik_grad, *args, int(a), int(b), want_grad)
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            for f in futs:
                f.result()
    return log_s, (grad if want_grad else None)
