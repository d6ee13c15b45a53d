"""Pure-numpy implementation of the sequence log-probability kernel.

Same contract as the compiled ``_ckernel.seq_loglik_grad``; used when the
extension is not built or ``NETCHOICE_BACKEND=python``.
"""
import numpy as np

# rows * draws * characteristics handled per vectorized block
_BLOCK = 1 << 21


def seq_loglik_grad(X, sit_ptr, seq_ptr, chosen, betas, log_s, grad, lo, hi, want_grad=True):
    R, K = betas.shape[1], betas.shape[2]
    n = lo
    while n < hi:
        # grow the block of sequences until it reaches the memory budget
        m = n + 1
        r0 = sit_ptr[seq_ptr[n]]
        while m < hi and (sit_ptr[seq_ptr[m + 1]] - r0) * R * K <= _BLOCK:
            m += 1
        _block(X, sit_ptr, seq_ptr, chosen, betas, log_s, grad, n, m, want_grad)
        n = m


def _block(X, sit_ptr, seq_ptr, chosen, betas, log_s, grad, lo, hi, want_grad):
    s0, s1 = seq_ptr[lo], seq_ptr[hi]
    r0, r1 = sit_ptr[s0], sit_ptr[s1]
    Xb = X[r0:r1]
    sit_start = sit_ptr[s0:s1] - r0
    sit_len = np.diff(sit_ptr[s0 : s1 + 1])
    seq_len = np.diff(seq_ptr[lo : hi + 1])
    row_sit = np.repeat(np.arange(s1 - s0), sit_len)
    row_seq = np.repeat(np.repeat(np.arange(hi - lo), seq_len), sit_len)
    seq_start = seq_ptr[lo:hi] - s0

    B = betas[lo:hi][row_seq]  # (rows, R, K)
    # explicit accumulation over k keeps arithmetic identical for any R
    V = Xb[:, 0, None] * B[:, :, 0]
    for k in range(1, B.shape[2]):
        V = V + Xb[:, k, None] * B[:, :, k]
    vmax = np.maximum.reduceat(V, sit_start, axis=0)
    E = np.exp(V - vmax[row_sit])
    denom = np.add.reduceat(E, sit_start, axis=0)
    ch = chosen[s0:s1] - r0
    log_p = (V[ch] - vmax) - np.log(denom)  # (sits, R)
    log_s[lo:hi] = np.add.reduceat(log_p, seq_start, axis=0)
    if want_grad:
        P = E / denom[row_sit]
        mean_x = np.add.reduceat(P[:, :, None] * Xb[:, None, :], sit_start, axis=0)
        g = Xb[ch][:, None, :] - mean_x
        grad[lo:hi] = np.add.reduceat(g, seq_start, axis=0)
