"""NumPy implementations of the per-step kernels.

Same signatures and semantics as the compiled ``_kernels`` extension; used when
the extension is unavailable or ``IWSFT_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def categorical_logp(logits, actions):
    """Log-softmax at ``actions`` and its gradient with respect to ``logits``.

    Returns ``(logp, dlogits)`` where ``dlogits[n] = onehot(actions[n]) - softmax(logits[n])``.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logprobs = shifted - lse[:, None]
    rows = np.arange(n)
    logp = logprobs[rows, actions]
    dlogits = -np.exp(logprobs)
    dlogits[rows, actions] += 1.0
    return logp, dlogits


def gaussian_logp(mean, log_std, actions):
    """Diagonal Gaussian log-density with per-row gradients.

    Returns ``(logp, dmean, dlog_std)``; the last is per row, shape ``(n, d)``.
    """
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    log_std = np.ascontiguousarray(log_std, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.float64)
    inv_std = np.exp(-log_std)
    z = (actions - mean) * inv_std
    logp = -0.5 * (z * z).sum(axis=1) - log_std.sum() - 0.5 * mean.shape[1] * LOG_2PI
    dmean = z * inv_std
    dlog_std = z * z - 1.0
    return logp, dmean, dlog_std


def segment_sum(values, offsets):
    """Sums of ``values[offsets[j]:offsets[j+1]]`` for every segment ``j``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if np.any(np.diff(offsets) < 1):
        raise ValueError("segments must be non-empty")
    return np.add.reduceat(values, offsets[:-1])


def trajectory_weights(rho, offsets, k, rho_lo, rho_hi, w_lo, w_hi):
    """``clip(exp(k_j * sum_i clip(rho_i, rho_lo, rho_hi)), w_lo, w_hi)`` per segment.

    Saturates at ``w_hi`` instead of overflowing.
    """
    rho = np.clip(np.ascontiguousarray(rho, dtype=np.float64), rho_lo, rho_hi)
    s = np.asarray(k, dtype=np.float64) * segment_sum(rho, offsets)
    log_hi = math.log(w_hi)
    with np.errstate(over="ignore"):
        w = np.exp(np.minimum(s, log_hi))
    w = np.where(s >= log_hi, w_hi, w)
    return np.maximum(w, w_lo)
