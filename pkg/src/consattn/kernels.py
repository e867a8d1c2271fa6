"""Hot numeric kernels, each in two interchangeable flavours.

Every kernel has a loop implementation compiled with numba's ``@njit`` and a
vectorized pure-numpy fallback.  The active flavour is chosen once at import
time from the ``CONSATTN_NUMBA`` environment variable:

* unset or empty  -- use numba when it imports cleanly, numpy otherwise
* ``0``           -- force the numpy fallback
* ``1``           -- require numba (raises if it is unavailable)

Both flavours compute the same quantities in float64; they agree to rounding
(not bit-for-bit, since summation orders differ).  ``benchmarks/bench_kernels.py``
times one against the other.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    NUMBA_AVAILABLE = False

_env = os.environ.get("CONSATTN_NUMBA", "").strip()
if _env == "1" and not NUMBA_AVAILABLE:
    raise RuntimeError("CONSATTN_NUMBA=1 but numba is not importable")
USE_NUMBA = NUMBA_AVAILABLE if _env == "" else _env == "1"


# ---------------------------------------------------------------------------
# masked row softmax
# ---------------------------------------------------------------------------

def softmax_rows_np(x, mask):
    z = np.where(mask, x, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    e = np.where(mask, e, 0.0)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_loops(x, mask):
    m, n = x.shape
    out = np.zeros((m, n))
    for i in range(m):
        zmax = -np.inf
        for j in range(n):
            if mask[i, j] and x[i, j] > zmax:
                zmax = x[i, j]
        total = 0.0
        for j in range(n):
            if mask[i, j]:
                e = math.exp(x[i, j] - zmax)
                out[i, j] = e
                total += e
        for j in range(n):
            out[i, j] /= total
    return out


def softmax_rows_grad_np(s, grad):
    inner = (grad * s).sum(axis=1, keepdims=True)
    return s * (grad - inner)


def _softmax_rows_grad_loops(s, grad):
    m, n = s.shape
    out = np.zeros((m, n))
    for i in range(m):
        inner = 0.0
        for j in range(n):
            inner += grad[i, j] * s[i, j]
        for j in range(n):
            out[i, j] = s[i, j] * (grad[i, j] - inner)
    return out


# ---------------------------------------------------------------------------
# row layer norm
# ---------------------------------------------------------------------------

def layer_norm_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def _layer_norm_loops(x, gain, bias, eps):
    m, d = x.shape
    out = np.zeros((m, d))
    xhat = np.zeros((m, d))
    rstd = np.zeros(m)
    for i in range(m):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            out[i, j] = h * gain[j] + bias[j]
    return out, xhat, rstd


def layer_norm_grad_np(grad, xhat, rstd, gain):
    gh = grad * gain
    m1 = gh.mean(axis=1, keepdims=True)
    m2 = (gh * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gh - m1 - xhat * m2)
    ggain = (grad * xhat).sum(axis=0)
    gbias = grad.sum(axis=0)
    return gx, ggain, gbias


def _layer_norm_grad_loops(grad, xhat, rstd, gain):
    m, d = xhat.shape
    gx = np.zeros((m, d))
    ggain = np.zeros(d)
    gbias = np.zeros(d)
    for i in range(m):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gh = grad[i, j] * gain[j]
            m1 += gh
            m2 += gh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            gh = grad[i, j] * gain[j]
            gx[i, j] = rstd[i] * (gh - m1 - xhat[i, j] * m2)
            ggain[j] += grad[i, j] * xhat[i, j]
            gbias[j] += grad[i, j]
    return gx, ggain, gbias


# ---------------------------------------------------------------------------
# span log-sum matrix
#
# From per-link log probabilities (length n-1) build the symmetric n x n
# matrix whose (i, j) entry is the sum of link logs across the span [i, j).
# Prefix sums make construction O(n^2) total.
# ---------------------------------------------------------------------------

def span_log_matrix_np(link_logs):
    n = link_logs.shape[0] + 1
    prefix = np.concatenate((np.zeros(1), np.cumsum(link_logs)))
    diff = prefix[None, :] - prefix[:, None]
    upper = np.triu(diff, 1)
    return upper + upper.T


def _span_log_matrix_loops(link_logs):
    n = link_logs.shape[0] + 1
    prefix = np.zeros(n)
    for k in range(n - 1):
        prefix[k + 1] = prefix[k] + link_logs[k]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            v = prefix[j] - prefix[i]
            out[i, j] = v
            out[j, i] = v
    return out


def span_log_matrix_grad_np(grad):
    # d out[i,j] / d link_logs[k] = 1 iff min(i,j) <= k < max(i,j); collect
    # each unordered pair once and read rectangle sums off a 2D prefix table.
    n = grad.shape[0]
    if n <= 1:
        return np.zeros(max(n - 1, 0))
    pair = np.triu(grad + grad.T, 1)
    table = pair.cumsum(axis=0).cumsum(axis=1)
    k = np.arange(n - 1)
    return table[k, n - 1] - table[k, k]


def _span_log_matrix_grad_loops(grad):
    n = grad.shape[0]
    out = np.zeros(max(n - 1, 0))
    if n <= 1:
        return out
    # suffix[i, j] = sum over j' >= j of (grad[i, j'] + grad[j', i]), j > i
    suffix = np.zeros((n, n + 1))
    for i in range(n):
        for j in range(n - 1, i, -1):
            suffix[i, j] = suffix[i, j + 1] + grad[i, j] + grad[j, i]
    for k in range(n - 1):
        acc = 0.0
        for i in range(k + 1):
            acc += suffix[i, k + 1]
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# fused Adam update (in place on flat float64 views)
# ---------------------------------------------------------------------------

def adam_update_np(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _adam_update_loops(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(param.shape[0]):
        mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
        vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        m[i] = mi
        v[i] = vi
        param[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


if NUMBA_AVAILABLE:
    softmax_rows_nb = njit(cache=True)(_softmax_rows_loops)
    softmax_rows_grad_nb = njit(cache=True)(_softmax_rows_grad_loops)
    layer_norm_nb = njit(cache=True)(_layer_norm_loops)
    layer_norm_grad_nb = njit(cache=True)(_layer_norm_grad_loops)
    span_log_matrix_nb = njit(cache=True)(_span_log_matrix_loops)
    span_log_matrix_grad_nb = njit(cache=True)(_span_log_matrix_grad_loops)
    adam_update_nb = njit(cache=True)(_adam_update_loops)

if USE_NUMBA:
    softmax_rows = softmax_rows_nb
    softmax_rows_grad = softmax_rows_grad_nb
    layer_norm = layer_norm_nb
    layer_norm_grad = layer_norm_grad_nb
    span_log_matrix = span_log_matrix_nb
    span_log_matrix_grad = span_log_matrix_grad_nb
    adam_update = adam_update_nb
else:
    softmax_rows = softmax_rows_np
    softmax_rows_grad = softmax_rows_grad_np
    layer_norm = layer_norm_np
    layer_norm_grad = layer_norm_grad_np
    span_log_matrix = span_log_matrix_np
    span_log_matrix_grad = span_log_matrix_grad_np
    adam_update = adam_update_np
