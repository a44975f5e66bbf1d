"""Row-wise numeric kernels with a numba path and a pure-numpy path.

Every public function takes float64 arrays whose last axis is the reduction
axis and dispatches on ``_jit.USE_NUMBA``. The numba variants loop over rows
of a 2-D view; the numpy variants are vectorized over the whole array.
"""

import math

import numpy as np

from . import _jit
from ._jit import njit

# tanh-approximate GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
LN_EPS = 1e-5


# ---------------------------------------------------------------- numba ----


@njit
def _ln_fwd_nb(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            t = x[i, j] - mu
            var += t * t
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, rstd


@njit
def _ln_bwd_nb(dy, xhat, rstd, gamma):
    n, d = dy.shape
    dx = np.empty_like(dy)
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            g = dy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            dx[i, j] = rstd[i] * (dy[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


@njit
def _gelu_fwd_nb(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        out[i] = 0.5 * v * (1.0 + math.tanh(GELU_C * (v + GELU_A * v * v * v)))
    return out.reshape(x.shape)


@njit
def _gelu_bwd_nb(x, dy):
    flat = x.ravel()
    g = dy.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        t = math.tanh(GELU_C * (v + GELU_A * v * v * v))
        dt = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dt)
    return out.reshape(x.shape)


@njit
def _softmax_fwd_nb(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        for j in range(d):
            y[i, j] /= s
    return y


@njit
def _softmax_bwd_nb(y, dy):
    n, d = y.shape
    dx = np.empty_like(y)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += y[i, j] * dy[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - s)
    return dx


@njit
def _log_softmax_fwd_nb(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            s += math.exp(x[i, j] - m)
        lse = m + math.log(s)
        for j in range(d):
            y[i, j] = x[i, j] - lse
    return y


@njit
def _log_softmax_bwd_nb(y, dy):
    n, d = y.shape
    dx = np.empty_like(y)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += dy[i, j]
        for j in range(d):
            dx[i, j] = dy[i, j] - math.exp(y[i, j]) * s
    return dx


@njit
def _agglomerate_nb(sim, n_clusters):
    m = sim.shape[0]
    # cluster c is alive while label[c] == c; members tracked via owner array
    owner = np.arange(m)
    size = np.ones(m, dtype=np.int64)
    total = sim.copy()
    alive = np.ones(m, dtype=np.bool_)
    remaining = m
    while remaining > n_clusters:
        best = -np.inf
        ba = -1
        bb = -1
        # cluster ids equal their smallest member, so index order is the tie-break order
        for a in range(m):
            if not alive[a]:
                continue
            for b in range(a + 1, m):
                if not alive[b]:
                    continue
                avg = total[a, b] / (size[a] * size[b])
                if avg > best:
                    best = avg
                    ba = a
                    bb = b
        for c in range(m):
            total[ba, c] += total[bb, c]
        for c in range(m):
            total[c, ba] = total[ba, c]
        size[ba] += size[bb]
        alive[bb] = False
        for i in range(m):
            if owner[i] == bb:
                owner[i] = ba
        remaining -= 1
    return owner


@njit
def _best_ranks_nb(scores, acceptable):
    q, g = scores.shape
    ranks = np.empty(q, dtype=np.int64)
    for i in range(q):
        best = g
        for j in range(g):
            if not acceptable[i, j]:
                continue
            s = scores[i, j]
            r = 0
            for k in range(g):
                v = scores[i, k]
                if v > s or (v == s and k < j):
                    r += 1
            if r < best:
                best = r
        ranks[i] = best
    return ranks


# ---------------------------------------------------------------- numpy ----


def _ln_fwd_np(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def _ln_bwd_np(dy, xhat, rstd, gamma):
    g = dy * gamma
    s1 = g.mean(axis=-1, keepdims=True)
    s2 = (g * xhat).mean(axis=-1, keepdims=True)
    dx = rstd[:, None] * (g - s1 - xhat * s2)
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _gelu_fwd_np(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x**3)))


def _gelu_bwd_np(x, dy):
    t = np.tanh(GELU_C * (x + GELU_A * x**3))
    dt = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def _softmax_fwd_np(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd_np(y, dy):
    return y * (dy - (y * dy).sum(axis=-1, keepdims=True))


def _log_softmax_fwd_np(x):
    m = x.max(axis=-1, keepdims=True)
    return x - (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))


def _log_softmax_bwd_np(y, dy):
    return dy - np.exp(y) * dy.sum(axis=-1, keepdims=True)


def _agglomerate_np(sim, n_clusters):
    m = sim.shape[0]
    owner = np.arange(m)
    size = np.ones(m)
    total = sim.copy()
    alive = np.ones(m, dtype=bool)
    upper = np.triu(np.ones((m, m), dtype=bool), k=1)
    for _ in range(m - n_clusters):
        avg = total / np.outer(size, size)
        valid = upper & alive[:, None] & alive[None, :]
        avg = np.where(valid, avg, -np.inf)
        # argmax returns the first maximum in row-major order: lowest (a, b)
        a, b = divmod(int(np.argmax(avg)), m)
        total[a] += total[b]
        total[:, a] = total[a]
        size[a] += size[b]
        alive[b] = False
        owner[owner == b] = a
    return owner


def _best_ranks_np(scores, acceptable):
    g = scores.shape[1]
    idx = np.arange(g)
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for i, (row, ok) in enumerate(zip(scores, acceptable)):
        best = g
        for j in np.flatnonzero(ok):
            s = row[j]
            r = int(np.count_nonzero(row > s) + np.count_nonzero((row == s) & (idx < j)))
            best = min(best, r)
        ranks[i] = best
    return ranks


# ------------------------------------------------------------- dispatch ----


def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def layer_norm_forward(x, gamma, beta, eps=LN_EPS):
    """Return ``(y, xhat, rstd)``; ``xhat``/``rstd`` are saved for backward."""
    x2 = _rows(x)
    if _jit.USE_NUMBA:
        y, xhat, rstd = _ln_fwd_nb(x2, gamma, beta, eps)
    else:
        y, xhat, rstd = _ln_fwd_np(x2, gamma, beta, eps)
    return y.reshape(x.shape), xhat, rstd


def layer_norm_backward(dy, xhat, rstd, gamma):
    dy2 = _rows(dy)
    if _jit.USE_NUMBA:
        dx, dg, db = _ln_bwd_nb(dy2, xhat, rstd, gamma)
    else:
        dx, dg, db = _ln_bwd_np(dy2, xhat, rstd, gamma)
    return dx.reshape(dy.shape), dg, db


def gelu_forward(x):
    if _jit.USE_NUMBA:
        return _gelu_fwd_nb(np.ascontiguousarray(x))
    return _gelu_fwd_np(x)


def gelu_backward(x, dy):
    if _jit.USE_NUMBA:
        return _gelu_bwd_nb(np.ascontiguousarray(x), np.ascontiguousarray(dy))
    return _gelu_bwd_np(x, dy)


def softmax_forward(x):
    if _jit.USE_NUMBA:
        return _softmax_fwd_nb(_rows(x)).reshape(x.shape)
    return _softmax_fwd_np(x)


def softmax_backward(y, dy):
    if _jit.USE_NUMBA:
        return _softmax_bwd_nb(_rows(y), _rows(dy)).reshape(y.shape)
    return _softmax_bwd_np(y, dy)


def log_softmax_forward(x):
    if _jit.USE_NUMBA:
        return _log_softmax_fwd_nb(_rows(x)).reshape(x.shape)
    return _log_softmax_fwd_np(x)


def log_softmax_backward(y, dy):
    if _jit.USE_NUMBA:
        return _log_softmax_bwd_nb(_rows(y), _rows(dy)).reshape(y.shape)
    return _log_softmax_bwd_np(y, dy)


def agglomerate(sim, n_clusters):
    """Average-linkage merging on a similarity matrix.

    Returns, for each item, the smallest member index of its final cluster.
    """
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    if _jit.USE_NUMBA:
        return _agglomerate_nb(sim, int(n_clusters))
    return _agglomerate_np(sim, int(n_clusters))


def best_ranks(scores, acceptable):
    """0-based rank of the best acceptable gallery item for each query row.

    Items scoring strictly higher, or equal with a lower gallery index, rank
    ahead. Rows with no acceptable item get rank ``g``.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    acceptable = np.ascontiguousarray(acceptable, dtype=np.bool_)
    if _jit.USE_NUMBA:
        return _best_ranks_nb(scores, acceptable)
    return _best_ranks_np(scores, acceptable)
