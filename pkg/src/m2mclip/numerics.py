"""Vector helpers and the finite-difference gradient oracle."""

import numpy as np

from .errors import NonFinite, ZeroNorm

NORM_FLOOR = 1e-12


def l2_normalize(v):
    """Scale a vector to unit Euclidean norm.

    >>> l2_normalize([3.0, 4.0]).tolist()
    [0.6, 0.8]
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ZeroNorm("empty vector")
    norm = np.linalg.norm(v)
    if norm <= NORM_FLOOR:
        raise ZeroNorm(f"norm {norm:g} <= {NORM_FLOOR:g}")
    return v / norm


def l2_normalize_rows(a):
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(norms <= NORM_FLOOR):
        raise ZeroNorm("zero-norm row")
    return a / norms


def cosine_similarity_matrix(a, b):
    """Pairwise cosine similarity between rows of ``a`` [n,d] and ``b`` [m,d]."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1] or a.shape[1] < 1:
        raise ValueError(f"incompatible widths {a.shape} vs {b.shape}")
    return l2_normalize_rows(a) @ l2_normalize_rows(b).T


def finite_difference_check(f, params, eps=1e-4, analytic=None, max_entries=None, seed=0):
    """Compare analytic gradients with central differences.

    ``f`` maps the current parameter values to a scalar. ``params`` is a list of
    objects exposing ``.data`` (mutated in place during probing) and ``.grad``.
    When ``analytic`` is given it replaces ``.grad`` as the gradient under test
    (a list of arrays in the same order). Returns the maximum over the probed
    entries of ``|analytic - numeric| / max(1, |analytic|)``.

    With ``max_entries`` each tensor is probed at that many positions: the
    entry of largest analytic magnitude plus a seeded uniform sample of the
    rest. Without it every entry is probed.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    grads = analytic if analytic is not None else [p.grad for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        data = p.data
        flat = data.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            probe = range(flat.size)
        else:
            top = int(np.argmax(np.abs(gflat)))
            rest = rng.choice(np.delete(np.arange(flat.size), top), max_entries - 1, replace=False)
            probe = [top, *sorted(int(i) for i in rest)]
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFinite(f"{getattr(p, 'name', '?')}[{i}] probe produced {fp}, {fm}")
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
