"""Symmetric InfoNCE objectives: one-to-one, one-to-multi, multi-to-multi.

Similarities are plain dot products, so inputs must already be unit rows.
``tau`` may be a positive float or a differentiable scalar ``Tensor``.

All three losses share one kernel, :func:`_slot_loss`: for each text slot
``m`` a [K, K] logit matrix ``S_m[j, k] = <t_{j,m}, v_{k,plan(m)}> / tau`` is
built; the text-to-image term is the row-wise log-softmax diagonal of
``S_m`` and the image-to-text term is the same on ``S_m`` transposed, so the
candidate pool for an image is the same text slot across the batch.
"""

import enum

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import PlanOutOfRange, ShapeMismatch, TemperatureNonPositive


class Reduction(str, enum.Enum):
    SUM = "sum"
    MEAN = "mean_over_pairs"


def _tau(tau):
    if isinstance(tau, Tensor):
        if np.any(tau.data <= 0):
            raise TemperatureNonPositive(f"tau={tau.data}")
        return tau
    if not tau > 0:
        raise TemperatureNonPositive(f"tau={tau}")
    return float(tau)


def _diag_sum(logp):
    """Sum of the diagonals of the trailing [K, K] blocks."""
    K = logp.shape[-1]
    idx = np.arange(K)
    return ag.tsum(logp[..., idx, idx])


def infonce_direction(anchors, positives, tau, reduction=Reduction.SUM):
    """-sum_j log softmax_k(<p_j, a_k> / tau)[j]; divided by K under MEAN."""
    anchors, positives = ag.as_tensor(anchors), ag.as_tensor(positives)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ShapeMismatch(f"{anchors.shape} vs {positives.shape}")
    tau = _tau(tau)
    logits = ag.div(ag.matmul(positives, anchors.T), tau)
    loss = ag.mul(_diag_sum(ag.log_softmax(logits)), -1.0)
    if Reduction(reduction) is Reduction.MEAN:
        loss = ag.mul(loss, 1.0 / anchors.shape[0])
    return loss


def _slot_loss(v_sel, texts, tau, reduction):
    """v_sel, texts: [K, M, d]; slot m of texts is matched to slot m of v_sel."""
    K, M, _ = texts.shape
    tau = _tau(tau)
    t_m = ag.transpose(texts, (1, 0, 2))  # [M, K, d]
    v_m = ag.transpose(v_sel, (1, 2, 0))  # [M, d, K]
    logits = ag.div(ag.matmul(t_m, v_m), tau)  # [M, K(text), K(image)]
    t2i = ag.mul(_diag_sum(ag.log_softmax(logits)), -1.0)
    i2t = ag.mul(_diag_sum(ag.log_softmax(ag.transpose(logits, (0, 2, 1)))), -1.0)
    loss = ag.mul(ag.add(t2i, i2t), 0.5)
    if Reduction(reduction) is Reduction.MEAN:
        loss = ag.mul(loss, 1.0 / (K * M))
    return loss


def loss_o2o(V, T, tau, reduction=Reduction.SUM):
    """(L_T2I + L_I2T) / 2 over K matched pairs; V, T: [K, d]."""
    V, T = ag.as_tensor(V), ag.as_tensor(T)
    if V.shape != T.shape or V.ndim != 2:
        raise ShapeMismatch(f"{V.shape} vs {T.shape}")
    K, d = V.shape
    return _slot_loss(ag.reshape(V, (K, 1, d)), ag.reshape(T, (K, 1, d)), tau, reduction)


def loss_o2m(V, T, tau, reduction=Reduction.SUM):
    """Every one of the M texts of sample j is a positive for image j.

    V: [K, d] (or [K, 1, d]); T: [K, M, d].
    """
    V, T = ag.as_tensor(V), ag.as_tensor(T)
    if V.ndim == 3:
        if V.shape[1] != 1:
            raise ShapeMismatch("loss_o2m takes a single image embedding per sample")
        V = ag.reshape(V, (V.shape[0], V.shape[2]))
    if T.ndim != 3 or V.ndim != 2 or T.shape[0] != V.shape[0] or T.shape[2] != V.shape[1]:
        raise ShapeMismatch(f"{V.shape} vs {T.shape}")
    K, M, d = T.shape
    v_sel = ag.broadcast_to(ag.reshape(V, (K, 1, d)), (K, M, d))
    return _slot_loss(v_sel, T, tau, reduction)


def loss_m2m(V, T, plan, tau, reduction=Reduction.SUM):
    """Text slot m contrasts against image branch ``plan[m]`` across the batch.

    V: [K, H, d]; T: [K, M, d]; ``plan`` is a MatchingPlan or a length-M
    sequence of branch indices.
    """
    V, T = ag.as_tensor(V), ag.as_tensor(T)
    if V.ndim != 3 or T.ndim != 3 or V.shape[0] != T.shape[0] or V.shape[2] != T.shape[2]:
        raise ShapeMismatch(f"{V.shape} vs {T.shape}")
    assignment = np.asarray(getattr(plan, "assignment", plan), dtype=np.int64)
    H, M = V.shape[1], T.shape[1]
    if assignment.shape != (M,):
        raise ShapeMismatch(f"plan covers {assignment.shape} slots, texts have {M}")
    if assignment.size and (assignment.min() < 0 or assignment.max() >= H):
        raise PlanOutOfRange(f"plan {assignment.tolist()} outside [0, {H})")
    return _slot_loss(V[:, assignment], T, tau, reduction)
