"""Shared reference computations for the unit and acceptance suites."""

import numpy as np

from m2mclip import autograd as ag
from m2mclip.encoders import EOT_ID, Temperature, encode_images, encode_texts, init_params
from m2mclip.losses import Reduction, loss_m2m, loss_o2m, loss_o2o
from m2mclip.matching import MatchingPlan, PlanMode
from m2mclip.numerics import finite_difference_check

from conftest import tiny_config

LOSSES = ("o2o", "o2m", "m2m")
VARIANTS = ("vanilla", "cls", "mlp")


def _tokens(rng, K, vocab, lengths):
    out = np.zeros((K, max(lengths)), dtype=np.int64)
    for k, n in enumerate(lengths):
        out[k, : n - 1] = rng.integers(3, vocab, n - 1)
        out[k, n - 1] = EOT_ID
    return out


def model_gradient_error(loss_kind, variant, reduction=Reduction.MEAN, seed=0, K=3, M=2, max_entries=4):
    """Largest finite-difference error of d(loss)/d(all parameters) for a tiny two-tower model.

    Single-embedding losses read branch 0 of multi-branch towers; M2M on the
    vanilla tower routes both text slots to its one branch.
    """
    H = 1 if variant == "vanilla" else M
    cfg = tiny_config(variant, H, width=16, depth=2, embed_dim=8)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    for p in params.values():
        # move off the symmetric init point (zero biases, unit layer-norm gains)
        p.data += 0.05 * rng.standard_normal(p.data.shape)
    images = rng.uniform(0, 1, (K, 3, cfg.image_size, cfg.image_size))
    slots = [_tokens(rng, K, cfg.vocab_size, rng.integers(2, 6, K)) for _ in range(M)]
    plan = MatchingPlan(tuple(range(M)), PlanMode.IDENTITY, H) if H == M else MatchingPlan((0,) * M, PlanMode.FREE, 1)
    temperature = Temperature(params["logit_scale"])

    def loss():
        V = encode_images(images, cfg, params)
        T = ag.concat([ag.reshape(encode_texts(t, cfg, params), (K, 1, cfg.embed_dim)) for t in slots], axis=1)
        tau = temperature.as_tensor()
        if loss_kind == "o2o":
            return loss_o2o(V[:, 0], T[:, 0], tau, reduction)
        if loss_kind == "o2m":
            return loss_o2m(V[:, 0], T, tau, reduction)
        return loss_m2m(V, T, plan, tau, reduction)

    out = loss()
    for p in params.values():
        p.zero_grad()
    out.backward()
    plist = list(params.values())
    grads = [p.grad.copy() for p in plist]

    def probe():
        with ag.no_grad():
            return loss().data

    return finite_difference_check(probe, plist, eps=1e-4, analytic=grads, max_entries=max_entries, seed=seed)
