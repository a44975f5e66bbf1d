"""Inference-time fusion of branch embeddings and the retrieval/classification metrics."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import kernels
from .data.scenes import write_pgm
from .encoders import ModelConfig, Variant, encode_images
from .errors import BranchOutOfRange, EmptySubset, MissingGalleryStats, SizeMismatch


class Fusion(str, enum.Enum):
    MAX = "max"
    NORM_MAX = "norm_max"
    AVERAGE = "average"


@dataclass(frozen=True)
class FusionStrategy:
    kind: Fusion = Fusion.AVERAGE
    branch_subset: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Fusion(self.kind))
        if self.branch_subset is not None:
            subset = tuple(sorted({int(h) for h in self.branch_subset}))
            if not subset:
                raise EmptySubset("branch_subset must be non-empty")
            object.__setattr__(self, "branch_subset", subset)

    def branches(self, H: int) -> np.ndarray:
        if self.branch_subset is None:
            return np.arange(H)
        sub = np.asarray(self.branch_subset)
        if sub.min() < 0 or sub.max() >= H:
            raise BranchOutOfRange(f"branches {self.branch_subset} outside [0, {H})")
        return sub


AVERAGE = FusionStrategy()


def _as_sets(image_embeddings):
    v = np.asarray(image_embeddings, dtype=np.float64)
    return v[:, None, :] if v.ndim == 2 else v


def gallery_stats(image_sets, text_embeddings) -> dict:
    """Per-branch mean and std of <v_h, t> over every (image, text) pair."""
    v = _as_sets(image_sets)
    t = np.asarray(text_embeddings, dtype=np.float64)
    s = np.einsum("nhd,qd->hnq", v, t).reshape(v.shape[1], -1)
    std = s.std(axis=1)
    return {"mean": s.mean(axis=1), "std": np.where(std > 0, std, 1.0)}


def fused_score_matrix(image_sets, text_embeddings, strategy=AVERAGE, stats=None) -> np.ndarray:
    """Scores [N images, Q texts] under ``strategy``."""
    v = _as_sets(image_sets)
    t = np.asarray(text_embeddings, dtype=np.float64)
    strategy = strategy or AVERAGE
    sub = strategy.branches(v.shape[1])
    v = v[:, sub]
    if strategy.kind is Fusion.AVERAGE:
        # mean first, then one dot product per pair
        return v.mean(axis=1) @ t.T
    per_branch = np.einsum("nhd,qd->nhq", v, t)
    if strategy.kind is Fusion.MAX:
        return per_branch.max(axis=1)
    if stats is None:
        raise MissingGalleryStats("norm_max fusion needs gallery statistics")
    mu = np.asarray(stats["mean"])[sub][None, :, None]
    sd = np.asarray(stats["std"])[sub][None, :, None]
    return ((per_branch - mu) / sd).max(axis=1)


def fuse_scores(image_embeddings, text_embeddings, strategy=AVERAGE, gallery_stats=None) -> np.ndarray:
    """Scores of one image's H branch embeddings [H, d] against Q texts [Q, d]."""
    v = np.asarray(image_embeddings, dtype=np.float64)
    return fused_score_matrix(v[None], text_embeddings, strategy, gallery_stats)[0]


def customize_branches(embedding_set, subset) -> np.ndarray:
    """Unit-normalized mean of the selected branch embeddings."""
    v = getattr(embedding_set, "image_embeddings", embedding_set)
    v = np.asarray(v, dtype=np.float64)
    subset = list(subset)
    if not subset:
        raise EmptySubset("subset must be non-empty")
    if min(subset) < 0 or max(subset) >= v.shape[0]:
        raise BranchOutOfRange(f"subset {subset} outside [0, {v.shape[0]})")
    m = v[subset].mean(axis=0)
    return m / np.linalg.norm(m)


def acceptable_matrix(ground_truth, n_gallery: int) -> np.ndarray:
    """Boolean [Q, G] from per-query gallery indices (an int or a collection of ints)."""
    acc = np.zeros((len(ground_truth), n_gallery), dtype=bool)
    for q, gt in enumerate(ground_truth):
        idx = [gt] if np.isscalar(gt) else list(gt)
        acc[q, idx] = True
    return acc


def recall_from_scores(scores, ground_truth, ks=(1, 5, 10)) -> dict:
    """Percentage of queries whose best acceptable gallery item ranks within the top K."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(ground_truth) != scores.shape[0]:
        raise SizeMismatch(f"{scores.shape[0]} queries vs {len(ground_truth)} ground-truth entries")
    acc = ground_truth if isinstance(ground_truth, np.ndarray) and ground_truth.dtype == bool else acceptable_matrix(ground_truth, scores.shape[1])
    ranks = kernels.best_ranks(scores, acc)
    return {f"R@{k}": 100.0 * float(np.mean(ranks < k)) for k in ks}


def retrieval_recall(query_embeddings, gallery_embeddings, ground_truth, ks=(1, 5, 10), strategy=AVERAGE, stats=None) -> dict:
    """R@K for either direction.

    A 3-D side [N, H, d] is treated as image embedding sets and fused with
    ``strategy``; with both sides 2-D the score is a plain dot product.
    """
    q = np.asarray(query_embeddings, dtype=np.float64)
    g = np.asarray(gallery_embeddings, dtype=np.float64)
    if len(q) != len(ground_truth):
        raise SizeMismatch(f"{len(q)} queries vs {len(ground_truth)} ground-truth entries")
    if g.ndim == 3:
        if strategy.kind is Fusion.NORM_MAX and stats is None:
            stats = gallery_stats(g, q)
        scores = fused_score_matrix(g, q, strategy, stats).T
    elif q.ndim == 3:
        if strategy.kind is Fusion.NORM_MAX and stats is None:
            stats = gallery_stats(q, g)
        scores = fused_score_matrix(q, g, strategy, stats)
    else:
        scores = q @ g.T
    return recall_from_scores(scores, ground_truth, ks)


def zero_shot_classify(image_embedding_sets, class_texts, labels, strategy=AVERAGE, stats=None) -> dict:
    """Top-1 / top-5 accuracy (percent) of fused-score classification."""
    class_texts = np.asarray(class_texts, dtype=np.float64)
    if strategy.kind is Fusion.NORM_MAX and stats is None:
        stats = gallery_stats(image_embedding_sets, class_texts)
    scores = fused_score_matrix(image_embedding_sets, class_texts, strategy, stats)
    ranks = kernels.best_ranks(scores, acceptable_matrix(list(labels), class_texts.shape[0]))
    return {"top1": 100.0 * float(np.mean(ranks < 1)), "top5": 100.0 * float(np.mean(ranks < 5))}


# -------------------------------------------------------- attention mask ----

MASK_PERCENT = 20


def mask_size(num_patches: int) -> int:
    """ceil(20% of the patch count), in integer arithmetic."""
    return -(-num_patches * MASK_PERCENT // 100)


def top_patches(scores, k=None) -> np.ndarray:
    """Indices of the k highest scores; ties go to the lower patch index."""
    scores = np.asarray(scores, dtype=np.float64)
    k = mask_size(scores.size) if k is None else k
    return np.sort(np.argsort(-scores, kind="stable")[:k])


def class_token_attention(image, branch: int, config: ModelConfig, params) -> np.ndarray:
    """Head-averaged final-block attention from branch ``branch``'s class token to each patch."""
    H = config.branch_count
    if not 0 <= branch < H:
        raise BranchOutOfRange(f"branch {branch} outside [0, {H})")
    with ag.no_grad():
        _, probs = encode_images(np.asarray(image)[None], config, params, return_attention=True)
    n_cls = config.num_class_tokens
    if config.variant is Variant.MLP:
        row = probs[0, branch, :, 0, n_cls:]
    else:
        row = probs[0, 0, :, branch, n_cls:]
    return row.mean(axis=0)


def attention_mask(image, branch: int, config: ModelConfig, params, out_prefix=None) -> dict:
    """Top-20% patch mask for one branch; optionally writes ``<prefix>.csv`` and ``<prefix>.pgm``."""
    scores = class_token_attention(image, branch, config, params)
    mask = top_patches(scores)
    result = {"scores": scores, "mask": mask}
    if out_prefix is not None:
        result.update(write_attention_files(scores, config, out_prefix))
    return result


def heatmap(scores, grid: int, upscale: int = 1) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).reshape(grid, grid)
    span = s.max() - s.min()
    scaled = np.zeros_like(s) if span <= 0 else (s - s.min()) / span * 255.0
    img = np.round(scaled).astype(np.uint8)
    return np.kron(img, np.ones((upscale, upscale), dtype=np.uint8))


def write_attention_files(scores, config: ModelConfig, out_prefix) -> dict:
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    pgm_path = out_prefix.with_suffix(".pgm")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_index", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s))])
    write_pgm(pgm_path, heatmap(scores, config.grid, config.patch_size))
    return {"csv": str(csv_path), "pgm": str(pgm_path)}
