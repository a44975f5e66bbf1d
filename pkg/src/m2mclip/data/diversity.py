"""Text-diversity statistics over the captions of each image."""

from __future__ import annotations

import itertools

import numpy as np

from .captions import tokenize_words


def bag_of_words(texts) -> np.ndarray:
    """Unit-normalized word-count vectors [N, V] over the union vocabulary of ``texts``."""
    token_lists = [tokenize_words(t) for t in texts]
    index = {w: i for i, w in enumerate(sorted({w for toks in token_lists for w in toks}))}
    out = np.zeros((len(texts), max(len(index), 1)))
    for r, toks in enumerate(token_lists):
        for w in toks:
            out[r, index[w]] += 1.0
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.where(norms > 0, norms, 1.0)


def within_image_similarities(text_groups) -> np.ndarray:
    """Bag-of-words cosine for every pair of texts that describe the same image."""
    sims = []
    for texts in text_groups:
        if len(texts) < 2:
            continue
        vec = bag_of_words(texts)
        sims.extend(float(vec[i] @ vec[j]) for i, j in itertools.combinations(range(len(texts)), 2))
    return np.asarray(sims)


def diversity_report(text_groups, view_names=None) -> dict:
    """Mean and population variance of within-image similarity, plus whitespace word counts per view."""
    sims = within_image_similarities(text_groups)
    report = {
        "pairs": int(sims.size),
        "mean_similarity": float(sims.mean()) if sims.size else float("nan"),
        "similarity_variance": float(sims.var()) if sims.size else float("nan"),
    }
    if view_names is not None:
        counts: dict[str, list] = {}
        for texts, views in zip(text_groups, view_names):
            for text, view in zip(texts, views):
                counts.setdefault(view, []).append(len(text.split()))
        report["words"] = {
            v: {"avg_words": float(np.mean(c)), "word_variance": float(np.var(c))} for v, c in counts.items()
        }
    return report
