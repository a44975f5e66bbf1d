"""Assignment of text slots to image branches, and text-diversity statistics."""

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CardinalityMismatch, TooFewTexts


class PlanMode(str, enum.Enum):
    IDENTITY = "identity"
    GROUPED = "grouped"
    FREE = "free"


@dataclass(frozen=True)
class MatchingPlan:
    assignment: tuple
    mode: PlanMode
    branch_count: int

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        object.__setattr__(self, "mode", PlanMode(self.mode))
        if any(a < 0 or a >= self.branch_count for a in self.assignment):
            raise ValueError(f"assignment {self.assignment} outside [0, {self.branch_count})")
        if self.mode is PlanMode.IDENTITY and self.assignment != tuple(range(self.branch_count)):
            raise ValueError("identity plan must map slot m to branch m with M == H")

    def __len__(self):
        return len(self.assignment)


def plan_identity(M: int, H: int) -> MatchingPlan:
    if M != H:
        raise CardinalityMismatch(f"identity matching needs M == H, got M={M}, H={H}")
    return MatchingPlan(tuple(range(M)), PlanMode.IDENTITY, H)


def plan_grouped(text_embeddings, H: int) -> MatchingPlan:
    """Average-linkage clustering of the M texts into H groups.

    Clusters are labelled in ascending order of their smallest member.
    """
    t = np.asarray(text_embeddings, dtype=np.float64)
    M = t.shape[0]
    if M < H or H < 1:
        raise CardinalityMismatch(f"cannot group {M} texts into {H} sets")
    owner = kernels.agglomerate(t @ t.T, H)
    labels = {root: i for i, root in enumerate(sorted(set(owner.tolist())))}
    return MatchingPlan(tuple(labels[o] for o in owner.tolist()), PlanMode.GROUPED, H)


def plan_free(image_embeddings, text_embeddings) -> MatchingPlan:
    """Send each text to the branch with the highest cosine similarity (lowest index on ties)."""
    v = np.asarray(image_embeddings, dtype=np.float64)
    t = np.asarray(text_embeddings, dtype=np.float64)
    # np.argmax returns the first maximum
    assignment = np.argmax(t @ v.T, axis=1)
    return MatchingPlan(tuple(assignment.tolist()), PlanMode.FREE, v.shape[0])


def pairwise_similarities(text_embeddings) -> np.ndarray:
    """Cosine similarities of the M(M-1)/2 distinct pairs, row-major upper triangle."""
    t = np.asarray(text_embeddings, dtype=np.float64)
    M = t.shape[0]
    if M < 2:
        raise TooFewTexts(f"need at least 2 texts, got {M}")
    iu = np.triu_indices(M, k=1)
    return (t @ t.T)[iu]


def text_similarity_stats(text_embeddings) -> dict:
    """Mean and population variance of the distinct pairwise similarities."""
    sims = pairwise_similarities(text_embeddings)
    return {"mean": float(sims.mean()), "variance": float(sims.var())}
