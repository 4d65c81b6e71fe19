"""Adversarial defense: cross-modality cross-attention and the defense losses."""

from __future__ import annotations

import torch

from .attention import SpatialAttention
from .losses import IdentityClassifier, identity_cross_entropy


class CMCA(SpatialAttention):
    """Queries from one modality's map, keys and values from the other's."""

    def forward(self, query_map: torch.Tensor, reference_map: torch.Tensor) -> torch.Tensor:
        return super().forward(query_map, reference_map)


def loss_def_id(embeddings: torch.Tensor, labels: torch.Tensor, w_def: IdentityClassifier) -> torch.Tensor:
    return identity_cross_entropy(embeddings, labels, w_def)


def pairwise_sq_dist(x: torch.Tensor) -> torch.Tensor:
    diff = x[:, None, :] - x[None, :, :]
    return (diff * diff).sum(-1)


def loss_def_tri(embeddings: torch.Tensor, labels: torch.Tensor, margin: float = 0.3) -> torch.Tensor:
    """Batch-hard triplet loss on squared Euclidean distances.

    Every sequence in the (modality-mixed) batch is an anchor; its hardest
    positive is the farthest other sequence of the same identity and its
    hardest negative the closest sequence of any other identity.
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    n = embeddings.shape[0]
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(n, dtype=torch.bool, device=labels.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    if not bool(pos_mask.any(1).all()):
        raise ValueError("every anchor needs at least one other sequence of its identity")
    if not bool(neg_mask.any(1).all()):
        raise ValueError("every anchor needs at least one sequence of another identity")
    dist = pairwise_sq_dist(embeddings)
    hardest_pos = dist.masked_fill(~pos_mask, float("-inf")).amax(1)
    hardest_neg = dist.masked_fill(~neg_mask, float("inf")).amin(1)
    return torch.relu(hardest_pos - hardest_neg + margin).mean()
