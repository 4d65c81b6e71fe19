"""Adversarial self-attack: intra-modality self-attention and the attack losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .attention import SpatialAttention
from .backbone import FeatureMap
from .losses import IdentityClassifier, identity_cross_entropy, uniform_cross_entropy


class IMSA(SpatialAttention):
    """Self-attention over stem features with a residual connection."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return super().forward(x, None)


def imsa(layer: IMSA, fmap: FeatureMap) -> FeatureMap:
    if fmap.stage != "stem":
        raise ValueError(f"IMSA acts on stem features, got a {fmap.stage} map")
    return FeatureMap(layer(fmap.data), "stem")


def loss_cov_id(embeddings: torch.Tensor, w_def: IdentityClassifier) -> torch.Tensor:
    """Push the frozen defense classifier towards uniform predictions on attack embeddings.

    ``w_def`` is applied through detached weights, so it never receives gradient.
    Minimum value is ln M, reached when every prediction is uniform.
    """
    if w_def.num_classes < 2:
        raise ValueError("loss_cov_id needs M >= 2")
    logits = F.linear(embeddings, w_def.weight.detach())
    return uniform_cross_entropy(logits)


def loss_att_id(embeddings: torch.Tensor, labels: torch.Tensor, w_att: IdentityClassifier) -> torch.Tensor:
    return identity_cross_entropy(embeddings, labels, w_att)
