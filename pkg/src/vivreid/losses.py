"""Identity cross-entropy variants shared by the attack, defense and part branches."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class IdentityClassifier(nn.Linear):
    """Bias-free linear identity classifier ``[M x D]``."""

    def __init__(self, dim: int, num_classes: int, role: str = ""):
        if num_classes < 2:
            raise ValueError(f"an identity classifier needs M >= 2 classes, got {num_classes}")
        super().__init__(dim, num_classes, bias=False)
        self.role = role
        nn.init.normal_(self.weight, std=0.001)

    @property
    def num_classes(self) -> int:
        return self.out_features


def check_labels(labels: torch.Tensor, num_classes: int):
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{int(labels.min())}, {int(labels.max())}]")


def identity_cross_entropy(embeddings: torch.Tensor, labels: torch.Tensor, classifier: IdentityClassifier) -> torch.Tensor:
    """Cross-entropy to one-hot identities, averaged over every sequence of both modalities."""
    check_labels(labels, classifier.num_classes)
    return F.cross_entropy(classifier(embeddings), labels)


def uniform_cross_entropy(logits: torch.Tensor) -> torch.Tensor:
    """Cross-entropy between softmax(logits) and the uniform distribution, averaged over rows."""
    if logits.shape[-1] < 2:
        raise ValueError("the uniform target needs at least two classes")
    return -F.log_softmax(logits, dim=-1).mean(dim=-1).mean()


def prediction_entropy(logits: torch.Tensor) -> torch.Tensor:
    logp = F.log_softmax(logits, dim=-1)
    return -(logp.exp() * logp).sum(dim=-1)
