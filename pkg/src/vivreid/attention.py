"""Single-head scaled dot-product attention over the spatial grid of a feature map."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


class SpatialAttention(nn.Module):
    """Queries come from ``x``, keys/values from ``ref`` (``x`` itself when omitted).

    Projections are 1x1 convolutions; the attended values are added back onto
    ``x`` so the output keeps the input shape.
    """

    def __init__(self, channels: int, key_width: int | None = None):
        super().__init__()
        key_width = key_width or max(channels // 2, 1)
        if channels % key_width:
            raise ValueError(f"key width {key_width} must divide channel count {channels}")
        self.key_width = key_width
        self.query = nn.Conv2d(channels, key_width, 1)
        self.key = nn.Conv2d(channels, key_width, 1)
        self.value = nn.Conv2d(channels, channels, 1)

    def attention(self, x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        """Row-stochastic [B, N_query, N_ref] attention weights."""
        q = self.query(x).flatten(2).transpose(1, 2)
        k = self.key(ref).flatten(2)
        return torch.softmax(q @ k / math.sqrt(self.key_width), dim=-1)

    def forward(self, x: torch.Tensor, ref: torch.Tensor | None = None) -> torch.Tensor:
        ref = x if ref is None else ref
        if x.shape != ref.shape:
            raise ValueError(f"query map {tuple(x.shape)} and reference map {tuple(ref.shape)} differ")
        if x.dim() != 4:
            raise ValueError(f"expected [N, C, H, W], got {tuple(x.shape)}")
        v = self.value(ref).flatten(2)
        out = v @ self.attention(x, ref).transpose(1, 2)
        return x + out.view_as(x)
