"""Part-level spatial-temporal relation mining.

Stage-4 defense maps are cut into K horizontal strips. A motion LSTM runs over
time for each strip, a spatial LSTM runs over the strips of the last frame,
and its final state gates the original strip features. Motion features are
added back, averaged over time and the strips are concatenated top-to-bottom.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .losses import IdentityClassifier, identity_cross_entropy

MODES = ("full", "no_spa", "fr_e_ti_only")


class SpatialTemporalRelation(nn.Module):
    def __init__(self, dim: int, num_parts: int = 6, mode: str = "full"):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if num_parts < 1:
            raise ValueError("num_parts must be positive")
        self.dim = dim
        self.num_parts = num_parts
        self.mode = mode
        # one motion LSTM shared by all parts and both modalities
        self.lstm_mot = nn.LSTM(dim, dim, batch_first=True)
        self.lstm_spa = nn.LSTM(dim, dim, batch_first=True)
        self.gate_in = nn.Linear(2 * dim, dim)
        self.gate_out = nn.Linear(dim, dim)

    @property
    def out_dim(self) -> int:
        return self.num_parts * self.dim

    def partition_patches(self, maps: torch.Tensor) -> torch.Tensor:
        """[N, C, H, W] -> [N, K, C], strip k averaged over its rows and all columns."""
        n, c, h, w = maps.shape
        if h % self.num_parts:
            raise ValueError(f"map height {h} is not divisible by K={self.num_parts}")
        strips = maps.view(n, c, self.num_parts, h // self.num_parts, w)
        return strips.mean(dim=(3, 4)).transpose(1, 2)

    def motion_encode(self, tracks: torch.Tensor) -> torch.Tensor:
        """[B, T, C] temporal tracks of one part -> all T hidden outputs [B, T, C]."""
        if tracks.shape[1] == 0:
            raise ValueError("motion_encode needs at least one frame")
        out, _ = self.lstm_mot(tracks)
        return out

    def spatial_encode(self, parts: torch.Tensor) -> torch.Tensor:
        """[B, K, C] last-frame motion features in part order -> final hidden state [B, C]."""
        if parts.shape[1] != self.num_parts:
            raise ValueError(f"expected {self.num_parts} parts, got {parts.shape[1]}")
        out, _ = self.lstm_spa(parts)
        return out[:, -1]

    def gate(self, f: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.dim or spatial.shape[-1] != self.dim:
            raise ValueError(f"gate expects width {self.dim}, got {f.shape[-1]} and {spatial.shape[-1]}")
        hidden = torch.relu(self.gate_in(torch.cat([f, spatial], dim=-1)))
        return torch.sigmoid(self.gate_out(hidden))

    def highlight(self, f: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
        return f * self.gate(f, spatial)

    def aggregate_parts(self, highlighted: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        """[B, T, K, C] highlighted + motion features -> [B, K*C] descriptor."""
        if highlighted.shape != motion.shape:
            raise ValueError(f"grid mismatch: {tuple(highlighted.shape)} vs {tuple(motion.shape)}")
        if highlighted.dim() != 4 or highlighted.shape[2] != self.num_parts:
            raise ValueError(f"expected a complete [B, T, {self.num_parts}, C] grid")
        fused = (highlighted + motion).mean(dim=1)
        return fused.flatten(1)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        """[B, T, C, H, W] stage-4 maps -> [B, K*C] sequence descriptor."""
        b, t = maps.shape[:2]
        parts = self.partition_patches(maps.flatten(0, 1)).view(b, t, self.num_parts, self.dim)
        tracks = parts.permute(0, 2, 1, 3).reshape(b * self.num_parts, t, self.dim)
        motion = self.motion_encode(tracks).view(b, self.num_parts, t, self.dim).permute(0, 2, 1, 3)
        if self.mode == "fr_e_ti_only":
            highlighted = parts
        else:
            if self.mode == "full":
                spatial = self.spatial_encode(motion[:, -1])
            else:
                spatial = parts.new_zeros(b, self.dim)
            spatial = spatial[:, None, None, :].expand_as(parts)
            highlighted = self.highlight(parts, spatial)
        return self.aggregate_parts(highlighted, motion)


def loss_p_id(descriptors: torch.Tensor, labels: torch.Tensor, w_se: IdentityClassifier) -> torch.Tensor:
    return identity_cross_entropy(descriptors, labels, w_se)
