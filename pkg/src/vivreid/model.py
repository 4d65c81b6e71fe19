"""The full two-branch network: attack path, defense path and part relation head."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .adm import CMCA
from .asam import IMSA
from .backbone import Backbone, BackboneConfig, EmbeddingHead
from .data import Modality
from .frm_stig import MODES, SpatialTemporalRelation
from .losses import IdentityClassifier

FRM_CHOICES = ("off",) + MODES


@dataclass
class ModelConfig:
    num_classes: int
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_parts: int = 6
    attention_reduction: int = 2
    asam: bool = True
    adm: bool = True
    frm_stig: str = "full"

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.frm_stig not in FRM_CHOICES:
            raise ValueError(f"frm_stig must be one of {FRM_CHOICES}, got {self.frm_stig!r}")


@dataclass
class FusedSequenceFeature:
    maps: torch.Tensor  # [B, T, C, h, w] per-frame average of the two fused paths
    embedding: torch.Tensor  # [B, D]


def _frames(x: torch.Tensor) -> tuple[torch.Tensor, int, int]:
    b, t = x.shape[:2]
    return x.flatten(0, 1), b, t


class ReIDNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        bcfg = cfg.backbone
        dim = bcfg.embed_dim
        self.backbone = Backbone(bcfg)
        self.def_head = EmbeddingHead(dim)
        self.w_def = IdentityClassifier(dim, cfg.num_classes, "W_def")
        r = cfg.attention_reduction
        if cfg.asam:
            c = bcfg.stem_channels
            self.imsa = IMSA(c, c // r)
            self.att_head = EmbeddingHead(dim)
            self.w_att = IdentityClassifier(dim, cfg.num_classes, "W_att")
        if cfg.adm:
            c3 = bcfg.channels("stage3")
            self.cmca3 = CMCA(c3, c3 // r)
            self.cmca4 = CMCA(dim, dim // r)
        if cfg.frm_stig != "off":
            h4 = bcfg.spatial("stage4")[0]
            if h4 % cfg.num_parts:
                raise ValueError(f"stage-4 map height {h4} is not divisible by K={cfg.num_parts}")
            self.frm = SpatialTemporalRelation(dim, cfg.num_parts, cfg.frm_stig)
            self.w_se = IdentityClassifier(self.frm.out_dim, cfg.num_classes, "W_se")

    @property
    def embed_dim(self) -> int:
        return self.cfg.backbone.embed_dim

    @property
    def descriptor_dim(self) -> int:
        extra = self.frm.out_dim if self.cfg.frm_stig != "off" else 0
        return self.embed_dim + extra

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {
            "stems": [*self.backbone.stem_v.parameters(), *self.backbone.stem_i.parameters()],
            "def_encoder": list(self.backbone.defense.parameters()),
            "def_head": list(self.def_head.parameters()),
            "w_def": list(self.w_def.parameters()),
        }
        if self.cfg.asam:
            groups["att_encoder"] = list(self.backbone.att.parameters())
            groups["imsa"] = list(self.imsa.parameters())
            groups["att_head"] = list(self.att_head.parameters())
            groups["w_att"] = list(self.w_att.parameters())
        if self.cfg.adm:
            groups["cmca"] = [*self.cmca3.parameters(), *self.cmca4.parameters()]
        if self.cfg.frm_stig != "off":
            groups["lstm"] = list(self.frm.parameters())
            groups["w_se"] = list(self.w_se.parameters())
        return groups

    # -- stems --------------------------------------------------------------

    def stems(self, v: torch.Tensor, i: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """[B, T, 3, H, W] frames of each modality -> [B, T, C, h, w] stem maps."""
        return self.stem(v, Modality.VISIBLE), self.stem(i, Modality.INFRARED)

    def stem(self, frames: torch.Tensor, modality: Modality | str) -> torch.Tensor:
        x, b, t = _frames(frames)
        out = self.backbone.stem(x, modality)
        return out.view(b, t, *out.shape[1:])

    # -- attack path --------------------------------------------------------

    def attack_embed(self, stem_maps: torch.Tensor) -> torch.Tensor:
        """IMSA per frame, attack encoder, GAP over frames and BN -> [B, D]."""
        if not self.cfg.asam:
            raise RuntimeError("attack path is disabled in this configuration")
        if stem_maps.shape[1] == 0:
            raise ValueError("attack_embed needs at least one frame")
        x, b, t = _frames(stem_maps)
        x = self.backbone.att(self.imsa(x))
        return self.att_head(x.view(b, t, *x.shape[1:]))

    def attack_embeddings(self, fv: torch.Tensor, fi: torch.Tensor) -> torch.Tensor:
        """Attack embeddings of both modalities, visible rows first."""
        return self.attack_embed(torch.cat([fv, fi]))

    # -- defense path -------------------------------------------------------

    def defense_maps(self, stem_maps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x, b, t = _frames(stem_maps)
        d3 = self.backbone.defense(x, 1, 3)
        d = self.backbone.defense(d3, 4, 4)
        return d3, d

    def _fuse(self, d3, d, ref3, ref4):
        bar3 = self.backbone.defense(self.cmca3(d3, ref3), 4, 4)
        bar4 = self.cmca4(d, ref4)
        return (bar3 + bar4) / 2

    def defense_forward(self, fv: torch.Tensor, fi: torch.Tensor) -> tuple[FusedSequenceFeature, FusedSequenceFeature]:
        """Paired defense pass; frame t of visible sequence j attends to frame t of infrared sequence j."""
        if fv.shape[:2] != fi.shape[:2]:
            raise ValueError(f"visible {tuple(fv.shape[:2])} and infrared {tuple(fi.shape[:2])} batches are not paired")
        b, t = fv.shape[:2]
        d3, d = self.defense_maps(torch.cat([fv, fi]))
        if self.cfg.adm:
            n = b * t
            swap = lambda z: torch.cat([z[n:], z[:n]])  # noqa: E731
            fused = self._fuse(d3, d, swap(d3), swap(d))
        else:
            fused = d
        fused = fused.view(2 * b, t, *fused.shape[1:])
        emb = self.def_head(fused)
        return (
            FusedSequenceFeature(fused[:b], emb[:b]),
            FusedSequenceFeature(fused[b:], emb[b:]),
        )

    def defense_embeddings(self, fv: torch.Tensor, fi: torch.Tensor) -> torch.Tensor:
        vis, ir = self.defense_forward(fv, fi)
        return torch.cat([vis.embedding, ir.embedding])

    def part_descriptors(self, fv: torch.Tensor, fi: torch.Tensor) -> torch.Tensor:
        """FRM-STIG descriptors of both modalities (visible rows first) from raw stage-4 maps."""
        if self.cfg.frm_stig == "off":
            raise RuntimeError("part branch is disabled in this configuration")
        stem_maps = torch.cat([fv, fi])
        b, t = stem_maps.shape[:2]
        _, d = self.defense_maps(stem_maps)
        return self.frm(d.view(b, t, *d.shape[1:]))

    # -- inference ----------------------------------------------------------

    def describe(self, frames: torch.Tensor, modality: Modality | str) -> torch.Tensor:
        """Unpaired descriptor for retrieval: L2-normalised defense embedding (+ part descriptor).

        Without an opposite-modality partner, both cross-attention layers use
        the sequence itself as the reference.
        """
        stem_maps = self.stem(frames, modality)
        b, t = stem_maps.shape[:2]
        d3, d = self.defense_maps(stem_maps)
        fused = self._fuse(d3, d, d3, d) if self.cfg.adm else d
        emb = self.def_head(fused.view(b, t, *fused.shape[1:]))
        parts = [F.normalize(emb, dim=1)]
        if self.cfg.frm_stig != "off":
            parts.append(F.normalize(self.frm(d.view(b, t, *d.shape[1:])), dim=1))
        return torch.cat(parts, dim=1)
