"""Modality stems, staged residual encoders and the GAP+BN embedding head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .data import Modality

STAGES = ("stem", "stage1", "stage2", "stage3", "stage4")

# route name -> (entry stage, exit stage)
ROUTES = {
    "att": ("stem", "stage4"),
    "def": ("stem", "stage4"),
    "def_stage1to3": ("stem", "stage3"),
    "def_stage4": ("stage3", "stage4"),
}


@dataclass
class BackboneConfig:
    preset: str = "tiny"
    input_size: tuple[int, int] = (48, 24)
    stem_channels: int = 16
    stem_kernel: int = 3
    stem_stride: int = 2
    stem_pool: bool = False
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    stage_strides: tuple[int, ...] = (1, 2, 2, 1)
    block: str = "basic"

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.stage_channels = tuple(self.stage_channels)
        self.stage_blocks = tuple(self.stage_blocks)
        self.stage_strides = tuple(self.stage_strides)
        if not len(self.stage_channels) == len(self.stage_blocks) == len(self.stage_strides) == 4:
            raise ValueError("backbone needs exactly four stages after the stem")
        if self.block not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block type {self.block!r}")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "BackboneConfig":
        if name == "tiny":
            base = {}
        elif name == "resnet50_shape":
            base = dict(
                input_size=(288, 144),
                stem_channels=64,
                stem_kernel=7,
                stem_pool=True,
                stage_channels=(256, 512, 1024, 2048),
                stage_blocks=(3, 4, 6, 3),
                block="bottleneck",
            )
        else:
            raise ValueError(f"unknown backbone preset {name!r}")
        base.update(overrides)
        return cls(preset=name, **base)

    @property
    def embed_dim(self) -> int:
        return self.stage_channels[-1]

    def channels(self, stage: str) -> int:
        return self.stem_channels if stage == "stem" else self.stage_channels[STAGES.index(stage) - 1]

    def spatial(self, stage: str) -> tuple[int, int]:
        """Spatial size of a map at ``stage`` for the configured input size."""
        h, w = self.input_size
        k, s = self.stem_kernel, self.stem_stride
        h, w = (h + 2 * (k // 2) - k) // s + 1, (w + 2 * (k // 2) - k) // s + 1
        if self.stem_pool:
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
        for i in range(STAGES.index(stage)):
            st = self.stage_strides[i]
            h, w = (h - 1) // st + 1, (w - 1) // st + 1
        return h, w


@dataclass
class FeatureMap:
    data: torch.Tensor  # [N, C, H, W]
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage tag {self.stage!r}")


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU()
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return self.relu(out + identity)


class Bottleneck(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        mid = cout // 4
        self.conv1 = nn.Conv2d(cin, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.conv3 = nn.Conv2d(mid, cout, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU()
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return self.relu(out + identity)


class Stem(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        k = cfg.stem_kernel
        layers = [
            nn.Conv2d(3, cfg.stem_channels, k, cfg.stem_stride, k // 2, bias=False),
            nn.BatchNorm2d(cfg.stem_channels),
            nn.ReLU(),
        ]
        if cfg.stem_pool:
            layers.append(nn.MaxPool2d(3, 2, 1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class ResidualEncoder(nn.Module):
    """Four residual stages; ``forward(x, start, stop)`` runs stages start..stop (1-based)."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        block = BasicBlock if cfg.block == "basic" else Bottleneck
        cin = cfg.stem_channels
        stages = []
        for cout, n, stride in zip(cfg.stage_channels, cfg.stage_blocks, cfg.stage_strides):
            blocks = [block(cin, cout, stride)] + [block(cout, cout, 1) for _ in range(n - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x, start: int = 1, stop: int = 4):
        for stage in self.stages[start - 1 : stop]:
            x = stage(x)
        return x


def temporal_gap(maps: torch.Tensor) -> torch.Tensor:
    """Average [B, T, C, H, W] over space per frame, then over frames -> [B, C]."""
    if maps.dim() != 5:
        raise ValueError(f"expected [B, T, C, H, W], got shape {tuple(maps.shape)}")
    if maps.shape[1] == 0:
        raise ValueError("cannot pool an empty frame list")
    return maps.mean(dim=(3, 4)).mean(dim=1)


class EmbeddingHead(nn.Module):
    """GAP over frames and positions followed by a BatchNorm1d neck."""

    def __init__(self, dim: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(dim)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return self.bn(temporal_gap(maps))


def pool_norm(maps: list[FeatureMap], head: EmbeddingHead) -> torch.Tensor:
    """Pool a list of T per-frame maps (each [B, C, H, W]) into [B, D] embeddings."""
    if not maps:
        raise ValueError("pool_norm needs at least one frame")
    shapes = {tuple(m.data.shape) for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent frame map shapes: {sorted(shapes)}")
    return head(torch.stack([m.data for m in maps], dim=1))


def _init_weights(module: nn.Module):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class Backbone(nn.Module):
    """Unshared visible/infrared stems plus disjoint attack and defense encoders."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.stem_v = Stem(cfg)
        self.stem_i = Stem(cfg)
        self.att = ResidualEncoder(cfg)
        self.defense = ResidualEncoder(cfg)
        _init_weights(self)

    def stem(self, frames: torch.Tensor, modality: Modality | str) -> torch.Tensor:
        stem = self.stem_v if Modality(modality) is Modality.VISIBLE else self.stem_i
        return stem(frames)

    def stem_forward(self, frames: torch.Tensor, modality: Modality | str) -> FeatureMap:
        if frames.dim() != 4 or tuple(frames.shape[1:]) != (3, *self.cfg.input_size):
            raise ValueError(
                f"frames must be [N, 3, {self.cfg.input_size[0]}, {self.cfg.input_size[1]}], "
                f"got {tuple(frames.shape)}"
            )
        return FeatureMap(self.stem(frames, modality), "stem")

    def encoder_forward(self, route: str, fmap: FeatureMap) -> FeatureMap:
        if route not in ROUTES:
            raise ValueError(f"unknown encoder route {route!r}")
        entry, exit_ = ROUTES[route]
        if fmap.stage != entry:
            raise ValueError(f"route {route!r} expects a {entry} map, got {fmap.stage}")
        if fmap.data.shape[1] != self.cfg.channels(entry):
            raise ValueError(f"expected {self.cfg.channels(entry)} channels, got {fmap.data.shape[1]}")
        encoder = self.att if route == "att" else self.defense
        start, stop = STAGES.index(entry) + 1, STAGES.index(exit_)
        return FeatureMap(encoder(fmap.data, start, stop), exit_)
