"""Synthetic visible/infrared video benchmark and PK batch sampling.

Each identity is a stack of six coloured, textured horizontal bands that
translates across the frame with an identity-specific velocity. The infrared
modality keeps only a gamma-shifted luminance of the person over a dark,
noisy background, which opens a measurable pixel-level modality gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch

NUM_BANDS = 6
NUM_CAMERAS = 6


class Modality(str, Enum):
    VISIBLE = "visible"
    INFRARED = "infrared"

    @property
    def code(self) -> int:
        return 0 if self is Modality.VISIBLE else 1


@dataclass(frozen=True)
class IdentitySignature:
    colors: np.ndarray  # [NUM_BANDS, 3] in [0, 1]
    texture_freq: np.ndarray  # [NUM_BANDS] cycles per band
    texture_axis: np.ndarray  # [NUM_BANDS] 0 = horizontal stripes, 1 = vertical
    texture_amp: np.ndarray  # [NUM_BANDS]
    texture_phase: np.ndarray  # [NUM_BANDS]
    body_width: float  # fraction of frame width
    velocity: float  # pixels per frame at the reference width of 24
    bob_amp: float  # vertical bobbing amplitude in pixels
    bob_freq: float  # bobbing cycles per frame

    def to_dict(self) -> dict:
        return {
            "colors": self.colors.tolist(),
            "texture_freq": self.texture_freq.tolist(),
            "texture_axis": self.texture_axis.tolist(),
            "texture_amp": self.texture_amp.tolist(),
            "texture_phase": self.texture_phase.tolist(),
            "body_width": self.body_width,
            "velocity": self.velocity,
            "bob_amp": self.bob_amp,
            "bob_freq": self.bob_freq,
        }


def _make_signature(seed: int, index: int) -> IdentitySignature:
    rng = np.random.default_rng((seed, index))
    speed = rng.uniform(0.3, 1.2)
    return IdentitySignature(
        colors=rng.uniform(0.05, 0.95, size=(NUM_BANDS, 3)),
        texture_freq=rng.integers(0, 4, size=NUM_BANDS).astype(np.float64),
        texture_axis=rng.integers(0, 2, size=NUM_BANDS),
        texture_amp=rng.uniform(0.1, 0.45, size=NUM_BANDS),
        texture_phase=rng.uniform(0, 2 * np.pi, size=NUM_BANDS),
        body_width=float(rng.uniform(0.4, 0.6)),
        velocity=float(speed * rng.choice([-1.0, 1.0])),
        bob_amp=float(rng.uniform(0.0, 1.5)),
        bob_freq=float(rng.uniform(0.1, 0.4)),
    )


@dataclass(frozen=True)
class IdentityBank:
    num_identities: int
    seed: int
    signatures: tuple[IdentitySignature, ...] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "num_identities": self.num_identities,
            "seed": self.seed,
            "signatures": [s.to_dict() for s in self.signatures],
        }


def generate_identity_bank(num_identities: int, seed: int) -> IdentityBank:
    """Build ``num_identities`` signatures; signature ``i`` depends only on ``(seed, i)``."""
    if num_identities < 2:
        raise ValueError(f"num_identities must be >= 2, got {num_identities}")
    sigs = tuple(_make_signature(seed, i) for i in range(num_identities))
    keys = {json.dumps(s.to_dict(), sort_keys=True) for s in sigs}
    if len(keys) != num_identities:
        raise RuntimeError("identity signatures collided; choose another seed")
    return IdentityBank(num_identities=num_identities, seed=seed, signatures=sigs)


@dataclass
class VideoSequence:
    frames: np.ndarray  # [T, 3, H, W] float32 in [0, 1]
    modality: Modality
    identity: int
    camera_id: int

    def __len__(self) -> int:
        return self.frames.shape[0]


def _camera_background(camera: int, modality: Modality, height: int, width: int) -> np.ndarray:
    rng = np.random.default_rng((7919, camera, modality.code))
    ys = np.linspace(0.0, 1.0, height)[:, None]
    xs = np.linspace(0.0, 1.0, width)[None, :]
    if modality is Modality.VISIBLE:
        base = rng.uniform(0.35, 0.65, size=3)
        grad = rng.uniform(-0.15, 0.15, size=(3, 2))
        bg = base[:, None, None] + grad[:, 0, None, None] * ys + grad[:, 1, None, None] * xs
    else:
        level = rng.uniform(0.05, 0.15)
        bg = np.broadcast_to(level + 0.05 * ys, (3, height, width))
    return np.clip(bg, 0.0, 1.0)


def render_sequence(
    bank: IdentityBank,
    identity: int,
    modality: Modality | str,
    T: int,
    seed: int,
    height: int = 48,
    width: int = 24,
) -> VideoSequence:
    """Render ``T`` frames of one identity in one modality.

    Everything (camera, start offset, jitter, noise) is drawn from a generator
    seeded by ``(bank.seed, identity, modality, seed)``.
    """
    modality = Modality(modality)
    if not 0 <= identity < bank.num_identities:
        raise ValueError(f"identity {identity} out of range [0, {bank.num_identities})")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    sig = bank.signatures[identity]
    rng = np.random.default_rng((bank.seed, identity, modality.code, seed))
    camera = int(rng.integers(NUM_CAMERAS))
    background = _camera_background(camera, modality, height, width)
    gain = rng.uniform(0.85, 1.15)
    offset = rng.uniform(-1.5, 1.5) * width / 24
    phase = rng.uniform(0, 2 * np.pi)

    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    margin = 0.04 * height
    band_h = (height - 2 * margin) / NUM_BANDS
    half_w = 0.5 * sig.body_width * width
    velocity = sig.velocity * width / 24

    frames = np.empty((T, 3, height, width), dtype=np.float32)
    for t in range(T):
        top = margin + sig.bob_amp * np.sin(2 * np.pi * sig.bob_freq * t + phase)
        cx = 0.5 * width + offset + velocity * (t - 0.5 * (T - 1)) + rng.normal(0.0, 0.3)
        band = np.floor((ys - top) / band_h).astype(int)
        inside = (band >= 0) & (band < NUM_BANDS) & (np.abs(xs - cx) < half_w)
        band = np.clip(band, 0, NUM_BANDS - 1)
        band = np.broadcast_to(band, (height, width))

        along_y = (ys - top) / band_h - band
        along_x = (xs - cx) / (2 * half_w)
        coord = np.where(sig.texture_axis[band] == 0, along_y, along_x)
        pattern = np.sin(2 * np.pi * sig.texture_freq[band] * coord + sig.texture_phase[band])
        shade = 1.0 + sig.texture_amp[band] * pattern
        person = sig.colors[band].transpose(2, 0, 1) * shade[None] * gain  # [3, H, W]

        if modality is Modality.VISIBLE:
            img = np.where(inside[None], person, background)
            img = img + rng.normal(0.0, 0.03, size=img.shape)
        else:
            lum = 0.299 * person[0] + 0.587 * person[1] + 0.114 * person[2]
            ir = np.clip(lum, 0.0, 1.0) ** 0.6
            img = np.where(inside, ir, background[0])
            img = img + rng.normal(0.0, 0.05, size=img.shape)
            img = np.broadcast_to(img, (3, height, width))
        frames[t] = np.clip(img, 0.0, 1.0)
    return VideoSequence(frames=frames, modality=modality, identity=identity, camera_id=camera)


@dataclass
class Batch:
    """PK batch; ``visible[j]`` and ``infrared[j]`` always share an identity."""

    visible: list[VideoSequence]
    infrared: list[VideoSequence]

    @property
    def sequences(self) -> list[VideoSequence]:
        return self.visible + self.infrared

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.identity for s in self.sequences])

    @property
    def modalities(self) -> list[Modality]:
        return [s.modality for s in self.sequences]

    def __len__(self) -> int:
        return len(self.visible) + len(self.infrared)

    def tensors(self, dtype: torch.dtype = torch.float32):
        """Return ``(V, I, labels)`` with V, I shaped [n_b/2, T, 3, H, W]."""
        v = torch.from_numpy(np.stack([s.frames for s in self.visible])).to(dtype)
        i = torch.from_numpy(np.stack([s.frames for s in self.infrared])).to(dtype)
        labels = torch.tensor([s.identity for s in self.visible], dtype=torch.long)
        return v, i, labels


def sample_batch(
    bank: IdentityBank,
    P: int,
    K_seq: int,
    T: int,
    rng: np.random.Generator,
    height: int = 48,
    width: int = 24,
) -> Batch:
    """Draw P identities and K_seq sequences per identity in each modality."""
    if P > bank.num_identities:
        raise ValueError(f"P={P} exceeds the {bank.num_identities} identities in the bank")
    if P < 1 or K_seq < 1:
        raise ValueError("P and K_seq must be positive")
    ids = rng.choice(bank.num_identities, size=P, replace=False)
    visible, infrared = [], []
    for pid in ids:
        for _ in range(K_seq):
            sv, si = rng.integers(0, 2**31 - 1, size=2)
            visible.append(render_sequence(bank, int(pid), Modality.VISIBLE, T, int(sv), height, width))
            infrared.append(render_sequence(bank, int(pid), Modality.INFRARED, T, int(si), height, width))
    return Batch(visible=visible, infrared=infrared)


def render_split(
    bank: IdentityBank,
    modality: Modality | str,
    seqs_per_identity: int,
    T: int,
    seed: int,
    height: int = 48,
    width: int = 24,
) -> list[VideoSequence]:
    """Render a fixed evaluation split: ``seqs_per_identity`` sequences for every identity."""
    out = []
    for pid in range(bank.num_identities):
        for j in range(seqs_per_identity):
            out.append(render_sequence(bank, pid, modality, T, seed * 1000 + j, height, width))
    return out


def export_sequences(sequences: list[VideoSequence], root: str | Path) -> Path:
    """Write ``ids/<id>/<modality>/<seq>/frame_%03d.png`` plus ``manifest.json``."""
    from PIL import Image

    root = Path(root)
    counters: dict[tuple[int, str], int] = {}
    manifest = []
    for s in sequences:
        key = (s.identity, s.modality.value)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        rel = Path("ids") / str(s.identity) / s.modality.value / f"{idx:04d}"
        (root / rel).mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(s.frames):
            arr = np.round(frame.transpose(1, 2, 0) * 255).astype(np.uint8)
            Image.fromarray(arr).save(root / rel / f"frame_{t:03d}.png")
        manifest.append(
            {
                "identity": s.identity,
                "modality": s.modality.value,
                "camera": s.camera_id,
                "frames": len(s),
                "path": rel.as_posix(),
            }
        )
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def import_sequences(root: str | Path) -> list[VideoSequence]:
    from PIL import Image

    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    out = []
    for entry in manifest:
        frames = []
        for t in range(entry["frames"]):
            img = np.asarray(Image.open(root / entry["path"] / f"frame_{t:03d}.png"), dtype=np.float32)
            frames.append(img.transpose(2, 0, 1) / 255.0)
        out.append(
            VideoSequence(
                frames=np.stack(frames),
                modality=Modality(entry["modality"]),
                identity=int(entry["identity"]),
                camera_id=int(entry["camera"]),
            )
        )
    return out


def stack_frames(sequences: list[VideoSequence], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.frames for s in sequences])).to(dtype)


class SyntheticVideoDataset:
    """Training bank plus fixed query/gallery renders for evaluation.

    ``eval_identities="seen"`` evaluates on fresh renders of the training
    identities; ``"unseen"`` draws a disjoint bank of test identities.
    """

    EVAL_SEED = 1_000_003

    def __init__(self, num_ids: int = 10, seed: int = 0, T: int = 6, height: int = 48, width: int = 24,
                 eval_identities: str = "seen", num_test_ids: int | None = None, eval_seqs_per_id: int = 2):
        if eval_identities not in ("seen", "unseen"):
            raise ValueError(f"eval_identities must be 'seen' or 'unseen', got {eval_identities!r}")
        self.T, self.height, self.width = T, height, width
        self.train_bank = generate_identity_bank(num_ids, seed)
        if eval_identities == "seen":
            self.test_bank = self.train_bank
        else:
            # identities past the training range of the same generator are new people
            n_test = num_test_ids or num_ids
            full = generate_identity_bank(num_ids + n_test, seed)
            self.test_bank = IdentityBank(n_test, seed, full.signatures[num_ids:])
        self.eval_seqs_per_id = eval_seqs_per_id
        self._splits: dict[Modality, list[VideoSequence]] = {}

    @property
    def num_classes(self) -> int:
        return self.train_bank.num_identities

    def sample(self, P: int, K_seq: int, rng: np.random.Generator) -> Batch:
        return sample_batch(self.train_bank, P, K_seq, self.T, rng, self.height, self.width)

    def eval_split(self, modality: Modality | str) -> list[VideoSequence]:
        modality = Modality(modality)
        if modality not in self._splits:
            self._splits[modality] = render_split(self.test_bank, modality, self.eval_seqs_per_id, self.T,
                                                  self.EVAL_SEED, self.height, self.width)
        return self._splits[modality]
