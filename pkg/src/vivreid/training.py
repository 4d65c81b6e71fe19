"""Two-stage alternating attack/defense training.

Each iteration reuses one PK batch for three updates: the defense identity +
triplet objective, the part identity objective, and the attack objective with
the defense classifier frozen. Stage 2 additionally freezes the defense
classifier in the defense update. Every update owns its own SGD optimizer, so
momentum and weight decay only ever touch the groups that update lists.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .adm import loss_def_id, loss_def_tri
from .asam import loss_att_id, loss_cov_id
from .frm_stig import loss_p_id
from .model import ModelConfig, ReIDNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOSS_NAMES = ("cov_id", "att_id", "def_id", "def_tri", "p_id")

# parameter groups touched by each of the three per-iteration updates
UPDATE_GROUPS = {
    "defense": ("stems", "def_encoder", "cmca", "def_head", "w_def"),
    "defense_frozen_wdef": ("def_encoder", "cmca", "def_head"),
    "part": ("stems", "def_encoder", "lstm", "w_se"),
    "attack": ("stems", "imsa", "att_encoder", "att_head", "w_att"),
}


class TrainingDivergenceError(RuntimeError):
    pass


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.5
    margin: float = 0.3
    epochs_stage1: int = 15
    epochs_stage2: int = 5
    iters_per_epoch: int = 30
    P: int = 8
    K_seq: int = 2
    lr: float = 0.01  # 0.12 is the full-scale value
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: float | None = None  # default: 10% of stage 1
    wdef_warmup_epochs: int = 0
    eval_every: int = 0
    keep_all_checkpoints: bool = False

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs_stage1 < 1 or self.epochs_stage2 < 1:
            raise ValueError("each stage needs at least one epoch")
        if self.margin <= 0:
            raise ValueError("triplet margin must be positive")

    @property
    def warmup_iters(self) -> int:
        epochs = 0.1 * self.epochs_stage1 if self.warmup_epochs is None else self.warmup_epochs
        return int(round(epochs * self.iters_per_epoch))


def total_loss(components: Mapping[str, float | torch.Tensor], cfg: TrainConfig):
    """Weighted sum cov_id + l1*att_id + l2*(def_id + def_tri) + l3*p_id; missing terms count as 0."""
    c = {k: components.get(k, 0.0) for k in LOSS_NAMES}
    scalar = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in c.items()}
    bad = {k: v for k, v in scalar.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDivergenceError(f"non-finite loss components: {bad}")
    return (c["cov_id"] + cfg.lambda1 * c["att_id"] + cfg.lambda2 * (c["def_id"] + c["def_tri"])
            + cfg.lambda3 * c["p_id"])


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def linear_warmup(iteration: int, base_lr: float, warmup_iters: int) -> float:
    if warmup_iters <= 0 or iteration >= warmup_iters:
        return base_lr
    return base_lr * (iteration + 1) / warmup_iters


def _check_finite(losses: Mapping[str, torch.Tensor], where: str):
    bad = {k: float(v.detach()) for k, v in losses.items() if not torch.isfinite(v)}
    if bad:
        raise TrainingDivergenceError(f"non-finite loss during {where}: {bad}")


class Trainer:
    """Owns the model, the per-update optimizers and the sampler state."""

    def __init__(self, model: ReIDNet, cfg: TrainConfig, dataset, seed: int = 0):
        self.model = model
        self.cfg = cfg
        self.dataset = dataset
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self.iteration = 0
        self.history: list[dict] = []
        groups = model.parameter_groups()
        self.optimizers = {}
        for name, group_names in UPDATE_GROUPS.items():
            params = [p for g in group_names for p in groups.get(g, [])]
            if name == "attack" and not model.cfg.asam:
                continue
            if name == "part" and model.cfg.frm_stig == "off":
                continue
            self.optimizers[name] = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum,
                                                    weight_decay=cfg.weight_decay)

    # -- schedule -----------------------------------------------------------

    @property
    def lr(self) -> float:
        return self.optimizers["defense"].param_groups[0]["lr"]

    def set_lr(self, lr: float):
        for opt in self.optimizers.values():
            for g in opt.param_groups:
                g["lr"] = lr

    def stage_of(self, epoch: int) -> int:
        return 1 if epoch <= self.cfg.epochs_stage1 else 2

    @property
    def total_epochs(self) -> int:
        return self.cfg.epochs_stage1 + self.cfg.epochs_stage2

    # -- updates ------------------------------------------------------------

    def _update(self, name: str, loss: torch.Tensor):
        self.model.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizers[name].step()

    def train_step_defense(self, v, i, labels, stage: int = 1) -> dict[str, float]:
        """Defense identity+triplet update, then the part identity update."""
        m, cfg = self.model, self.cfg
        y = torch.cat([labels, labels])
        fv, fi = m.stems(v, i)
        emb = m.defense_embeddings(fv, fi)
        losses = {"def_id": loss_def_id(emb, y, m.w_def), "def_tri": loss_def_tri(emb, y, cfg.margin)}
        _check_finite(losses, "defense update")
        self._update("defense" if stage == 1 else "defense_frozen_wdef",
                     cfg.lambda2 * (losses["def_id"] + losses["def_tri"]))
        if m.cfg.frm_stig != "off":
            fv, fi = m.stems(v, i)
            p = loss_p_id(m.part_descriptors(fv, fi), y, m.w_se)
            _check_finite({"p_id": p}, "part update")
            self._update("part", cfg.lambda3 * p)
            losses["p_id"] = p
        return {k: float(x.detach()) for k, x in losses.items()}

    def train_step_attack(self, v, i, labels) -> dict[str, float]:
        """Attack update with the defense classifier frozen."""
        m = self.model
        y = torch.cat([labels, labels])
        fv, fi = m.stems(v, i)
        emb = m.attack_embeddings(fv, fi)
        losses = {"cov_id": loss_cov_id(emb, m.w_def), "att_id": loss_att_id(emb, y, m.w_att)}
        _check_finite(losses, "attack update")
        self._update("attack", losses["cov_id"] + self.cfg.lambda1 * losses["att_id"])
        return {k: float(x.detach()) for k, x in losses.items()}

    def train_iteration(self, stage: int) -> dict[str, float]:
        self.set_lr(linear_warmup(self.iteration, self.cfg.lr, self.cfg.warmup_iters))
        batch = self.dataset.sample(self.cfg.P, self.cfg.K_seq, self.rng)
        dtype = next(self.model.parameters()).dtype
        v, i, labels = batch.tensors(dtype)
        losses = self.train_step_defense(v, i, labels, stage)
        if self.model.cfg.asam and self.epoch > self.cfg.wdef_warmup_epochs:
            losses.update(self.train_step_attack(v, i, labels))
        self.iteration += 1
        return losses

    def train_epoch(self) -> dict:
        self.epoch += 1
        stage = self.stage_of(self.epoch)
        self.model.train()
        sums: dict[str, float] = {}
        for _ in range(self.cfg.iters_per_epoch):
            for k, val in self.train_iteration(stage).items():
                sums[k] = sums.get(k, 0.0) + val
        means = {k: sums[k] / self.cfg.iters_per_epoch for k in LOSS_NAMES if k in sums}
        means["total"] = float(total_loss(means, self.cfg))
        record = {"epoch": self.epoch, "stage": stage, "iteration": self.iteration,
                  "losses": means, "lr": self.lr}
        self.history.append(record)
        return record

    # -- state --------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config_hash": config_hash(self.model.cfg),
            "model_config": asdict(self.model.cfg),
            "train_config": asdict(self.cfg),
            "model": self.model.state_dict(),
            "optimizers": {k: o.state_dict() for k, o in self.optimizers.items()},
            "rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "epoch": self.epoch,
            "iteration": self.iteration,
            "history": self.history,
        }

    def load_state_dict(self, state: dict):
        load_model_state(self.model, state)
        for k, o in self.optimizers.items():
            o.load_state_dict(state["optimizers"][k])
        self.rng.bit_generator.state = state["rng"]
        torch.set_rng_state(state["torch_rng"])
        self.epoch = state["epoch"]
        self.iteration = state["iteration"]
        self.history = list(state["history"])

    def save_checkpoint(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / f"ckpt_stage{self.stage_of(self.epoch)}_epoch{self.epoch}.pt"
        torch.save(self.state_dict(), path)
        return path


def load_model_state(model: ReIDNet, state: dict):
    if state.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {state.get('version')}")
    expected = config_hash(model.cfg)
    if state.get("config_hash") != expected:
        raise CheckpointMismatchError(
            f"checkpoint config hash {state.get('config_hash')} does not match model config {expected}")
    model.load_state_dict(state["model"])


def load_checkpoint(path: str | Path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def _write_log(path: Path, history: list[dict]):
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_training(trainer: Trainer, out_dir: str | Path, evaluate_fn=None) -> Trainer:
    """Run the remaining epochs of both stages, logging and checkpointing every epoch.

    ``evaluate_fn(model) -> dict`` is merged into the epoch record when
    ``eval_every`` divides the epoch. On divergence the previous checkpoint
    is left in place and the error propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.jsonl"
    _write_log(log_path, trainer.history)
    previous: Path | None = None
    while trainer.epoch < trainer.total_epochs:
        record = trainer.train_epoch()
        every = trainer.cfg.eval_every
        if evaluate_fn is not None and every and trainer.epoch % every == 0:
            record.update(evaluate_fn(trainer.model))
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info("epoch %d stage %d %s", record["epoch"], record["stage"], record["losses"])
        path = trainer.save_checkpoint(out_dir)
        if (previous is not None and not trainer.cfg.keep_all_checkpoints
                and previous.name.startswith(f"ckpt_stage{record['stage']}_")):
            previous.unlink(missing_ok=True)
        previous = path
    return trainer
