"""Measure how far the self-attack pushes the defense classifier.

Loads a checkpoint (or trains stage 1 of the ``asam`` row from scratch) and
reports, on freshly sampled training batches, the prediction entropy of W_def
on attack-path embeddings and the accuracy of W_att on the same embeddings.
"""

import argparse
import math

import numpy as np
import torch

from vivreid import config as C
from vivreid.losses import prediction_entropy
from vivreid.model import ReIDNet
from vivreid.training import Trainer, load_checkpoint, load_model_state


def main(argv=None):
    p = argparse.ArgumentParser(description="W_def entropy / W_att accuracy on attack embeddings")
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
    p.add_argument("--ablation", default="asam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batches", type=int, default=5)
    args = p.parse_args(argv)

    torch.manual_seed(args.seed)
    cfg = C.resolve(ablation=args.ablation, seed=args.seed)
    if not cfg.modules.asam:
        p.error(f"ablation {args.ablation!r} has no attack path")
    dataset = C.build_dataset(cfg)
    model = ReIDNet(C.model_config(cfg, dataset.num_classes))
    if args.checkpoint:
        load_model_state(model, load_checkpoint(args.checkpoint))
    else:
        trainer = Trainer(model, cfg.train, dataset, seed=args.seed)
        while trainer.epoch < cfg.train.epochs_stage1:
            rec = trainer.train_epoch()
            print(f"epoch {rec['epoch']}: " + " ".join(f"{k}={v:.4f}" for k, v in rec["losses"].items()))

    model.eval()
    rng = np.random.default_rng(args.seed + 1)
    ent, hits, n = [], 0, 0
    with torch.no_grad():
        for _ in range(args.batches):
            v, i, y = dataset.sample(cfg.train.P, cfg.train.K_seq, rng).tensors()
            emb = model.attack_embeddings(*model.stems(v, i))
            ent.append(prediction_entropy(model.w_def(emb)))
            hits += int((model.w_att(emb).argmax(1) == torch.cat([y, y])).sum())
            n += len(emb)
    h = float(torch.cat(ent).mean())
    print(f"W_def entropy {h:.4f} = {h / math.log(dataset.num_classes):.3f} ln M; W_att accuracy {hits / n:.3f}")


if __name__ == "__main__":
    main()
