"""Command-line runner: ``vivreid run``, ``vivreid report`` and ``vivreid export-data``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import config as C
from .data import Modality, export_sequences
from .evaluation import DIRECTIONS, REPORT_RANKS, evaluate, write_result
from .model import ReIDNet
from .training import (
    CheckpointMismatchError,
    Trainer,
    TrainingDivergenceError,
    load_checkpoint,
    load_model_state,
    run_training,
)

log = logging.getLogger("vivreid")

OUTPUT_ROOT_ENV = "VIVREID_OUTPUT_ROOT"
METRIC_KEYS = tuple(f"rank{r}" for r in REPORT_RANKS) + ("mAP",)


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into (key, text) pairs."""
    pairs, k = [], 0
    while k < len(extra):
        tok = extra[k]
        if not tok.startswith("--") or "." not in tok.split("=")[0]:
            raise C.ConfigError(f"unrecognised argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            k += 1
        else:
            if k + 1 >= len(extra):
                raise C.ConfigError(f"override {tok!r} needs a value")
            key, val = tok[2:], extra[k + 1]
            k += 2
        pairs.append((key, val))
    return pairs


def _out_dir(cfg: C.ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg.ablation}_seed{cfg.seed}"


def setup_determinism(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def evaluate_both(model, dataset, cfg: C.ExperimentConfig) -> dict:
    return {d: evaluate(model, dataset, d, cfg.eval.exclude_same_camera) for d in DIRECTIONS}


def run(cfg: C.ExperimentConfig, eval_only: str | None = None, resume: str | None = None) -> int:
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.out = str(out)
    C.dump(cfg, out / "config.yaml")
    setup_determinism(cfg.seed)
    dataset = C.build_dataset(cfg)
    model = ReIDNet(C.model_config(cfg, dataset.num_classes))

    if eval_only:
        load_model_state(model, load_checkpoint(eval_only))
    else:
        trainer = Trainer(model, cfg.train, dataset, seed=cfg.seed)
        if resume:
            trainer.load_state_dict(load_checkpoint(resume))

        def epoch_eval(m):
            res = evaluate_both(m, dataset, cfg)
            return {"eval": {d: {k: r.summary()[k] for k in ("rank1", "mAP")} for d, r in res.items()}}

        try:
            run_training(trainer, out, epoch_eval)
        except TrainingDivergenceError as exc:
            log.error("training diverged: %s", exc)
            return 2

    for direction, result in evaluate_both(model, dataset, cfg).items():
        write_result(result, out)
        s = result.summary()
        log.info("%s rank1=%.4f rank5=%.4f rank10=%.4f rank20=%.4f mAP=%.4f", direction,
                 s["rank1"], s["rank5"], s["rank10"], s["rank20"], s["mAP"])
    return 0


# -- report -----------------------------------------------------------------

def collect_rows(run_dirs) -> list[dict]:
    rows = []
    for d in map(Path, run_dirs):
        row = {"run": str(d), "ablation": None, "seed": None, "complete": True}
        try:
            cfg = C.load(d / "config.yaml")
            row["ablation"], row["seed"] = cfg.ablation, cfg.seed
        except (OSError, C.ConfigError):
            pass
        for direction in DIRECTIONS:
            path = d / f"eval_{direction}.json"
            if not path.exists():
                row["complete"] = False
                continue
            metrics = json.loads(path.read_text())
            for k in METRIC_KEYS:
                row[f"{direction}.{k}"] = metrics[k]
        rows.append(row)
    order = list(C.ABLATIONS)

    def key(r):
        pos = order.index(r["ablation"]) if r["ablation"] in order else len(order)
        return (pos, r["seed"] if r["seed"] is not None else -1, r["run"])

    return sorted(rows, key=key)


def _columns():
    return [f"{d}.{k}" for d in DIRECTIONS for k in METRIC_KEYS]


def format_table(rows: list[dict]) -> str:
    header = ["method", "seed"] + [f"{'IR->VIS' if d.startswith('infrared') else 'VIS->IR'} {k}"
                                   for d in DIRECTIONS for k in METRIC_KEYS]
    body = []
    for r in rows:
        label = C.ROW_LABELS.get(r["ablation"], r["run"])
        cells = [label, "" if r["seed"] is None else str(r["seed"])]
        for col in _columns():
            cells.append(f"{100 * r[col]:.2f}" if col in r else "incomplete")
        body.append(cells)
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(cells, widths)) for cells in body]
    return "\n".join(lines)


def write_csv(rows: list[dict], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "ablation", "seed", "complete"] + _columns())
        for r in rows:
            w.writerow([r["run"], r["ablation"], r["seed"], r["complete"]]
                       + [repr(r[c]) if c in r else "" for c in _columns()])


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vivreid", description="Visible-infrared video re-ID experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one configuration")
    r.add_argument("--config", action="append", default=[], help="YAML config layer (repeatable)")
    r.add_argument("--ablation", choices=list(C.ABLATIONS))
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--eval-only", metavar="CKPT", help="evaluate a checkpoint without training")
    r.add_argument("--resume", metavar="CKPT", help="continue training from a checkpoint")

    rep = sub.add_parser("report", help="tabulate finished runs in ablation-table order")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--csv", help="also write the table as CSV")

    ex = sub.add_parser("export-data", help="write the evaluation split as PNG frames + manifest")
    ex.add_argument("--config", action="append", default=[])
    ex.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _split_overrides(extra)
        if args.command == "run":
            cfg = C.resolve(args.config, args.ablation, args.seed, args.out, overrides)
            return run(cfg, eval_only=args.eval_only, resume=args.resume)
        if args.command == "report":
            if overrides:
                raise C.ConfigError("report takes no overrides")
            rows = collect_rows(args.run_dirs)
            print(format_table(rows))
            if args.csv:
                write_csv(rows, args.csv)
            return 0 if all(r["complete"] for r in rows) else 1
        if args.command == "export-data":
            cfg = C.resolve(args.config, overrides=overrides)
            ds = C.build_dataset(cfg)
            seqs = ds.eval_split(Modality.VISIBLE) + ds.eval_split(Modality.INFRARED)
            export_sequences(seqs, args.out)
            print(f"wrote {len(seqs)} sequences to {args.out}")
            return 0
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointMismatchError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
