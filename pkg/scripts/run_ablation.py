"""Train and evaluate a set of ablation rows over several seeds, then print the table.

    python3 scripts/run_ablation.py --ablations baseline asam full --seeds 0 1 2 --root runs/table1

Extra ``--section.key value`` arguments are passed to every run as config overrides.
Runs whose two evaluation files already exist are skipped, so an interrupted
sweep can be restarted with the same command.
"""

import argparse
import sys
import time
from pathlib import Path

from vivreid import cli
from vivreid.config import ABLATIONS


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ablations", nargs="+", default=list(ABLATIONS), choices=list(ABLATIONS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--root", default="runs/table1")
    p.add_argument("--csv", help="write the table as CSV (defaults to <root>/table.csv)")
    args, overrides = p.parse_known_args(argv)

    root = Path(args.root)
    run_dirs = []
    for ablation in args.ablations:
        for seed in args.seeds:
            out = root / f"{ablation}_seed{seed}"
            run_dirs.append(out)
            if all((out / f"eval_{d}.json").exists() for d in cli.DIRECTIONS):
                print(f"skip {out} (already evaluated)")
                continue
            start = time.perf_counter()
            code = cli.main(["run", "--ablation", ablation, "--seed", str(seed), "--out", str(out), *overrides])
            print(f"{ablation} seed {seed}: exit {code} after {time.perf_counter() - start:.0f}s")

    rows = cli.collect_rows(run_dirs)
    print(cli.format_table(rows))
    cli.write_csv(rows, args.csv or root / "table.csv")
    return 0 if all(r["complete"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
