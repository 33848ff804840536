"""Run every pipeline stage for one configuration and print the summary table.

    python3 scripts/run_study.py configs/thermal_block.yaml runs/primal
"""
import argparse
import sys
from pathlib import Path

from romes import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    common = ["--config", args.config, "--out", args.out, "--threads", str(args.threads), "-v"]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    for stage in ("offline", "sample", "train-validate"):
        code = cli.main([stage, *common])
        if code:
            return code
    code = cli.main(["report", str(Path(args.out) / cli.REPORT_FILE), "--out", args.out])
    if code == 0:
        print((Path(args.out) / "summary.txt").read_text())
    return code


if __name__ == "__main__":
    sys.exit(main())
