"""Repeat the primal study over several seeds and tabulate the headline statistics.

Each seed changes both the greedy candidate set and the sample points.

    python3 scripts/seed_study.py --seeds 0 1 2 3 4 --out runs/seeds
"""
import argparse
import json
import os

from romes import cli
from romes.config import load_config

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "thermal_block.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/seeds")
    args = ap.parse_args()

    print(f"{'seed':>4s} {'p':>3s} {'cval50':>7s} {'cval90':>7s} {'eta50':>6s} "
          f"{'I_mean':>7s} {'I_med':>6s} {'mf_I_min':>8s}")
    for seed in args.seeds:
        cfg = load_config(args.config)
        cfg.seed = seed
        out = os.path.join(args.out, f"seed{seed}")
        os.makedirs(out, exist_ok=True)
        _, _, info = cli.run_offline(cfg, out)
        cli.run_sample(cfg, out)
        cli.run_train_validate(cfg, out)
        with open(os.path.join(out, cli.REPORT_FILE)) as fh:
            s = json.load(fh)["surrogates"]
        e = s["romes_energy_gp"]["sweep"][-1]
        c = s["romes_compliant_gp"]["sweep"][-1]
        mf = min(x["improvement"]["mean"] for x in s["multifidelity_compliant_gp"]["sweep"])
        print(f"{seed:4d} {info['p']:3d} {e['c_validation']['0.5']:7.3f} "
              f"{e['c_validation']['0.9']:7.3f} {e['effectivity']['0.5']['mean']:6.3f} "
              f"{c['improvement']['mean']:7.3f} {c['improvement']['median']:6.3f} {mf:8.3f}",
              flush=True)


if __name__ == "__main__":
    main()
