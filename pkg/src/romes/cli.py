"""Command-line pipeline: offline, sample, train-validate, report.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, core
from .config import STUDY_INDEPENDENT, ConfigError, load_config
from .regression import GPTrainingError, RVMTrainingError

logger = logging.getLogger("romes")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
REPORT_FORMAT = "romes.report/1"
MODEL_FILE = "reduced_model.json"
TABLE_FILE = "samples.csv"
REPORT_FILE = "report.json"


class InputError(RuntimeError):
    pass


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str = __version__
    stages: dict = field(default_factory=dict)

    def record(self, stage, out, files, seconds, info=None):
        self.stages[stage] = {
            "files": {os.path.relpath(p, out): sha256(p) for p in files},
            "seconds": seconds, "info": info or {}}

    def files(self):
        return sorted(f for s in self.stages.values() for f in s["files"])

    def content_hash(self):
        """Hash of config and output contents; timings excluded."""
        blob = json.dumps({"config": self.config_hash, "version": self.version,
                           "files": {k: s["files"] for k, s in sorted(self.stages.items())},
                           "info": {k: s["info"] for k, s in sorted(self.stages.items())}},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, out):
        doc = {"format": "romes.manifest/1", "config_hash": self.config_hash,
               "version": self.version, "content_hash": self.content_hash(),
               "stages": self.stages}
        path = os.path.join(out, "manifest.json")
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        return path

    @classmethod
    def load_or_new(cls, out, config_hash):
        path = os.path.join(out, "manifest.json")
        if os.path.exists(path):
            with open(path) as fh:
                doc = json.load(fh)
            if doc.get("config_hash") == config_hash and doc.get("version") == __version__:
                return cls(config_hash, doc["version"], doc["stages"])
            logger.info("existing manifest belongs to another configuration; starting fresh")
        return cls(config_hash)


# -- stages -----------------------------------------------------------------------

def build_operator(cfg):
    from . import hifi
    mesh = hifi.build_mesh(cfg.divisions)
    return hifi.assemble_affine_components(mesh, tuple(map(tuple, cfg.output_points)))


def sample_points(rng, n, box, law="uniform"):
    lo, hi = box
    if law == "uniform":
        return rng.uniform(lo, hi, (n, core.N_PARAMS))
    return np.exp(rng.uniform(np.log(lo), np.log(hi), (n, core.N_PARAMS)))


def run_offline(cfg, out):
    from . import reduced
    t0 = time.perf_counter()
    op = build_operator(cfg)
    cand = sample_points(cfg.candidate_rng(), cfg.greedy.n_candidates, cfg.param_box)
    g = cfg.greedy
    basis = reduced.greedy_build(op, cand, g.tol, g.max_p, seed=cfg.seed, criterion=g.criterion)
    rm = reduced.offline_project(op, basis)
    dual_sizes = {}
    for oid in cfg.duals.outputs:
        for tol in cfg.duals.tolerances:
            db = reduced.greedy_build_dual(op, oid, cand, tol, cfg.duals.max_p, seed=cfg.seed,
                                           criterion=g.criterion)
            key = core.dual_key(oid, tol)
            rm.add_dual(op, oid, db, key=key)
            dual_sizes[key] = db.p
    path = os.path.join(out, MODEL_FILE)
    rm.save(path)
    info = {"n": op.n, "p": rm.p, "dual_sizes": dual_sizes,
            "max_bounds": basis.max_bounds}
    logger.info("offline: n=%d p=%d duals=%s", op.n, rm.p, dual_sizes)
    return [path], time.perf_counter() - t0, info


def run_sample(cfg, out, model_path=None):
    from . import reduced
    t0 = time.perf_counter()
    model_path = model_path or os.path.join(out, MODEL_FILE)
    if not os.path.exists(model_path):
        raise InputError(f"reduced model {model_path} not found; run 'offline' first")
    rm = reduced.ReducedModel.load(model_path)
    op = build_operator(cfg)
    if rm.basis.V.shape[0] != op.n:
        raise InputError(f"reduced model has state dimension {rm.basis.V.shape[0]}, "
                         f"configuration gives {op.n}")
    s = cfg.sampling
    pts = sample_points(cfg.sample_rng(), s.n_total, cfg.param_box, s.law)
    table = core.collect_samples(op, rm, pts, s.n_train, s.n_validation, threads=cfg.threads)
    path = os.path.join(out, TABLE_FILE)
    table.to_csv(path)
    info = {"rows": len(table), "failed": int(s.n_total - len(table))}
    return [path], time.perf_counter() - t0, info


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _stat_rows(entry):
    n = entry["n_train"]
    rows = []
    for c, st in entry["effectivity"].items():
        rows.append([n, f"effectivity@{c}"] + [st[k] for k in ("mean", "median", "std", "min", "max")])
    if entry["improvement"]:
        st = entry["improvement"]
        rows.append([n, "improvement"] + [st[k] for k in ("mean", "median", "std", "min", "max")])
    for name, st in entry["baselines"].items():
        if isinstance(st, dict):
            rows.append([n, name] + [st[k] for k in ("mean", "median", "std", "min", "max")])
    for c, v in entry["c_validation"].items():
        rows.append([n, f"c_validation@{c}", v, "", "", "", ""])
    return rows


def emit_plot_data(out, name, sweep, deviations, sigma2, bins=30):
    """Flat CSVs: statistic curves, coverage tables and the deviation histogram."""
    files = [
        _write_csv(os.path.join(out, f"{name}_curves.csv"),
                   ["n_train", "statistic", "mean", "median", "std", "min", "max"],
                   [r for e in sweep for r in _stat_rows(e)]),
        _write_csv(os.path.join(out, f"{name}_coverage.csv"),
                   ["n_train", "variance_mode", "omega", "c_obs"],
                   [[e["n_train"], m, w, c] for e in sweep
                    for m, tab in e["coverage"].items() for w, c in tab.items()]),
    ]
    if deviations is not None and len(deviations):
        counts, edges = np.histogram(deviations, bins=bins, density=True)
        mid = 0.5 * (edges[1:] + edges[:-1])
        pdf = np.exp(-0.5 * mid ** 2 / sigma2) / np.sqrt(2 * np.pi * sigma2)
        files.append(_write_csv(os.path.join(out, f"{name}_histogram.csv"),
                                ["left", "right", "density", "normal_pdf"],
                                np.column_stack([edges[:-1], edges[1:], counts, pdf]).tolist()))
    return files


def run_train_validate(cfg, out, table_path=None):
    """Surrogate sweeps from a stored sample table; no high-fidelity solves."""
    t0 = time.perf_counter()
    table_path = table_path or os.path.join(out, TABLE_FILE)
    if not os.path.exists(table_path):
        raise InputError(f"sample table {table_path} not found; run 'sample' first")
    table = core.SampleTable.from_csv(table_path)
    if table.rows("train").size == 0 or table.rows("validation").size == 0:
        raise InputError(f"{table_path} needs both training and validation rows")
    table.check_split()
    n_train = table.rows("train").size
    sizes = sorted({min(n, n_train) for n in cfg.sweep_sizes})
    # sweeps of one study differ only in their grid, so reports from them can be merged
    doc = {"format": REPORT_FORMAT, "version": __version__,
           "config_hash": cfg.hash(exclude=STUDY_INDEPENDENT),
           "surrogates": {}, "skipped": {}}
    files = []
    for spec in cfg.surrogates:
        if spec.regressor == "gp":
            spec = replace(spec, gp=replace(spec.gp, seed=cfg.seed))
        try:
            reps = core.training_sweep(table, spec, sizes, cfg.omegas, cfg.rigor_levels)
        except (core.SurrogateError, KeyError) as exc:
            logger.warning("surrogate %s skipped: %s", spec.name, exc)
            doc["skipped"][spec.name] = str(exc)
            continue
        sweep = [r.to_dict() for r in reps]
        doc["surrogates"][spec.name] = {"spec": spec.to_dict(), "sweep": sweep}
        files += emit_plot_data(out, spec.name, sweep, reps[-1].deviations, reps[-1].sigma2)
    path = os.path.join(out, REPORT_FILE)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=float)
    return [path] + files, time.perf_counter() - t0, {"surrogates": sorted(doc["surrogates"]),
                                                      "skipped": sorted(doc["skipped"])}


def merge_reports(docs):
    """Union of sweeps; reports must agree on format, version and config hash."""
    if not docs:
        raise InputError("no reports to merge")
    ref = docs[0]
    merged = {"format": REPORT_FORMAT, "version": ref.get("version"),
              "config_hash": ref.get("config_hash"), "surrogates": {}, "skipped": {}}
    for d in docs:
        if d.get("format") != REPORT_FORMAT or d.get("version") != ref.get("version"):
            raise InputError(f"report version mismatch: {d.get('format')} {d.get('version')} vs "
                             f"{ref.get('format')} {ref.get('version')}")
        if d.get("config_hash") != ref.get("config_hash"):
            raise InputError("reports come from different configurations (config hash differs)")
        merged["skipped"].update(d.get("skipped", {}))
        for name, s in d["surrogates"].items():
            tgt = merged["surrogates"].setdefault(name, {"spec": s["spec"], "sweep": []})
            have = {e["n_train"]: e for e in tgt["sweep"]}
            for e in s["sweep"]:
                if e["n_train"] in have and have[e["n_train"]] != e:
                    raise InputError(f"conflicting entries for {name} at N={e['n_train']}")
                have[e["n_train"]] = e
            tgt["sweep"] = [have[k] for k in sorted(have)]
    return merged


def summary_table(doc):
    lines = [f"{'surrogate':32s} {'N':>5s} {'cov50':>6s} {'cov90':>6s} {'cov95':>6s} "
             f"{'cval50':>7s} {'cval90':>7s} {'eta50':>7s} {'eta90':>7s} {'I_mean':>8s} {'I_med':>8s}"]

    def g(d, *keys):
        for k in keys:
            if not isinstance(d, dict) or k not in d:
                return float("nan")
            d = d[k]
        return d if d is not None else float("nan")

    for name, s in sorted(doc["surrogates"].items()):
        for e in s["sweep"]:
            cov = e["coverage"]["noise"]
            lines.append(
                f"{name:32s} {e['n_train']:5d} {g(cov, '0.5'):6.3f} {g(cov, '0.9'):6.3f} "
                f"{g(cov, '0.95'):6.3f} {g(e, 'c_validation', '0.5'):7.3f} "
                f"{g(e, 'c_validation', '0.9'):7.3f} {g(e, 'effectivity', '0.5', 'mean'):7.3f} "
                f"{g(e, 'effectivity', '0.9', 'mean'):7.3f} {g(e, 'improvement', 'mean'):8.3f} "
                f"{g(e, 'improvement', 'median'):8.3f}")
    return "\n".join(lines) + "\n"


def run_report(paths, out):
    t0 = time.perf_counter()
    docs = []
    for p in paths:
        if not os.path.exists(p):
            raise InputError(f"report {p} not found")
        with open(p) as fh:
            docs.append(json.load(fh))
    merged = merge_reports(docs)
    jpath = os.path.join(out, "summary.json")
    with open(jpath, "w") as fh:
        json.dump(merged, fh, indent=1)
    tpath = os.path.join(out, "summary.txt")
    with open(tpath, "w") as fh:
        fh.write(summary_table(merged))
    return [jpath, tpath], time.perf_counter() - t0, {"reports": len(docs)}, merged["config_hash"]


# -- entry point --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="romes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="YAML or JSON experiment config")
            sp.add_argument("--seed", type=int, help="override the config seed")
            sp.add_argument("--threads", type=int, help="worker threads for sampling")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("offline", help="greedy bases and offline projections"))
    sp = sub.add_parser("sample", help="evaluate errors and indicators on random inputs")
    common(sp)
    sp.add_argument("--model", help=f"reduced model file (default OUT/{MODEL_FILE})")
    sp = sub.add_parser("train-validate", help="train and validate error surrogates")
    common(sp)
    sp.add_argument("--table", help=f"sample table (default OUT/{TABLE_FILE})")
    sp = sub.add_parser("report", help="merge validation reports")
    common(sp, config=False)
    sp.add_argument("reports", nargs="+")
    return p


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.threads = args.threads
    cfg.validate()
    return cfg


def main(argv=None):
    from .hifi import AssemblyError, MeshError, SolverError
    from .reduced import BasisError, GramianError
    numerical = (SolverError, AssemblyError, BasisError, GramianError, GPTrainingError,
                 RVMTrainingError, np.linalg.LinAlgError)

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.command == "report":
            files, secs, info, chash = run_report(args.reports, args.out)
            man = RunManifest.load_or_new(args.out, chash)
        else:
            cfg = _config(args)
            man = RunManifest.load_or_new(args.out, cfg.hash())
            if args.command == "offline":
                files, secs, info = run_offline(cfg, args.out)
            elif args.command == "sample":
                files, secs, info = run_sample(cfg, args.out, args.model)
            else:
                files, secs, info = run_train_validate(cfg, args.out, args.table)
        man.record(args.command, args.out, files, secs, info)
        man.save(args.out)
    except (ConfigError, InputError, MeshError, OSError) as exc:
        print(f"romes {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except numerical as exc:
        print(f"romes {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
