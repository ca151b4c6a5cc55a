"""Command-line entry point.

Subcommands: synth, prepare, train, eval, ablate, analyze, bench. Every
artifact-producing command writes a run manifest (resolved config, seed,
content hash of inputs, output paths) next to its outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, bench, synth
from .data import build_corpus, load_interactions, split_leave_one_out, write_interactions
from .errors import ConfigError, DataError, NumericError
from .model import (ExperimentConfig, evaluate, load_checkpoint, save_checkpoint,
                    train)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, message)


class SystemExit_(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# -- helpers -----------------------------------------------------------------

def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise DataError("no rows to write")
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_manifest(outdir: Path, command: str, config: dict,
                   inputs: dict, outputs: list) -> None:
    manifest = {"command": command, "config": config,
                "inputs": inputs, "outputs": [str(o) for o in outputs],
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _load_config(args) -> ExperimentConfig:
    """File values first, then explicit flag overrides; unknown keys rejected."""
    values: dict = {}
    if args.config:
        import tomli
        with open(args.config, "rb") as fh:
            values.update(tomli.load(fh))
    for f in dataclasses.fields(ExperimentConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return ExperimentConfig.from_dict(values)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat TOML config file")
    for f in dataclasses.fields(ExperimentConfig):
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(f"--{f.name}", type=lambda s: s.lower() in ("1", "true", "yes"),
                           default=None, metavar="BOOL")
        else:
            p.add_argument(f"--{f.name}", type=type(f.default), default=None)


def _read_corpus(path):
    return build_corpus(load_interactions(path))


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synth.SyntheticSpec(
        user_count=args.users, item_count=args.items, expl_count=args.expls,
        interest_cluster_count=args.clusters, seed=args.seed)
    interactions, labels = synth.generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / "interactions.tsv"
    write_interactions(tsv, interactions)
    with open(out / "labels.json", "w") as fh:
        json.dump({"cluster": labels.cluster, "rhythm": labels.rhythm,
                   "alignment": labels.alignment}, fh, indent=2)
    write_manifest(out, "synth", dataclasses.asdict(spec) | {
        "rhythm_profiles": [dataclasses.asdict(r) for r in spec.rhythm_profiles]},
        {}, [tsv, out / "labels.json"])
    print(f"wrote {len(interactions)} interactions to {tsv}")
    return 0


def cmd_prepare(args) -> int:
    corpus = _read_corpus(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, vocab in (("item_vocab.json", corpus.item_vocab),
                        ("expl_vocab.json", corpus.expl_vocab),
                        ("user_vocab.json", corpus.user_vocab)):
        with open(out / name, "w") as fh:
            json.dump(vocab, fh)
    splits = [split_leave_one_out(s) for s in corpus.sequences]
    summary = {"users": len(corpus.sequences), "items": corpus.n_items,
               "expls": corpus.n_expls, "dropped_users": corpus.dropped_users,
               "total_train_steps": sum(len(sp.train) for sp in splits)}
    with open(out / "split_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    write_manifest(out, "prepare", {}, {"input": _file_hash(args.input)},
                   [out / "split_summary.json"])
    print(json.dumps(summary))
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    corpus = _read_corpus(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, report = train(corpus, config,
                           log=(lambda row: print(json.dumps(row))) if args.verbose else None)
    save_checkpoint(out / "checkpoint", params)
    rows = [{**r, "config_hash": config.hash(), "seed": config.seed}
            for r in report.epochs]
    write_csv(out / "train_report.csv", rows)
    write_manifest(out, "train", config.to_dict(),
                   {"input": _file_hash(args.input)},
                   [out / "checkpoint.npz", out / "checkpoint.json",
                    out / "train_report.csv"])
    print(f"best epoch {report.best_epoch}, val NDCG@10 {report.best_val_ndcg:.4f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(str(args.checkpoint) + ".json")
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    params = load_checkpoint(args.checkpoint)
    corpus = _read_corpus(args.input)
    res = evaluate(params, params.config, corpus, split=args.split, k=args.K)
    rows = [{"dataset": str(args.input), "task": task, "K": args.K,
             "recall": res[task]["recall"], "ndcg": res[task]["ndcg"],
             "users": res[task]["users"],
             "config_hash": params.config.hash(), "seed": params.config.seed}
            for task in ("rec", "exp")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", rows)
    write_manifest(out, "eval", params.config.to_dict(),
                   {"input": _file_hash(args.input)}, [out / "eval.csv"])
    for r in rows:
        print(f"{r['task']}: R@{args.K}={r['recall']:.4f} N@{args.K}={r['ndcg']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    corpus = _read_corpus(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = analysis.ablation_grid(corpus, config)
    write_csv(out / "ablation.csv", rows)
    write_manifest(out, "ablate", config.to_dict(),
                   {"input": _file_hash(args.input)}, [out / "ablation.csv"])
    print(f"wrote {len(rows)} ablation rows to {out / 'ablation.csv'}")
    return 0


def cmd_analyze(args) -> int:
    config = _load_config(args)
    corpus = _read_corpus(args.input)
    params = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    gamma = analysis.gamma_interval_analysis(params, params.config, corpus)
    write_csv(out / "gamma_points.csv",
              [{**r, "config_hash": params.config.hash(), "seed": params.config.seed}
               for r in gamma["points"]])
    fit_rows = [{"branch": b, "slope": f.slope, "intercept": f.intercept,
                 "r": f.r, "degenerate": f.degenerate}
                for b, f in (("rec", gamma["fit_rec"]), ("exp", gamma["fit_exp"]))]
    write_csv(out / "gamma_fit.csv", fit_rows)
    outputs += [out / "gamma_points.csv", out / "gamma_fit.csv"]

    if params.config.effective_mi_mode in ("dynamic_dual", "single_shared"):
        mu_rows = analysis.user_mu_means(params, params.config, corpus)
        points = analysis.normalize_mu(
            np.array([[r["mu_rec"], r["mu_exp"]] for r in mu_rows]))
        km = analysis.kmeans(points, k=args.k, seed=params.config.seed)
        for r, p, a in zip(mu_rows, points, km.assignments):
            r.update({"mu_rec_norm": p[0], "mu_exp_norm": p[1], "cluster": int(a)})
        write_csv(out / "mu_clusters.csv", mu_rows)
        outputs.append(out / "mu_clusters.csv")

    write_manifest(out, "analyze", params.config.to_dict(),
                   {"input": _file_hash(args.input)}, outputs)
    print(f"gamma slope (rec) = {gamma['fit_rec'].slope:.3e}, "
          f"r = {gamma['fit_rec'].r:.3f}")
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = bench.efficiency_bench(d=args.d, h_list=tuple(args.H_list),
                                    seed=args.seed)
    outputs = []
    for name in ("incremental", "scan", "training"):
        path = out / f"bench_{name}.csv"
        write_csv(path, [{**r, "seed": args.seed} for r in report[name]])
        outputs.append(path)
    write_manifest(out, "bench", {"d": args.d, "H_list": args.H_list,
                                  "seed": args.seed}, {}, outputs)
    print(f"wrote benchmark CSVs to {out}")
    return 0


# -- main --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tmepsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--expls", type=int, default=200)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="build vocabularies and split summary")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--K", type=int, default=10)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the 8-cell toggle ablation grid")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("analyze", help="gate regression and weight clustering")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("bench", help="efficiency benchmarks")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=240)
    p.add_argument("--H-list", type=int, nargs="+", default=[2, 4, 6, 8],
                   dest="H_list")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit_ as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
