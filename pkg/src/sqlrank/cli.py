"""Command-line pipeline: preprocess, train, evaluate, verify.

Exit codes: 0 success, 1 verification failure, 2 usage or data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import data, metrics, verify
from ._random import substream
from .trainer import (DivergenceError, TrainConfig, fit, load_checkpoint, save_checkpoint,
                      save_sidecar)

log = logging.getLogger("sqlrank")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

_TRAIN_FLAGS = {
    "rank": "r", "lam": "lam", "ss": "ss", "rate": "rate", "rho": "rho", "k": "k",
    "epochs": "epochs", "patience": "patience", "init_scale": "init_scale",
}


class UsageError(Exception):
    pass


def preset_names():
    return sorted(p.stem for p in resources.files("sqlrank.presets").iterdir()
                  if p.name.endswith(".json"))


def load_preset(name):
    if name is None:
        return {}
    path = resources.files("sqlrank.presets") / f"{name}.json"
    if not path.is_file():
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
    return json.loads(path.read_text())


def _parse_k(value):
    if value == "full":
        return value
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("k must be an integer or 'full'") from None
    if k < 1:
        raise argparse.ArgumentTypeError("k must be positive")
    return k


def _parse_patience(value):
    if value in ("inf", "none", "off"):
        return math.inf
    return int(value)


def _parse_cutoffs(text):
    try:
        ks = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cutoff list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return ks


def _delimiter(value):
    return {"auto": "auto", "tab": "\t", "comma": ",", "space": None}.get(value, value)


def _require_file(path, what):
    if path is None:
        raise UsageError(f"missing {what}")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _outdir(args):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def build_train_config(args):
    """Preset < config file < command-line flags."""
    preset = load_preset(args.preset)
    values = dict(preset.get("train", {}))
    if args.config:
        cfg_path = _require_file(args.config, "config file")
        try:
            values.update(json.loads(cfg_path.read_text()).get("train", {}))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{cfg_path}: {exc}") from None
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    values["seed"] = args.seed
    if args.no_sq:
        values["sq"] = False
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training configuration: {exc}") from None


def _id_map_for(args, input_path):
    path = Path(args.idmap) if args.idmap else input_path.parent / "idmap.json"
    _require_file(path, "id map")
    return data.read_id_map(path)


def cmd_preprocess(args):
    preset = load_preset(args.preset)
    split = dict(preset.get("split", {}))
    for flag, key in (("min_ratings", "min_ratings_per_user"),
                      ("train_per_user", "train_per_user"),
                      ("threshold", "implicit_threshold")):
        value = getattr(args, flag)
        if value is not None:
            split[key] = value
    if "min_ratings_per_user" not in split or "train_per_user" not in split:
        raise UsageError("need --preset or both --min-ratings and --train-per-user")
    mode = args.mode or preset.get("mode", data.EXPLICIT)
    delimiter = _delimiter(args.delimiter or preset.get("delimiter", "auto"))
    path = _require_file(args.input, "input file")

    threshold = split.get("implicit_threshold")
    load_mode = data.EXPLICIT if threshold is not None else mode
    ds = data.load_ratings(path, delimiter=delimiter, mode=load_mode)
    if threshold is not None and mode == data.IMPLICIT:
        ds = data.binarize(ds, threshold)
    seed = int(substream(args.seed, "data-split").integers(2 ** 63))
    spec = data.SplitSpec(split["min_ratings_per_user"], split["train_per_user"],
                          threshold, seed)
    train, test = data.split_train_test(ds, spec)

    out = _outdir(args)
    data.save_ratings(train, out / "train.txt")
    data.save_ratings(test, out / "test.txt")
    data.save_id_map(train, out / "idmap.json")
    summary = {"n": train.n, "m": train.m, "mode": train.mode,
               "input_entries": len(ds), "train_entries": len(train),
               "test_entries": len(test), "dropped_users": ds.n - train.n,
               "split": {"min_ratings_per_user": spec.min_ratings_per_user,
                         "train_per_user": spec.train_per_user,
                         "implicit_threshold": threshold, "seed": args.seed}}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_train(args):
    from . import plotting

    cfg = build_train_config(args)
    train_path = _require_file(args.input, "training file")
    id_map = _id_map_for(args, train_path)
    train = data.load_split_file(train_path, id_map)
    valid = data.load_split_file(_require_file(args.valid, "validation file"), id_map) \
        if args.valid else None
    metric = "P@1" if train.mode == data.IMPLICIT else "NDCG@10"
    full_history = []

    def report(state):
        row = dict(state.history[-1])
        full_history.append(row)
        line = f"epoch {row['epoch']:4d}  loss {row['loss']:.6f}"
        if "validation" in row:
            line += f"  {metric} {row['validation']:.5f}"
        print(line, flush=True)

    try:
        state = fit(train, valid, cfg, threads=args.threads, callback=report)
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED

    out = _outdir(args)
    save_checkpoint(state.model, out / "model.bin")
    best = None if math.isinf(state.best_validation) else state.best_validation
    save_sidecar(cfg, full_history, out / "model.json",
                 extra={"best_epoch": state.epoch, "best_validation": best,
                        "validation_metric": metric if valid is not None else None,
                        "n": train.n, "m": train.m})
    if full_history and not args.no_figures:
        plotting.plot_history(full_history, out / "history.png", metric)
    print(json.dumps({"best_epoch": state.epoch, "best_validation": best}))
    return EXIT_OK


def cmd_evaluate(args):
    from . import plotting

    model = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    train_path = _require_file(args.input, "training file")
    id_map = _id_map_for(args, train_path)
    train = data.load_split_file(train_path, id_map)
    test = data.load_split_file(_require_file(args.test, "test file"), id_map)
    if (model.n, model.m) != (train.n, train.m):
        raise UsageError(f"checkpoint is {model.n}x{model.m} but data is {train.n}x{train.m}")
    report = metrics.evaluate(model, train, test, args.cutoffs).to_dict()
    text = json.dumps(report, indent=1)
    print(text)
    if args.outdir:
        out = _outdir(args)
        (out / "eval.json").write_text(text + "\n")
        if not args.no_figures:
            plotting.plot_report(report, out / "eval.png")
    return EXIT_OK


def _summary_line(check):
    status = "PASS" if check["passed"] else "FAIL"
    detail = {k: v for k, v in check.items() if k not in ("name", "passed", "table")}
    return f"[{status}] {check['name']}: " + ", ".join(
        f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items())


def cmd_verify(args):
    checks = verify.run_all(args.seed, args.mc_samples, args.inject_fault)
    for check in checks:
        print(_summary_line(check))
    if args.outdir:
        from . import plotting

        out = _outdir(args)
        _write_json(out / "verify.json", checks)
        if not args.no_figures:
            plotting.plot_monte_carlo(checks[3]["table"], out / "monte_carlo.png")
            plotting.plot_timing(checks[4], out / "timing.png")
    failed = [c for c in checks if not c["passed"]]
    for check in failed:
        detail = {k: v for k, v in check.items() if k != "table"}
        print(json.dumps(detail, indent=1), file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_check_grad(args):
    instances = verify.gradient_instances(args.seed, args.instances)
    report = [verify.check_finite_difference(instances),
              verify.check_kernel_equivalence(instances + verify.ragged_instances(args.seed))]
    print(json.dumps(report, indent=1))
    return EXIT_OK if all(r["passed"] for r in report) else EXIT_VERIFY


def cmd_sample(args):
    try:
        s = np.array([float(tok) for tok in args.scores.split(",")])
    except ValueError:
        raise UsageError(f"bad score vector {args.scores!r}") from None
    if not 1 <= len(s) <= 7:
        raise UsageError("score vector must have 1 to 7 entries")
    check = verify.check_monte_carlo(args.seed, args.mc_samples, s)
    doc = {"scores": s.tolist(), "samples": args.mc_samples,
           "tv_distance": check["tv_distance"], "threshold": check["threshold"],
           "frequencies": {",".join(map(str, row["permutation"])):
                           {"empirical": row["empirical"], "model": row["model"]}
                           for row in check["table"]}}
    print(json.dumps(doc, indent=1))
    if args.outdir:
        out = _outdir(args)
        _write_json(out / "sample.json", doc)
        if not args.no_figures:
            from . import plotting

            plotting.plot_monte_carlo(check["table"], out / "sample.png")
    return EXIT_OK


def _add_common(p, outdir_required=False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=outdir_required)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (falls back to SQLRANK_THREADS)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG reports")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="sqlrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="binarize, filter and split a ratings file")
    _add_common(p, outdir_required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--preset")
    p.add_argument("--mode", choices=[data.EXPLICIT, data.IMPLICIT])
    p.add_argument("--delimiter", help="auto, tab, comma, space or a literal separator")
    p.add_argument("--min-ratings", type=int)
    p.add_argument("--train-per-user", type=int)
    p.add_argument("--threshold", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit factors on a preprocessed split")
    _add_common(p, outdir_required=True)
    p.add_argument("--input", required=True, help="training file")
    p.add_argument("--valid", help="validation file (enables early stopping)")
    p.add_argument("--idmap")
    p.add_argument("--preset")
    p.add_argument("--config", help="JSON file with a 'train' block")
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--ss", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--k", type=_parse_k)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=_parse_patience)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--no-sq", action="store_true", help="freeze one ranking matrix")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="precision@k / NDCG@k of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="training file (items to exclude)")
    p.add_argument("--test", required=True)
    p.add_argument("--idmap")
    p.add_argument("--cutoffs", type=_parse_cutoffs, default=[1, 5, 10])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the numerical self-checks")
    _add_common(p)
    p.add_argument("--mc-samples", type=int, default=verify.MC_NOMINAL)
    p.add_argument("--inject-fault", action="store_true",
                   help="perturb the fast gradient by 1e-3")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check-grad", help="finite-difference and kernel comparison")
    _add_common(p)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("sample", help="Monte-Carlo check of the exponential-race sampler")
    _add_common(p)
    p.add_argument("--scores", default="1.0,-1.0,0.5,2.0")
    p.add_argument("--mc-samples", type=int, default=verify.MC_NOMINAL)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sqlrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, FileNotFoundError, ValueError) as exc:
        print(f"sqlrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
