"""Command-line entry point: ``linespec generate|train|eval|compare|sweep-depth``.

Every subcommand reads one JSON run file with optional sections

  generate  signal-model fields (n=50, m_min=1, m_max=10, delta_min=1/n,
            jitter_std=2.5/n, noise={"kind": "none"}, seed=0, count=0,
            max_retries=1000) plus ``splits``, a map from file name to
            record count used by ``generate``
  arch      network shape (n=50, g=1000, depth=20, channels=8, hidden=100,
            filter_size=3, relu_head=false, normalize_input=true,
            bn_eps=1e-5, bn_momentum=0.1)
  train     optimizer (batch_size=64, epochs=50, learning_rate=3e-4,
            final_learning_rate=null, beta1=0.9, beta2=0.999, eps=1e-8,
            seed=0, dtype="float32", half_width=1/n)
  eval      protocol (methods, regimes=["1","100","10000","blind"],
            test_count=10000, train_count=20000, val_count=2000, g=1000,
            window="hann", L=20, forward_backward=true,
            depths=[2,4,6,8], sparse_cardinalities=1..10, sparse_std=0.5,
            sparse_methods=["psnet"], model=null)

and writes its outputs under ``--out``. ``--seed`` overrides the generator
and training seeds. Exit status: 0 success, 1 configuration error,
2 numerical failure, 3 file error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .errors import ConfigError, FormatError, NumericError
from .psnet import load_checkpoint, load_model, save_checkpoint, save_model
from .sigmodel import generate_dataset, load_dataset, save_dataset


def load_run(path, seed=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    try:
        run = harness.RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return run.with_seed(seed)


def _log(quiet):
    if quiet:
        return None

    def cb(label, stats):
        print(f"[{label}] epoch {stats.epoch} train_mse {stats.train_mse:.6g} "
              f"val_mse {stats.val_mse:.6g}", file=sys.stderr, flush=True)
    return cb


def cmd_generate(args, run, out):
    splits = run.splits or {"data": run.generate.count}
    written = []
    for name, count in splits.items():
        cfg = run.generate.with_(count=count)
        if len(splits) > 1:
            cfg = cfg.with_(seed=harness.derive_seed(run.generate.seed, name))
        path = out / f"{name}.lspec"
        save_dataset(path, generate_dataset(cfg, threads=args.threads))
        written.append(path)
    for p in written:
        print(p)


def cmd_train(args, run, out):
    harness.check_arch(run)
    seed = run.generate.seed
    if args.train_set:
        train_sets = [load_dataset(args.train_set)]
        val_sets = [load_dataset(args.val_set or args.train_set)]
    else:
        sets = harness.datasets_for(run.generate, replace(run.eval, test_count=0),
                                    run.generate.noise, seed, "train", args.threads)
        train_sets, val_sets = [sets["train"]], [sets["val"]]
    if train_sets[0].config.n != run.arch.n:
        raise ConfigError(f"dataset n={train_sets[0].config.n} differs from arch.n={run.arch.n}")
    log = _log(args.quiet)
    ckpt_path = out / "checkpoint.psnet"

    def on_epoch(stats, model, adam, ckpt):
        save_checkpoint(ckpt_path, ckpt)
        if log:
            log("train", stats)

    resume = load_checkpoint(args.resume) if args.resume else None
    res = harness.fit(run.arch, run.train, train_sets, val_sets, run.eval.g, on_epoch, resume)
    save_model(out / "model.psnet", res.model)
    harness.write_csv(out / "loss.csv", harness.LOSS_HEADER, harness.curve_rows(res.curve))
    print(out / "model.psnet")


def cmd_eval(args, run, out):
    if not args.m_known:
        raise ConfigError("only the known-m protocol is supported")
    cfg = run.eval
    if args.test_set:
        test = load_dataset(args.test_set)
    else:
        test = generate_dataset(run.generate.with_(count=cfg.test_count), threads=args.threads)
    model = None
    model_path = args.model or cfg.model
    if "psnet" in cfg.methods:
        if not model_path:
            raise ConfigError("psnet evaluation needs --model or eval.model")
        model = load_model(model_path, g=cfg.g)
        if model.arch.n != test.config.n:
            raise ConfigError(f"model expects n={model.arch.n}, test set has n={test.config.n}")
    regime = args.regime or test.config.noise.kind
    report, signals = [], []
    spectra = {}
    for method in cfg.methods:
        P = harness.pseudospectra(method, test.samples, test.m_values, cfg, model, args.threads)
        sc = harness.score_spectra(test, P, args.threads)
        report.append(harness.report_row(method, regime, sc))
        signals.extend(harness.signal_rows(method, regime, sc))
        spectra[method] = P
    harness.write_csv(out / "report.csv", harness.REPORT_HEADER, report)
    harness.write_csv(out / "per_signal.csv", harness.SIGNAL_HEADER, signals)
    if args.dump_spectra:
        k = min(args.dump_spectra, len(test))
        rows = [{"method": meth, "index": i, "bin": b, "value": float(P[i, b])}
                for meth, P in spectra.items() for i in range(k) for b in range(cfg.g)]
        harness.write_csv(out / "pseudospectra.csv", ["method", "index", "bin", "value"], rows)
    _print_report(report)


def cmd_compare(args, run, out):
    seed = run.generate.seed
    log = _log(args.quiet)
    report, signals, curves = harness.compare(run, seed, args.threads, log)
    harness.write_csv(out / "report.csv", harness.REPORT_HEADER, report)
    harness.write_csv(out / "per_signal.csv", harness.SIGNAL_HEADER, signals)
    for regime, curve in curves.items():
        harness.write_csv(out / f"loss_{regime}.csv", harness.LOSS_HEADER,
                          harness.curve_rows(curve))
    if args.sparse:
        rows, curve = harness.sparse_sweep(run, seed, args.threads, log)
        harness.write_csv(out / "sparse_grid.csv", harness.SPARSE_HEADER, rows)
        if curve:
            harness.write_csv(out / "loss_sparse.csv", harness.LOSS_HEADER,
                              harness.curve_rows(curve))
    _print_report(report)


def cmd_sweep_depth(args, run, out):
    rows = harness.sweep_depth(run, run.generate.seed, args.threads, _log(args.quiet))
    harness.write_csv(out / "depth_sweep.csv", harness.DEPTH_HEADER, rows)
    for r in rows:
        print(f"depth {r['depth']:3d}  val_mse {r['val_mse']:.5f}  "
              f"fn {r['val_fn_rate']:.4f}  md {r['val_md']:.4f}")


def _print_report(rows):
    for r in rows:
        print(f"{r['method']:12s} {r['snr_regime']:>8s}  FN {100 * r['fn_rate_mean']:6.2f}%  "
              f"MD {r['md_mean']:.4f}  ({r['signals_evaluated']} signals)")


def build_parser():
    p = argparse.ArgumentParser(prog="linespec", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run file")
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=None,
                        help="unsigned 64-bit seed overriding generate.seed and train.seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for generation and evaluation (default 1)")
    common.add_argument("--quiet", action="store_true", help="suppress per-epoch progress")

    sub.add_parser("generate", parents=[common], help="write LSPEC1 dataset files")
    t = sub.add_parser("train", parents=[common], help="train a PSnet")
    t.add_argument("--train-set", help="LSPEC1 training file (generated when omitted)")
    t.add_argument("--val-set", help="LSPEC1 validation file")
    t.add_argument("--resume", help="checkpoint to continue from")
    e = sub.add_parser("eval", parents=[common], help="score methods on a test set")
    e.add_argument("--model", help="PSNET1 model file")
    e.add_argument("--test-set", help="LSPEC1 test file (generated when omitted)")
    e.add_argument("--regime", help="label for the snr_regime column")
    e.add_argument("--m-known", action=argparse.BooleanOptionalAction, default=True,
                   help="give each estimator the true number of lines (default)")
    e.add_argument("--dump-spectra", type=int, default=0, metavar="K",
                   help="also write the pseudo-spectra of the first K signals")
    c = sub.add_parser("compare", parents=[common],
                       help="train and score every method in every regime")
    c.add_argument("--sparse", action="store_true",
                   help="also run the outlier-cardinality sweep")
    sub.add_parser("sweep-depth", parents=[common], help="validation error against depth")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "compare": cmd_compare, "sweep-depth": cmd_sweep_depth}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        run = load_run(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, run, out)
    except ConfigError as exc:
        print(f"linespec: config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"linespec: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"linespec: file error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
