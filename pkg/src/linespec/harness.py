"""Experiment orchestration shared by the command-line entry points.

Everything here is deterministic given a base seed: each dataset draws its
seed from ``derive_seed(base, *labels)`` so that adding a regime or a split
never perturbs the others.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from multiprocessing.pool import ThreadPool

import numpy as np

from .errors import ConfigError
from .estimators import MusicConfig, PeriodogramConfig, music_batch, periodogram_batch
from .metrics import score
from .pseudospec import extract_peaks
from .psnet import (
    ArchConfig,
    Psnet,
    TrainConfig,
    evaluate_mse,
    to_input,
    train,
    training_arrays,
)
from .sigmodel import GenConfig, NoiseSpec, generate_dataset

METHODS = ("periodogram", "music", "psnet")
REGIMES = ("1", "100", "10000", "blind")

REPORT_HEADER = ["method", "snr_regime", "fn_rate_mean", "md_mean", "md_mean_per_match",
                 "signals_evaluated"]
SIGNAL_HEADER = ["method", "snr_regime", "index", "m", "fn_rate", "md", "counted_matches"]
LOSS_HEADER = ["epoch", "train_mse", "val_mse"]
DEPTH_HEADER = ["depth", "val_mse", "val_fn_rate", "val_md", "best_epoch", "epochs"]
SPARSE_HEADER = ["method", "cardinality", "m", "fn_rate_mean", "md_mean", "signals_evaluated"]


def derive_seed(base, *labels):
    """A 64-bit seed determined by ``base`` and a tuple of labels."""
    keys = [int(base)] + [int.from_bytes(str(x).encode(), "little") % 2**32 for x in labels]
    return int(np.random.SeedSequence(keys).generate_state(1, np.uint64)[0])


def regime_noise(name):
    """Noise model for a regime label: an SNR value or ``blind``."""
    name = str(name)
    if name == "blind":
        return NoiseSpec.blind(1.0, 100.0)
    if name in ("none", "inf"):
        return NoiseSpec()
    try:
        snr = float(name)
    except ValueError:
        raise ConfigError(f"unknown noise regime {name!r}") from None
    return NoiseSpec.gaussian(snr)


@dataclass(frozen=True)
class EvalConfig:
    methods: tuple = ("periodogram", "music", "psnet")
    regimes: tuple = REGIMES
    test_count: int = 10_000
    train_count: int = 20_000
    val_count: int = 2_000
    g: int = 1000
    window: str = "hann"
    L: int = 20
    forward_backward: bool = True
    m_known: bool = True
    depths: tuple = (2, 4, 6, 8)
    sparse_cardinalities: tuple = tuple(range(1, 11))
    sparse_std: float = 0.5
    sparse_methods: tuple = ("psnet",)
    model: str | None = None

    def __post_init__(self):
        for name in ("methods", "regimes", "depths", "sparse_cardinalities", "sparse_methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = set(self.methods + self.sparse_methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if not self.m_known:
            raise ConfigError("only the known-m protocol is supported")
        if min(self.test_count, self.train_count, self.val_count) < 0:
            raise ConfigError("counts must be nonnegative")
        for r in self.regimes:
            regime_noise(r)

    @property
    def periodogram(self):
        return PeriodogramConfig(window=self.window, g=self.g)

    @property
    def music(self):
        return MusicConfig(L=self.L, g=self.g, forward_backward=self.forward_backward)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown eval fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class RunConfig:
    """The four sections of a run configuration file."""

    generate: GenConfig = field(default_factory=GenConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    splits: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"generate", "arch", "train", "eval"}
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        gen = dict(d.get("generate", {}))
        splits = gen.pop("splits", {})
        if not isinstance(splits, dict) or any(int(v) < 0 for v in splits.values()):
            raise ConfigError("generate.splits must map names to nonnegative counts")
        return cls(GenConfig.from_dict(gen), ArchConfig.from_dict(d.get("arch", {})),
                   TrainConfig.from_dict(d.get("train", {})),
                   EvalConfig.from_dict(d.get("eval", {})),
                   {str(k): int(v) for k, v in splits.items()})

    def with_seed(self, seed):
        if seed is None:
            return self
        return replace(self, generate=self.generate.with_(seed=seed),
                       train=replace(self.train, seed=seed))


# ---------------------------------------------------------------- estimation

@dataclass
class SignalScores:
    fn: np.ndarray
    md: np.ndarray
    matches: np.ndarray
    m: np.ndarray

    def __len__(self):
        return len(self.fn)

    def summary(self):
        total = int(self.matches.sum())
        per_match = float(np.dot(self.md, self.matches) / total) if total else 0.0
        return {"fn_rate_mean": float(np.mean(self.fn)) if len(self) else math.nan,
                "md_mean": float(np.mean(self.md)) if len(self) else math.nan,
                "md_mean_per_match": per_match, "signals_evaluated": len(self)}


def _chunks(count, threads):
    k = max(1, min(int(threads), count))
    edges = np.linspace(0, count, k + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map(fn, count, threads):
    parts = _chunks(count, threads)
    if len(parts) <= 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPool(len(parts)) as pool:
        return pool.starmap(fn, parts)


def pseudospectra(method, samples, ms, cfg, model=None, threads=1):
    """Pseudo-spectra ``(B, g)`` from one estimator."""
    samples = np.asarray(samples)
    if method == "periodogram":
        fn = lambda a, b: periodogram_batch(samples[a:b], cfg.periodogram)
    elif method == "music":
        fn = lambda a, b: music_batch(samples[a:b], ms[a:b], cfg.music)
    elif method == "psnet":
        if model is None:
            raise ConfigError("psnet evaluation needs a model")
        if model.arch.g != cfg.g:
            raise ConfigError(f"model grid g={model.arch.g} differs from evaluation g={cfg.g}")
        fn = lambda a, b: model.predict(to_input(samples[a:b]))
    else:
        raise ConfigError(f"unknown method {method!r}")
    if len(samples) == 0:
        return np.empty((0, cfg.g))
    return np.concatenate(_map(fn, len(samples), threads))


def score_spectra(dataset, spectra, threads=1):
    n = dataset.config.n
    spectra_list = dataset.spectra

    def fn(a, b):
        out = []
        for spec, p in zip(spectra_list[a:b], spectra[a:b]):
            s = score(spec.freqs, extract_peaks(p, spec.m), n)
            out.append((s.fn_rate, s.md, s.counted_matches))
        return out

    rows = [r for part in _map(fn, len(dataset), threads) for r in part]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return SignalScores(arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64),
                        np.asarray(dataset.m_values, dtype=np.int64))


def evaluate(method, dataset, cfg, model=None, threads=1):
    P = pseudospectra(method, dataset.samples, dataset.m_values, cfg, model, threads)
    return score_spectra(dataset, P, threads)


# ------------------------------------------------------------------ training

def datasets_for(gen, eval_cfg, noise, seed, label, threads=1):
    """Train, validation and test sets for one noise model."""
    out = {}
    for split, count in (("train", eval_cfg.train_count), ("val", eval_cfg.val_count),
                         ("test", eval_cfg.test_count)):
        cfg = gen.with_(noise=noise, count=count, seed=derive_seed(seed, label, split))
        out[split] = generate_dataset(cfg, threads=threads)
    return out


def fit(arch, train_cfg, train_sets, val_sets, g, on_epoch=None, resume=None):
    """Train a fresh model on the concatenation of ``train_sets``."""
    dtype = np.dtype(train_cfg.dtype)
    tr = [training_arrays(d, g, train_cfg.half_width, dtype) for d in train_sets]
    va = [training_arrays(d, g, train_cfg.half_width, dtype) for d in val_sets]
    Xtr, Ttr = np.concatenate([x for x, _ in tr]), np.concatenate([t for _, t in tr])
    Xva, Tva = np.concatenate([x for x, _ in va]), np.concatenate([t for _, t in va])
    model = None if resume is not None else Psnet.build(arch, seed=train_cfg.seed, dtype=dtype)
    return train(model, train_cfg, (Xtr, Ttr), (Xva, Tva), resume=resume, on_epoch=on_epoch)


def check_arch(run):
    if run.arch.n != run.generate.n:
        raise ConfigError(f"arch.n={run.arch.n} differs from generate.n={run.generate.n}")
    if run.arch.g != run.eval.g:
        raise ConfigError(f"arch.g={run.arch.g} differs from eval.g={run.eval.g}")


def compare(run, seed, threads=1, on_epoch=None):
    """Every configured method on every configured regime.

    Returns ``(report_rows, signal_rows, curves)`` where ``curves`` maps a
    regime to the loss curve of the model trained for it.
    """
    cfg = run.eval
    if "psnet" in cfg.methods:
        check_arch(run)
    report, signals, curves = [], [], {}
    for regime in cfg.regimes:
        sets = datasets_for(run.generate, cfg, regime_noise(regime), seed, regime, threads)
        model = None
        if "psnet" in cfg.methods:
            cb = (lambda s, *a, r=regime: on_epoch(r, s)) if on_epoch else None
            res = fit(run.arch, run.train, [sets["train"]], [sets["val"]], cfg.g, cb)
            model, curves[regime] = res.model, res.curve
        for method in cfg.methods:
            sc = evaluate(method, sets["test"], cfg, model, threads)
            report.append(report_row(method, regime, sc))
            signals.extend(signal_rows(method, regime, sc))
    return report, signals, curves


def sparse_sweep(run, seed, threads=1, on_epoch=None):
    """FN and MD over the (outlier cardinality, m) grid.

    One network is trained on equal shares of every cardinality; each
    cardinality then gets its own test set of ``eval.test_count`` signals.
    """
    cfg = run.eval
    if "psnet" in cfg.sparse_methods:
        check_arch(run)
    cards = cfg.sparse_cardinalities
    share = replace(cfg, train_count=cfg.train_count // len(cards),
                    val_count=max(2, cfg.val_count // len(cards)))
    per_card = {c: datasets_for(run.generate, share, NoiseSpec.sparse(c, cfg.sparse_std),
                                seed, f"sparse{c}", threads) for c in cards}
    model, curve = None, []
    if "psnet" in cfg.sparse_methods:
        cb = (lambda s, *a: on_epoch("sparse", s)) if on_epoch else None
        res = fit(run.arch, run.train, [per_card[c]["train"] for c in cards],
                  [per_card[c]["val"] for c in cards], cfg.g, cb)
        model, curve = res.model, res.curve
    rows = []
    for method in cfg.sparse_methods:
        for c in cards:
            sc = evaluate(method, per_card[c]["test"], cfg, model, threads)
            for m in range(run.generate.m_min, run.generate.m_max + 1):
                sel = sc.m == m
                rows.append({"method": method, "cardinality": c, "m": m,
                             "fn_rate_mean": float(np.mean(sc.fn[sel])) if sel.any() else math.nan,
                             "md_mean": float(np.mean(sc.md[sel])) if sel.any() else math.nan,
                             "signals_evaluated": int(sel.sum())})
    return rows, curve


def sweep_depth(run, seed, threads=1, on_epoch=None):
    """Validation error of separately trained networks of each depth."""
    check_arch(run)
    cfg = run.eval
    sets = datasets_for(run.generate, replace(cfg, test_count=0), run.generate.noise,
                        seed, "depth", threads)
    rows = []
    for depth in cfg.depths:
        arch = replace(run.arch, depth=int(depth))
        cb = (lambda s, *a, d=depth: on_epoch(f"depth{d}", s)) if on_epoch else None
        res = fit(arch, run.train, [sets["train"]], [sets["val"]], cfg.g, cb)
        Xva, Tva = training_arrays(sets["val"], cfg.g, run.train.half_width,
                                   np.dtype(run.train.dtype))
        sc = evaluate("psnet", sets["val"], cfg, res.model, threads)
        rows.append({"depth": int(depth), "val_mse": evaluate_mse(res.model, Xva, Tva),
                     "val_fn_rate": float(np.mean(sc.fn)), "val_md": float(np.mean(sc.md)),
                     "best_epoch": res.best_epoch, "epochs": len(res.curve)})
    return rows


# ------------------------------------------------------------------- reports

def report_row(method, regime, scores):
    return {"method": method, "snr_regime": str(regime), **scores.summary()}


def signal_rows(method, regime, scores):
    return [{"method": method, "snr_regime": str(regime), "index": i, "m": int(m),
             "fn_rate": float(f), "md": float(d), "counted_matches": int(c)}
            for i, (m, f, d, c) in enumerate(zip(scores.m, scores.fn, scores.md, scores.matches))]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def curve_rows(curve):
    return [{"epoch": s.epoch, "train_mse": s.train_mse, "val_mse": s.val_mse} for s in curve]
