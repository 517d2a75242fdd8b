"""Random line spectra, noiseless synthesis, noise models and datasets.

A signal is ``S(t) = sum_j a_j exp(i 2 pi f_j t)`` with frequencies on the
unit circle ``[0, 1)``; measurements are ``y_k = S(k) + z_k`` for
``k = 1..n``.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, FormatError, SamplingError

NOISE_KINDS = ("none", "gaussian", "blind", "sparse")

DATASET_MAGIC = b"LSPEC1"
DATASET_VERSION = 1


def wrap_unit(x):
    """Reduce to ``[0, 1)``; guards the ``mod`` result rounding up to 1."""
    r = np.mod(x, 1.0)
    return np.where(r >= 1.0, 0.0, r)


def circular_distance(a, b):
    d = np.abs(np.mod(np.subtract(a, b), 1.0))
    return np.minimum(d, 1.0 - d)


def min_separation(freqs):
    """Smallest wrap-around distance between two frequencies (inf for m < 2)."""
    f = np.asarray(freqs, dtype=np.float64).reshape(1, -1)
    return float(_min_separation_rows(f)[0])


_CANDIDATE_BLOCK = 32


def _min_separation_rows(freqs):
    f = np.sort(freqs, axis=1)
    if f.shape[1] < 2:
        return np.full(f.shape[0], math.inf)
    gaps = np.concatenate((np.diff(f, axis=1), 1.0 - f[:, -1:] + f[:, :1]), axis=1)
    return np.min(np.minimum(gaps, 1.0 - gaps), axis=1)


@dataclass(frozen=True, eq=False)
class LineSpectrum:
    freqs: np.ndarray
    amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=np.float64))
        object.__setattr__(self, "amps", np.asarray(self.amps, dtype=np.complex128))
        if self.freqs.shape != self.amps.shape or self.freqs.ndim != 1:
            raise ValueError("freqs and amps must be 1-D arrays of equal length")

    @property
    def m(self):
        return self.freqs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LineSpectrum):
            return NotImplemented
        return np.array_equal(self.freqs, other.freqs) and np.array_equal(self.amps, other.amps)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model.

    ``kind`` is one of ``none``, ``gaussian`` (fixed ``snr``), ``blind``
    (square root of the SNR drawn uniformly in ``[sqrt_snr_low,
    sqrt_snr_high]`` per signal) or ``sparse`` (``cardinality`` corrupted
    samples with complex standard deviation ``std`` after the clean signal is
    normalized to unit energy).
    """

    kind: str = "none"
    snr: float | None = None
    sqrt_snr_low: float | None = None
    sqrt_snr_high: float | None = None
    cardinality: int | None = None
    std: float | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.snr is not None and self.snr > 0):
            raise ConfigError("gaussian noise needs snr > 0")
        if self.kind == "blind":
            lo, hi = self.sqrt_snr_low, self.sqrt_snr_high
            if lo is None or hi is None or not 0 < lo <= hi:
                raise ConfigError("blind noise needs 0 < sqrt_snr_low <= sqrt_snr_high")
        if self.kind == "sparse":
            if self.cardinality is None or self.cardinality < 1:
                raise ConfigError("sparse noise needs cardinality >= 1")
            if self.std is None or not self.std > 0:
                raise ConfigError("sparse noise needs std > 0")

    @classmethod
    def gaussian(cls, snr):
        return cls("gaussian", snr=float(snr))

    @classmethod
    def blind(cls, sqrt_snr_low=1.0, sqrt_snr_high=100.0):
        return cls("blind", sqrt_snr_low=float(sqrt_snr_low), sqrt_snr_high=float(sqrt_snr_high))

    @classmethod
    def sparse(cls, cardinality, std=0.5):
        return cls("sparse", cardinality=int(cardinality), std=float(std))

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown noise fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class GenConfig:
    """Generator settings. ``delta_min`` and ``jitter_std`` default to
    ``1/n`` and ``2.5/n``."""

    n: int = 50
    m_min: int = 1
    m_max: int = 10
    delta_min: float | None = None
    jitter_std: float | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    count: int = 0
    max_retries: int = 1000

    def __post_init__(self):
        if self.delta_min is None:
            object.__setattr__(self, "delta_min", 1.0 / self.n)
        if self.jitter_std is None:
            object.__setattr__(self, "jitter_std", 2.5 / self.n)
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSpec.from_dict(self.noise))
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not 1 <= self.m_min <= self.m_max:
            raise ConfigError("need 1 <= m_min <= m_max")
        # small slack so delta_min written as k/n in decimal is accepted
        if self.delta_min < (1.0 - 1e-9) / self.n:
            raise ConfigError("delta_min must be >= 1/n")
        if self.m_max * self.delta_min >= 1.0:
            raise ConfigError("m_max * delta_min must be < 1")
        if self.jitter_std < 0:
            raise ConfigError("jitter_std must be >= 0")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.noise.kind == "sparse" and self.noise.cardinality > self.n:
            raise ConfigError("sparse cardinality exceeds n")

    def to_dict(self):
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown generator fields: {sorted(extra)}")
        if "noise" in d:
            d["noise"] = NoiseSpec.from_dict(d["noise"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_(self, **changes):
        return replace(self, **changes)


def sample_line_spectrum(config, rng):
    """Draw one ground-truth spectrum.

    Frequencies follow a jittered chain: ``f_1 ~ U[0,1)`` and successive gaps
    ``(sign(u) * delta_min + u) mod 1`` with ``u ~ N(0, jitter_std^2)``. A
    chain that violates the wrap-around separation is redrawn whole.
    """
    m = int(rng.integers(config.m_min, config.m_max + 1))
    dmin = config.delta_min
    tried = 0
    while tried < config.max_retries:
        # candidates are drawn in blocks; the budget counts candidates
        nb = min(_CANDIDATE_BLOCK, config.max_retries - tried)
        tried += nb
        f1 = rng.uniform(size=(nb, 1))
        u = rng.normal(0.0, config.jitter_std, (nb, m - 1))
        gaps = np.mod(np.where(u >= 0, dmin, -dmin) + u, 1.0)
        cand = wrap_unit(f1 + np.concatenate((np.zeros((nb, 1)), np.cumsum(gaps, axis=1)), axis=1))
        ok = np.flatnonzero(_min_separation_rows(cand) >= dmin)
        if ok.size:
            freqs = cand[ok[0]]
            break
    else:
        raise SamplingError(
            f"no frequency set with separation {dmin} after {config.max_retries} tries (m={m})"
        )
    freqs.sort()
    w = rng.standard_normal(m)
    theta = rng.uniform(0.0, 2 * np.pi, m)
    amps = (0.1 + np.abs(w)) * np.exp(1j * theta)
    return LineSpectrum(freqs, amps)


def synthesize(spec, n):
    """Noiseless samples ``S(k)`` for ``k = 1..n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(1, n + 1)
    return np.exp(2j * np.pi * np.outer(k, spec.freqs)) @ spec.amps


def _corrupt(clean, noise, rng):
    # returns the noisy vector and the gain applied to the clean part
    clean = np.asarray(clean, dtype=np.complex128)
    n = clean.shape[0]
    if noise.kind == "none":
        return clean.copy(), 1.0
    energy = float(np.sum(np.abs(clean) ** 2))
    if energy == 0.0:
        raise ConfigError(f"{noise.kind} noise is relative to signal energy; clean signal is zero")
    if noise.kind == "sparse":
        norm = np.linalg.norm(clean)
        out = clean / norm
        gain = 1.0 / norm
        support = rng.choice(n, size=noise.cardinality, replace=False)
        scale = noise.std / math.sqrt(2.0)
        out[support] += scale * (rng.standard_normal(noise.cardinality)
                                 + 1j * rng.standard_normal(noise.cardinality))
        return out, gain
    if noise.kind == "gaussian":
        snr = noise.snr
    else:
        snr = rng.uniform(noise.sqrt_snr_low, noise.sqrt_snr_high) ** 2
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    z *= math.sqrt(energy / (snr * float(np.sum(np.abs(z) ** 2))))
    return clean + z, 1.0


def apply_noise(clean, noise, rng):
    """Add noise to a clean sample vector according to ``noise``.

    Gaussian kinds rescale the drawn noise so the realized energy ratio
    equals the target SNR exactly. The sparse kind returns the unit-energy
    clean signal plus corruption on a random support.
    """
    return _corrupt(clean, noise, rng)[0]


def realized_snr(spec, samples):
    clean = synthesize(spec, samples.shape[0])
    return float(np.sum(np.abs(clean) ** 2) / np.sum(np.abs(samples - clean) ** 2))


@dataclass(frozen=True, eq=False)
class Dataset:
    config: GenConfig
    spectra: tuple
    samples: np.ndarray

    def __len__(self):
        return len(self.spectra)

    @property
    def records(self):
        return list(zip(self.spectra, self.samples))

    @property
    def m_values(self):
        return np.array([s.m for s in self.spectra], dtype=np.int64)

    @property
    def freq_lists(self):
        return [s.freqs for s in self.spectra]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.config == other.config and np.array_equal(self.samples, other.samples)
                and all(a == b for a, b in zip(self.spectra, other.spectra))
                and len(self) == len(other))


def record_rng(seed, index):
    """Independent stream for record ``index``; identical under any parallel split."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_record(config, index):
    rng = record_rng(config.seed, index)
    spec = sample_line_spectrum(config, rng)
    y, gain = _corrupt(synthesize(spec, config.n), config.noise, rng)
    if gain != 1.0:
        spec = LineSpectrum(spec.freqs, spec.amps * gain)
    return spec, y


def generate_dataset(config, threads=1):
    def run(chunk):
        return [generate_record(config, i) for i in chunk]

    indices = range(config.count)
    if threads > 1 and config.count > 1:
        chunks = [indices[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
        out = [None] * config.count
        for t, part in enumerate(parts):
            out[t::threads] = part
    else:
        out = run(indices)
    samples = np.array([y for _, y in out], dtype=np.complex128).reshape(config.count, config.n)
    return Dataset(config, tuple(s for s, _ in out), samples)


def save_dataset(path, ds):
    header = json.dumps({"config": ds.config.to_dict()}, sort_keys=True).encode()
    parts = []
    for spec, y in ds.records:
        a = np.empty(2 * spec.m)
        a[0::2], a[1::2] = spec.amps.real, spec.amps.imag
        yy = np.empty(2 * y.shape[0])
        yy[0::2], yy[1::2] = y.real, y.imag
        parts.append(np.concatenate(([spec.m], spec.freqs, a, yy)))
    body = np.concatenate(parts).astype("<f8").tobytes() if parts else b""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC + bytes([DATASET_VERSION]) + struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(body)


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    if len(raw) < 11:
        raise FormatError(f"{path}: truncated header")
    if raw[6] != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {raw[6]}")
    (hlen,) = struct.unpack("<I", raw[7:11])
    if len(raw) < 11 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        config = GenConfig.from_dict(json.loads(raw[11:11 + hlen])["config"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    body = raw[11 + hlen:]
    if len(body) % 8:
        raise FormatError(f"{path}: truncated body")
    data = np.frombuffer(body, dtype="<f8")
    n = config.n
    spectra, samples, pos = [], [], 0
    for _ in range(config.count):
        if pos >= data.size:
            raise FormatError(f"{path}: truncated body")
        m = int(data[pos])
        end = pos + 1 + 3 * m + 2 * n
        if m < 1 or end > data.size:
            raise FormatError(f"{path}: truncated or corrupt record")
        rec = data[pos + 1:end]
        amps = rec[m:3 * m:2] + 1j * rec[m + 1:3 * m:2]
        spectra.append(LineSpectrum(rec[:m].copy(), amps))
        samples.append(rec[3 * m::2] + 1j * rec[3 * m + 1::2])
        pos = end
    if pos != data.size:
        raise FormatError(f"{path}: trailing data after {config.count} records")
    arr = np.array(samples, dtype=np.complex128).reshape(config.count, n)
    return Dataset(config, tuple(spectra), arr)
