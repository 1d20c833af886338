"""Synthetic labelled IQ frames: modulation, channel impairments, dataset files.

The dataset file ("AMRD") is little-endian::

    b"AMRD" | format_version u32 | frame count u64 | L u32 | k u32
    per frame: frame_id u64 | mod_label u16 | snr_db f32 | L x f32 (I) | L x f32 (Q)

``mod_label`` indexes ``DatasetManifest.schemes``; the manifest is written as a
JSON sidecar next to the data file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, FormatError, InvalidArgumentError, UnsupportedSchemeError, WriteError

MAGIC = b"AMRD"
FORMAT_VERSION = 1
DEFAULT_SAMPLE_RATE = 200e3

LINEAR_SCHEMES = ("BPSK", "QPSK", "8PSK", "PAM4", "QAM16", "QAM64")
FM_SCHEMES = ("GFSK", "CPFSK")
ANALOG_SCHEMES = ("AM-DSB", "AM-SSB", "WBFM")
MANDATORY_SCHEMES = LINEAR_SCHEMES + FM_SCHEMES
ALL_SCHEMES = MANDATORY_SCHEMES + ANALOG_SCHEMES

_ALIASES = {"16QAM": "QAM16", "64QAM": "QAM64", "4PAM": "PAM4", "PSK8": "8PSK",
            "AMDSB": "AM-DSB", "AMSSB": "AM-SSB", "FM": "WBFM"}

RRC_ROLLOFF = 0.35
RRC_SPAN = 6
GFSK_BT = 0.35
FSK_MOD_INDEX = 0.5
WBFM_DEVIATION_HZ = 20e3


def canonical_scheme(scheme: str) -> str:
    key = str(scheme).upper().replace("_", "-")
    key = _ALIASES.get(key.replace("-", ""), _ALIASES.get(key, key))
    if key not in ALL_SCHEMES:
        raise UnsupportedSchemeError(f"unsupported modulation scheme {scheme!r}")
    return key


# ---------------------------------------------------------------------------
# frames and configs


@dataclass
class IqFrame:
    i_samples: np.ndarray
    q_samples: np.ndarray
    sample_rate: float
    samples_per_symbol: int
    mod_label: str
    snr_db: float | None = None
    frame_id: int = 0

    def __post_init__(self):
        self.i_samples = np.asarray(self.i_samples, dtype=np.float64)
        self.q_samples = np.asarray(self.q_samples, dtype=np.float64)
        if self.i_samples.shape != self.q_samples.shape or self.i_samples.ndim != 1:
            raise InvalidArgumentError(
                f"I and Q must be 1-d with equal length, got {self.i_samples.shape} and "
                f"{self.q_samples.shape}")
        if self.samples_per_symbol < 1:
            raise InvalidArgumentError("samples_per_symbol must be positive")
        if len(self.i_samples) < 2 * self.samples_per_symbol:
            raise InvalidArgumentError(
                f"frame length {len(self.i_samples)} is shorter than two symbols "
                f"({2 * self.samples_per_symbol} samples)")

    @classmethod
    def from_complex(cls, x: np.ndarray, **meta) -> "IqFrame":
        return cls(np.real(x), np.imag(x), **meta)

    @property
    def length(self) -> int:
        return len(self.i_samples)

    @property
    def iq(self) -> np.ndarray:
        return self.i_samples + 1j * self.q_samples

    def mean_power(self) -> float:
        return float(np.mean(self.i_samples**2 + self.q_samples**2))


@dataclass
class ChannelConfig:
    """Channel impairments applied by :func:`apply_channel`.

    ``cfo_hz`` pins the carrier offset instead of drawing it uniformly from
    ``[-cfo_max_hz, cfo_max_hz]``.
    """

    snr_db: float
    cfo_max_hz: float = 500.0
    sro_std_hz: float = 0.01
    sro_max_hz: float = 50.0
    fading: str = "none"
    k_factor: float = 3.0
    rng_seed: int = 0
    cfo_hz: float | None = None

    def __post_init__(self):
        if not -20.0 <= self.snr_db <= 18.0:
            raise ConfigError(f"snr_db must lie in [-20, 18], got {self.snr_db}")
        if self.cfo_max_hz < 0:
            raise ConfigError("cfo_max_hz must be non-negative")
        if not self.sro_max_hz >= self.sro_std_hz >= 0:
            raise ConfigError("require sro_max_hz >= sro_std_hz >= 0")
        if self.fading not in ("none", "rayleigh", "rician"):
            raise ConfigError(f"fading must be none, rayleigh or rician, got {self.fading!r}")
        if self.fading == "rician" and self.k_factor < 0:
            raise ConfigError("rician k_factor must be non-negative")


@dataclass
class ChannelRealization:
    gain: complex
    cfo_hz: float
    sro_hz: float
    clean: np.ndarray
    noise: np.ndarray
    noise_variance: float

    def measured_snr_db(self) -> float:
        return float(10 * np.log10(np.mean(np.abs(self.clean) ** 2) /
                                   np.mean(np.abs(self.noise) ** 2)))


@dataclass
class DatasetManifest:
    schemes: list[str]
    snr_grid_db: list[float]
    frames_per_cell: int
    frame_length: int = 128
    samples_per_symbol: int = 8
    seed: int = 0
    format_version: int = FORMAT_VERSION
    sample_rate: float = DEFAULT_SAMPLE_RATE
    cfo_max_hz: float = 500.0
    sro_std_hz: float = 0.01
    sro_max_hz: float = 50.0
    fading: str = "none"
    k_factor: float = 3.0

    def __post_init__(self):
        self.schemes = [canonical_scheme(s) for s in self.schemes]
        self.snr_grid_db = [float(s) for s in self.snr_grid_db]
        if not self.schemes:
            raise ConfigError("manifest lists no schemes")
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("manifest schemes must be unique")
        if any(b <= a for a, b in zip(self.snr_grid_db, self.snr_grid_db[1:])):
            raise ConfigError("snr_grid_db must be strictly increasing")
        if self.frames_per_cell <= 0:
            raise ConfigError("frames_per_cell must be positive")
        if self.frame_length % self.samples_per_symbol:
            raise ConfigError("frame_length must be a multiple of samples_per_symbol")
        if self.frame_length < 2 * self.samples_per_symbol:
            raise ConfigError("frame_length must cover at least two symbols")
        # Validates the shared impairment fields.
        self.channel_config(self.snr_grid_db[0], 0)

    @property
    def frame_count(self) -> int:
        return len(self.schemes) * len(self.snr_grid_db) * self.frames_per_cell

    def estimated_bytes(self) -> int:
        return _HEADER.size + self.frame_count * (14 + 8 * self.frame_length)

    def channel_config(self, snr_db: float, rng_seed: int) -> ChannelConfig:
        return ChannelConfig(snr_db=snr_db, cfo_max_hz=self.cfo_max_hz,
                             sro_std_hz=self.sro_std_hz, sro_max_hz=self.sro_max_hz,
                             fading=self.fading, k_factor=self.k_factor, rng_seed=rng_seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls.from_dict(json.loads(text))

    @classmethod
    def radioml_scale(cls, seed: int = 0) -> "DatasetManifest":
        """The RadioML2016.10a-sized grid: 11 schemes, -20:2:18 dB, 1000 frames per cell."""
        schemes = ["8PSK", "AM-DSB", "AM-SSB", "BPSK", "CPFSK", "GFSK", "PAM4", "QAM16",
                   "QAM64", "QPSK", "WBFM"]
        return cls(schemes=schemes, snr_grid_db=list(range(-20, 19, 2)), frames_per_cell=1000,
                   seed=seed)


# ---------------------------------------------------------------------------
# constellations and pulses


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _gray_pam(bits: int) -> np.ndarray:
    """Levels -(M-1)..(M-1) indexed by their Gray label."""
    m = 1 << bits
    levels = np.arange(-(m - 1), m, 2, dtype=np.float64)
    out = np.empty(m)
    for pos in range(m):
        out[_gray(pos)] = levels[pos]
    return out


def constellation(scheme: str) -> np.ndarray:
    """Unit-average-power alphabet; entry ``s`` is the point for symbol value ``s``.

    All mappings are Gray coded.
    """
    scheme = canonical_scheme(scheme)
    if scheme == "BPSK":
        return np.array([1.0 + 0j, -1.0 + 0j])
    if scheme == "QPSK":
        pam = _gray_pam(1)
        pts = np.array([pam[s >> 1] + 1j * pam[s & 1] for s in range(4)])
        return pts / np.sqrt(2.0)
    if scheme == "8PSK":
        pts = np.empty(8, dtype=complex)
        for pos in range(8):
            pts[_gray(pos)] = np.exp(2j * np.pi * pos / 8)
        return pts
    if scheme == "PAM4":
        return (_gray_pam(2) / np.sqrt(5.0)).astype(complex)
    if scheme in ("QAM16", "QAM64"):
        bits = 2 if scheme == "QAM16" else 3
        pam = _gray_pam(bits)
        m = 1 << bits
        pts = np.array([pam[s >> bits] + 1j * pam[s & (m - 1)] for s in range(m * m)])
        return pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    raise UnsupportedSchemeError(f"{scheme} has no symbol constellation")


def rrc_taps(rolloff: float, span: int, k: int) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response, ``span * k + 1`` taps."""
    t = np.arange(-span * k // 2, span * k // 2 + 1) / k
    b = rolloff
    h = np.empty_like(t)
    for idx, ti in enumerate(t):
        if np.isclose(ti, 0.0):
            h[idx] = 1 - b + 4 * b / np.pi
        elif b > 0 and np.isclose(abs(ti), 1 / (4 * b)):
            h[idx] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                       + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            h[idx] = (np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))) / (
                np.pi * ti * (1 - (4 * b * ti) ** 2))
    return h / np.sqrt(np.sum(h**2))


def gaussian_taps(bt: float, span: int, k: int) -> np.ndarray:
    t = np.arange(-span * k // 2, span * k // 2 + 1) / k
    h = np.sqrt(2 * np.pi / np.log(2)) * bt * np.exp(-2 * (np.pi * bt * t) ** 2 / np.log(2))
    return h / h.sum()


def _unit_power(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(np.abs(x) ** 2))


# ---------------------------------------------------------------------------
# modulation


def modulate(
    scheme: str,
    n_symbols: int,
    k: int = 8,
    seed: int | np.random.Generator = 0,
    *,
    symbols: Sequence[int] | None = None,
    pulse_shaping: str = "rrc",
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    frame_id: int = 0,
) -> IqFrame:
    """Generate one clean, unit-power frame of ``n_symbols * k`` samples.

    Linear schemes draw uniform symbols and are RRC shaped (roll-off 0.35,
    span 6) unless ``pulse_shaping="none"``, which holds each symbol for ``k``
    samples. Symbol ``m`` peaks at sample ``m * k``. GFSK/CPFSK are binary,
    phase-continuous FM with modulation index 0.5 (GFSK adds a BT=0.35
    Gaussian frequency pulse). The analog schemes modulate a low-pass noise
    message.
    """
    scheme = canonical_scheme(scheme)
    if n_symbols < 2:
        raise InvalidArgumentError(f"n_symbols must be at least 2, got {n_symbols}")
    if k < 1:
        raise InvalidArgumentError(f"samples per symbol must be positive, got {k}")
    if pulse_shaping not in ("rrc", "none"):
        raise InvalidArgumentError(f"pulse_shaping must be 'rrc' or 'none', got {pulse_shaping!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    length = n_symbols * k

    if scheme in LINEAR_SCHEMES:
        alphabet = constellation(scheme)
        pad = RRC_SPAN // 2 if pulse_shaping == "rrc" else 0
        if symbols is not None:
            core = np.asarray(symbols, dtype=np.int64)
            if core.shape != (n_symbols,) or core.min() < 0 or core.max() >= len(alphabet):
                raise InvalidArgumentError(f"symbols must be {n_symbols} values in [0, {len(alphabet)})")
            stream = np.concatenate([rng.integers(0, len(alphabet), pad), core,
                                     rng.integers(0, len(alphabet), pad)])
        else:
            stream = rng.integers(0, len(alphabet), n_symbols + 2 * pad)
        points = alphabet[stream]
        if pulse_shaping == "none":
            x = np.repeat(points, k)
        else:
            taps = rrc_taps(RRC_ROLLOFF, RRC_SPAN, k)
            impulses = np.zeros(len(points) * k, dtype=complex)
            impulses[::k] = points
            shaped = np.convolve(impulses, taps)
            start = pad * k + (len(taps) - 1) // 2
            x = shaped[start:start + length]
    elif scheme in FM_SCHEMES:
        x = _fsk(scheme, n_symbols, k, rng, symbols)
    else:
        x = _analog(scheme, length, k, rng, sample_rate)

    return IqFrame.from_complex(_unit_power(x), sample_rate=sample_rate, samples_per_symbol=k,
                                mod_label=scheme, snr_db=None, frame_id=frame_id)


def _fsk(scheme: str, n_symbols: int, k: int, rng: np.random.Generator,
         symbols: Sequence[int] | None) -> np.ndarray:
    pad = 2
    if symbols is not None:
        core = np.asarray(symbols, dtype=np.int64)
        if core.shape != (n_symbols,) or core.min() < 0 or core.max() > 1:
            raise InvalidArgumentError(f"{scheme} expects {n_symbols} binary symbols")
        bits = np.concatenate([rng.integers(0, 2, pad), core, rng.integers(0, 2, pad)])
    else:
        bits = rng.integers(0, 2, n_symbols + 2 * pad)
    freq = np.repeat(2.0 * bits - 1.0, k)
    if scheme == "GFSK":
        freq = np.convolve(freq, gaussian_taps(GFSK_BT, 4, k), mode="same")
    phase = np.cumsum(np.pi * FSK_MOD_INDEX * freq / k)
    return np.exp(1j * phase[pad * k:pad * k + n_symbols * k])


def _analog(scheme: str, length: int, k: int, rng: np.random.Generator,
            sample_rate: float) -> np.ndarray:
    guard = 64
    taps = sps.firwin(33, 1.0 / k)
    message = np.convolve(rng.standard_normal(length + 2 * guard), taps, mode="same")
    message = message[guard:guard + length]
    message = message / np.sqrt(np.mean(message**2))
    if scheme == "AM-DSB":
        return (1.0 + 0.5 * message).astype(complex)
    if scheme == "AM-SSB":
        return sps.hilbert(message)
    phase = 2 * np.pi * WBFM_DEVIATION_HZ / sample_rate * np.cumsum(message)
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# channel


def _truncated_normal(rng: np.random.Generator, std: float, bound: float) -> float:
    if std == 0:
        return 0.0
    return float(np.clip(rng.normal(0.0, std), -bound, bound))


def apply_channel(frame: IqFrame, cfg: ChannelConfig, return_realization: bool = False):
    """Fading, then CFO, then sample-rate offset, then AWGN at ``cfg.snr_db``.

    The noise variance is set from the empirical power of the impaired,
    noise-free signal. With ``return_realization`` the drawn impairments and
    the clean/noise components are returned as well.
    """
    power = frame.mean_power()
    if abs(power - 1.0) > 1e-6:
        raise InvalidArgumentError(f"apply_channel expects a unit-power frame, got power {power:.6g}")
    rng = np.random.default_rng(cfg.rng_seed)
    x = frame.iq
    n = np.arange(frame.length)

    if cfg.fading == "rayleigh":
        gain = complex((rng.normal() + 1j * rng.normal()) / np.sqrt(2))
    elif cfg.fading == "rician":
        kf = cfg.k_factor
        los = np.sqrt(kf / (kf + 1)) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        scatter = np.sqrt(1 / (kf + 1)) * (rng.normal() + 1j * rng.normal()) / np.sqrt(2)
        gain = complex(los + scatter)
    else:
        gain = 1.0 + 0j
    x = gain * x

    cfo = cfg.cfo_hz if cfg.cfo_hz is not None else float(rng.uniform(-cfg.cfo_max_hz, cfg.cfo_max_hz))
    x = x * np.exp(2j * np.pi * cfo * n / frame.sample_rate)

    sro = _truncated_normal(rng, cfg.sro_std_hz, cfg.sro_max_hz)
    if sro != 0.0:
        t = n * (1.0 + sro / frame.sample_rate)
        x = np.interp(t, n, x.real) + 1j * np.interp(t, n, x.imag)

    signal_power = float(np.mean(np.abs(x) ** 2))
    noise_var = signal_power / 10 ** (cfg.snr_db / 10)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(frame.length)
                                      + 1j * rng.standard_normal(frame.length))
    out = IqFrame.from_complex(x + noise, sample_rate=frame.sample_rate,
                               samples_per_symbol=frame.samples_per_symbol,
                               mod_label=frame.mod_label, snr_db=cfg.snr_db,
                               frame_id=frame.frame_id)
    if return_realization:
        return out, ChannelRealization(gain, cfo, sro, x, noise, noise_var)
    return out


# ---------------------------------------------------------------------------
# datasets


_HEADER = struct.Struct("<4sIQII")


def _record_dtype(length: int) -> np.dtype:
    return np.dtype([("frame_id", "<u8"), ("mod_label", "<u2"), ("snr_db", "<f4"),
                     ("i", "<f4", (length,)), ("q", "<f4", (length,))])


def _frame_plan(manifest: DatasetManifest) -> list[tuple[int, int, float]]:
    plan = []
    fid = 0
    for label in range(len(manifest.schemes)):
        for snr in manifest.snr_grid_db:
            for _ in range(manifest.frames_per_cell):
                plan.append((fid, label, snr))
                fid += 1
    return plan


def synth_frame(manifest: DatasetManifest, frame_id: int, label: int, snr_db: float) -> IqFrame:
    """Frame ``frame_id`` of ``manifest``; depends only on (manifest, frame_id)."""
    mod_seq, chan_seq = np.random.SeedSequence(manifest.seed, spawn_key=(frame_id,)).spawn(2)
    k = manifest.samples_per_symbol
    clean = modulate(manifest.schemes[label], manifest.frame_length // k, k,
                     np.random.default_rng(mod_seq), sample_rate=manifest.sample_rate,
                     frame_id=frame_id)
    chan_seed = int(chan_seq.generate_state(1, np.uint64)[0])
    return apply_channel(clean, manifest.channel_config(snr_db, chan_seed))


def _synth_chunk(args) -> np.ndarray:
    manifest, chunk = args
    records = np.zeros(len(chunk), dtype=_record_dtype(manifest.frame_length))
    for row, (fid, label, snr) in enumerate(chunk):
        frame = synth_frame(manifest, fid, label, snr)
        records[row] = (fid, label, snr, frame.i_samples, frame.q_samples)
    return records


def manifest_path_for(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".manifest.json")


@dataclass
class SynthResult:
    path: Path
    manifest_path: Path
    frame_count: int
    sha256: str


def synth_dataset(manifest: DatasetManifest, out_path, workers: int = 1,
                  chunk_size: int = 2048) -> SynthResult:
    """Write every (scheme, snr) cell of ``manifest`` to ``out_path``.

    Output bytes depend only on the manifest, not on ``workers``.
    """
    out_path = Path(out_path)
    plan = _frame_plan(manifest)
    chunks = [plan[i:i + chunk_size] for i in range(0, len(plan), chunk_size)]
    digest = hashlib.sha256()
    try:
        with open(out_path, "wb") as fh:
            header = _HEADER.pack(MAGIC, manifest.format_version, len(plan),
                                  manifest.frame_length, manifest.samples_per_symbol)
            fh.write(header)
            digest.update(header)
            if workers > 1 and len(chunks) > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    blocks = pool.map(_synth_chunk, [(manifest, c) for c in chunks])
                    for block in blocks:
                        raw = block.tobytes()
                        fh.write(raw)
                        digest.update(raw)
            else:
                for c in chunks:
                    raw = _synth_chunk((manifest, c)).tobytes()
                    fh.write(raw)
                    digest.update(raw)
        side = manifest_path_for(out_path)
        side.write_text(manifest.to_json() + "\n")
    except OSError as exc:
        raise WriteError(f"cannot write dataset: {exc}", path=str(out_path)) from exc
    return SynthResult(out_path, side, len(plan), digest.hexdigest())


@dataclass
class RawDataset:
    frame_id: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    i_samples: np.ndarray
    q_samples: np.ndarray
    samples_per_symbol: int
    format_version: int
    manifest: DatasetManifest | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_names(self) -> list[str]:
        if self.manifest is not None:
            return list(self.manifest.schemes)
        return [str(i) for i in range(int(self.labels.max()) + 1)]

    def frame(self, idx: int) -> IqFrame:
        sr = self.manifest.sample_rate if self.manifest else DEFAULT_SAMPLE_RATE
        return IqFrame(self.i_samples[idx], self.q_samples[idx], sample_rate=sr,
                       samples_per_symbol=self.samples_per_symbol,
                       mod_label=self.class_names[self.labels[idx]],
                       snr_db=float(self.snr_db[idx]), frame_id=int(self.frame_id[idx]))

    def frames(self) -> Iterable[IqFrame]:
        for idx in range(len(self)):
            yield self.frame(idx)


def read_dataset(path) -> RawDataset:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise FormatError("not an AMRD dataset (bad magic)", path=str(path))
    _, version, count, length, k = _HEADER.unpack_from(blob, 0)
    dtype = _record_dtype(length)
    expected = _HEADER.size + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"dataset size {len(blob)} does not match header ({expected})",
                          path=str(path))
    rec = np.frombuffer(blob, dtype=dtype, count=count, offset=_HEADER.size)
    side = manifest_path_for(path)
    manifest = DatasetManifest.from_json(side.read_text()) if side.exists() else None
    return RawDataset(rec["frame_id"].astype(np.int64), rec["mod_label"].astype(np.int64),
                      rec["snr_db"].astype(np.float64), rec["i"].astype(np.float64),
                      rec["q"].astype(np.float64), k, version, manifest)


def with_schemes(manifest: DatasetManifest, schemes: Sequence[str]) -> DatasetManifest:
    return replace(manifest, schemes=list(schemes))


__all__ = [
    "ALL_SCHEMES", "ANALOG_SCHEMES", "ChannelConfig", "ChannelRealization", "DatasetManifest",
    "IqFrame", "MANDATORY_SCHEMES", "RawDataset", "SynthResult", "apply_channel",
    "canonical_scheme", "constellation", "manifest_path_for", "modulate", "read_dataset",
    "rrc_taps", "synth_dataset", "synth_frame",
]
