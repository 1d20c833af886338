"""Model inputs from IQ frames: constellation raster, eye raster, db4 wavelet vector.

The featurized file ("AMRF") is little-endian::

    b"AMRF" | format_version u32 | count u64 | H u32 | W u32 | eye_channels u32 | wav_len u32
    per sample: label u16 | snr_db f32 | H*W f32 (constellation) |
                eye_channels*H*W f32 (eye) | wav_len f32 (wavelet vector)

Class names and featurization settings go in a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidArgumentError, ShapeError, WriteError
from .sigsynth import IqFrame, RawDataset

MAGIC = b"AMRF"
FORMAT_VERSION = 1
DEFAULT_RESOLUTION = 64
RANGE_RMS_FACTOR = 3.5

# Daubechies-4 analysis low-pass (8 taps), as tabulated for "db4".
DB4_DEC_LO = np.array([
    -0.010597401785069032, 0.0328830116668852, 0.030841381835560764, -0.18703481171909309,
    -0.027983769416859854, 0.6308807679298589, 0.7148465705529157, 0.2303778133088965,
])
DB4_DEC_HI = np.array([(-1) ** (n + 1) * DB4_DEC_LO[len(DB4_DEC_LO) - 1 - n]
                       for n in range(len(DB4_DEC_LO))])

BAND_NAMES = ("cA2_I", "cD2_I", "cD1_I", "cA2_Q", "cD2_Q", "cD1_Q")


def _channels(frame) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(frame, IqFrame):
        return frame.i_samples, frame.q_samples
    x = np.asarray(frame)
    if np.iscomplexobj(x):
        return x.real.astype(np.float64), x.imag.astype(np.float64)
    if x.ndim == 2 and x.shape[0] == 2:
        return x[0].astype(np.float64), x[1].astype(np.float64)
    raise InvalidArgumentError("expected an IqFrame, a complex array or a 2xL array")


def _bins(values: np.ndarray, bound: float, n: int) -> np.ndarray:
    """Uniform bins over [-bound, bound]; out-of-range values clip to the edge bins."""
    idx = np.floor((values + bound) / (2 * bound) * n).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def _rows(values: np.ndarray, bound: float, n: int) -> np.ndarray:
    # Row 0 is the top of the image (+bound).
    return n - 1 - _bins(values, bound, n)


def default_range(frame) -> float:
    i, q = _channels(frame)
    rms = np.sqrt(np.mean(i**2 + q**2))
    return float(RANGE_RMS_FACTOR * rms) if rms > 0 else 1.0


# ---------------------------------------------------------------------------
# constellation


@dataclass
class ConstellationImage:
    pixels: np.ndarray
    axis_range: float
    total_mass: int

    def normalized(self) -> np.ndarray:
        peak = self.pixels.max()
        return self.pixels / peak if peak > 0 else self.pixels.copy()


def rasterize_constellation(frame, resolution: int = DEFAULT_RESOLUTION,
                            axis_range: float | None = None) -> ConstellationImage:
    """2-D histogram of (I, Q) pairs; columns follow I, rows follow Q (top = +A)."""
    if resolution < 8:
        raise InvalidArgumentError(f"resolution must be at least 8, got {resolution}")
    i, q = _channels(frame)
    if i.size == 0:
        raise InvalidArgumentError("cannot rasterize an empty frame")
    if axis_range is None:
        axis_range = default_range(frame)
    if axis_range <= 0:
        raise InvalidArgumentError(f"axis_range must be positive, got {axis_range}")
    pixels = np.zeros((resolution, resolution))
    np.add.at(pixels, (_rows(q, axis_range, resolution), _bins(i, axis_range, resolution)), 1.0)
    return ConstellationImage(pixels, float(axis_range), int(i.size))


# ---------------------------------------------------------------------------
# eye diagram


@dataclass
class EyeImage:
    pixels: np.ndarray
    k: int
    n_trajectories: int

    def normalized(self) -> np.ndarray:
        peak = self.pixels.max()
        return self.pixels / peak if peak > 0 else self.pixels.copy()


def eye_count(length: int, k: int) -> int:
    return length // k - 1


def extract_eye_trajectories(frame, k: int | None = None, channel: str = "I") -> np.ndarray:
    """Two-symbol windows ``[b*k, b*k + 2k)`` for ``b = 0 .. floor(L/k) - 2``.

    Returns an ``(N, 2k)`` array taken from the I channel (or Q).
    """
    if k is None:
        if not isinstance(frame, IqFrame):
            raise InvalidArgumentError("k is required when the input is not an IqFrame")
        k = frame.samples_per_symbol
    if k < 1:
        raise InvalidArgumentError(f"k must be positive, got {k}")
    if isinstance(frame, np.ndarray) and frame.ndim == 1 and not np.iscomplexobj(frame):
        x = frame.astype(np.float64)
    else:
        i, q = _channels(frame)
        if channel not in ("I", "Q"):
            raise InvalidArgumentError(f"channel must be 'I' or 'Q', got {channel!r}")
        x = i if channel == "I" else q
    if len(x) < 2 * k:
        raise InvalidArgumentError(f"frame length {len(x)} is shorter than 2k = {2 * k}")
    n = eye_count(len(x), k)
    starts = np.arange(n) * k
    return x[starts[:, None] + np.arange(2 * k)[None, :]]


def rasterize_eye(trajectories, resolution: int = DEFAULT_RESOLUTION,
                  amp_range: float | None = None, width: int | None = None) -> EyeImage:
    """Draw each trajectory as a polyline and accumulate.

    The 2k samples span the image width; column ``c`` sits at fractional
    sample ``c * 2k / W``, so column ``W/2`` is the second symbol instant.
    Each column is filled from its sample row to the midpoints toward its
    neighbours, which keeps steep segments connected.
    """
    traj = np.atleast_2d(np.asarray(trajectories, dtype=np.float64))
    if traj.size == 0 or traj.shape[0] == 0:
        raise InvalidArgumentError("rasterize_eye needs at least one trajectory")
    h = resolution
    w = resolution if width is None else width
    if h < 8 or w < 2:
        raise InvalidArgumentError(f"resolution too small: {h}x{w}")
    span = traj.shape[1]
    if span % 2:
        raise InvalidArgumentError(f"trajectory length must be 2k, got {span}")
    if amp_range is None:
        rms = np.sqrt(np.mean(traj**2))
        amp_range = RANGE_RMS_FACTOR * rms if rms > 0 else 1.0
    if amp_range <= 0:
        raise InvalidArgumentError(f"amp_range must be positive, got {amp_range}")

    tau = np.arange(w) * span / w
    base = np.arange(span)
    samples = np.stack([np.interp(tau, base, t) for t in traj])
    rows = _rows(samples, amp_range, h)
    left = rows.copy()
    right = rows.copy()
    left[:, 1:] = (rows[:, 1:] + rows[:, :-1]) // 2
    right[:, :-1] = (rows[:, :-1] + rows[:, 1:]) // 2
    lo = np.minimum(rows, np.minimum(left, right))
    hi = np.maximum(rows, np.maximum(left, right))

    # Interval fill via a difference array along rows.
    diff = np.zeros((h + 1, w))
    cols = np.broadcast_to(np.arange(w), rows.shape)
    np.add.at(diff, (lo.ravel(), cols.ravel()), 1.0)
    np.add.at(diff, (hi.ravel() + 1, cols.ravel()), -1.0)
    pixels = np.cumsum(diff, axis=0)[:h]
    return EyeImage(pixels, span // 2, traj.shape[0])


# ---------------------------------------------------------------------------
# wavelets


def dwt_output_length(n: int, mode: str = "symmetric", filter_len: int = 8) -> int:
    if mode == "symmetric":
        return (n + filter_len - 1) // 2
    if mode == "periodic":
        return (n + 1) // 2
    raise InvalidArgumentError(f"padding_mode must be 'symmetric' or 'periodic', got {mode!r}")


def dwt_single_level(x: np.ndarray, padding_mode: str = "symmetric") -> tuple[np.ndarray, np.ndarray]:
    """One decimated db4 analysis step, returning ``(cA, cD)``.

    ``symmetric`` mirrors the signal (edge sample repeated) and keeps
    ``floor((n + 7) / 2)`` outputs. ``periodic`` is the periodized
    transform with ``ceil(n / 2)`` outputs, orthonormal for even ``n``.
    """
    x = np.asarray(x, dtype=np.float64)
    f = len(DB4_DEC_LO)
    n = len(x)
    if padding_mode == "symmetric":
        n_out = dwt_output_length(n, "symmetric", f)
        xp = np.pad(x, f - 1, mode="symmetric") if n >= f - 1 else _sym_pad_long(x, f - 1)
        ca = np.convolve(xp, DB4_DEC_LO)[f:f + 2 * n_out:2]
        cd = np.convolve(xp, DB4_DEC_HI)[f:f + 2 * n_out:2]
        return ca, cd
    if padding_mode == "periodic":
        if n % 2:
            x = np.append(x, x[-1])
            n += 1
        # Circular convolution: out[m] = sum_j h[j] x[(2m + f/2 - j) mod n].
        idx = (2 * np.arange(n // 2)[:, None] + f // 2 - np.arange(f)[None, :]) % n
        window = x[idx]
        return window @ DB4_DEC_LO, window @ DB4_DEC_HI
    raise InvalidArgumentError(f"padding_mode must be 'symmetric' or 'periodic', got {padding_mode!r}")


def _sym_pad_long(x: np.ndarray, pad: int) -> np.ndarray:
    # Repeated mirroring when the pad exceeds the signal length.
    out = x
    while pad > 0:
        step = min(pad, len(x))
        out = np.pad(out, step, mode="symmetric")
        pad -= step
    return out


def dwt_db4_two_level(signal, padding_mode: str = "symmetric") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-level db4 decomposition, returning ``(cA2, cD2, cD1)``."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError(f"expected a 1-d signal, got shape {x.shape}")
    if len(x) < len(DB4_DEC_LO):
        raise InvalidArgumentError(f"signal length {len(x)} is shorter than the db4 filter (8)")
    ca1, cd1 = dwt_single_level(x, padding_mode)
    ca2, cd2 = dwt_single_level(ca1, padding_mode)
    return ca2, cd2, cd1


@dataclass
class WaveletVector:
    values: np.ndarray
    band_offsets: dict[str, tuple[int, int]]

    def band(self, name: str) -> np.ndarray:
        start, stop = self.band_offsets[name]
        return self.values[start:stop]


def band_offsets_for(length: int = 128, padding_mode: str = "symmetric") -> dict[str, tuple[int, int]]:
    l1 = dwt_output_length(length, padding_mode)
    l2 = dwt_output_length(l1, padding_mode)
    sizes = (l2, l2, l1) * 2
    offsets = {}
    pos = 0
    for name, size in zip(BAND_NAMES, sizes):
        offsets[name] = (pos, pos + size)
        pos += size
    return offsets


def wavelet_length(length: int = 128, padding_mode: str = "symmetric") -> int:
    return band_offsets_for(length, padding_mode)["cD1_Q"][1]


def pack_wavelet_features(frame, padding_mode: str = "symmetric") -> WaveletVector:
    """Per-channel two-level db4 coefficients, ``[cA2|cD2|cD1]`` for I then Q.

    A 128-sample frame gives 282 values; other lengths give
    ``wavelet_length(L)``.
    """
    i, q = _channels(frame)
    parts = [*dwt_db4_two_level(i, padding_mode), *dwt_db4_two_level(q, padding_mode)]
    return WaveletVector(np.concatenate(parts), band_offsets_for(len(i), padding_mode))


# ---------------------------------------------------------------------------
# samples and datasets


@dataclass
class MultimodalSample:
    constellation: np.ndarray  # (1, H, W)
    eye: np.ndarray  # (eye_channels, H, W)
    wavelet: np.ndarray  # (282,)
    label: int
    snr_db: float


def featurize_frame(frame: IqFrame, resolution: int = DEFAULT_RESOLUTION, eye_k: int | None = None,
                    eye_channels: int = 1, normalize: bool = True, label: int = 0) -> MultimodalSample:
    if eye_channels not in (1, 2):
        raise InvalidArgumentError(f"eye_channels must be 1 or 2, got {eye_channels}")
    k = frame.samples_per_symbol if eye_k is None else eye_k
    cons = rasterize_constellation(frame, resolution)
    eyes = []
    for ch in ("I", "Q")[:eye_channels]:
        traj = extract_eye_trajectories(frame, k, channel=ch)
        # Shared amplitude range across channels so I and Q eyes are comparable.
        eyes.append(rasterize_eye(traj, resolution, amp_range=cons.axis_range))
    cons_px = cons.normalized() if normalize else cons.pixels
    eye_px = np.stack([e.normalized() if normalize else e.pixels for e in eyes])
    wav = pack_wavelet_features(frame).values
    return MultimodalSample(cons_px[None].astype(np.float32), eye_px.astype(np.float32),
                            wav.astype(np.float32), label,
                            float(frame.snr_db) if frame.snr_db is not None else float("nan"))


@dataclass
class FeatureSet:
    constellation: np.ndarray  # (N, 1, H, W) float32
    eye: np.ndarray  # (N, C_eye, H, W) float32
    wavelet: np.ndarray  # (N, D) float32
    labels: np.ndarray  # (N,) int64
    snr_db: np.ndarray  # (N,) float64
    class_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        for name in ("constellation", "eye", "wavelet", "snr_db"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"FeatureSet.{name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def resolution(self) -> int:
        return int(self.constellation.shape[-1])

    @property
    def n_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return FeatureSet(self.constellation[idx], self.eye[idx], self.wavelet[idx],
                          self.labels[idx], self.snr_db[idx], list(self.class_names), dict(self.meta))


def _featurize_chunk(args):
    raw, rows, resolution, eye_k, eye_channels = args
    out = [featurize_frame(raw.frame(r), resolution, eye_k, eye_channels, label=int(raw.labels[r]))
           for r in rows]
    return (np.stack([s.constellation for s in out]), np.stack([s.eye for s in out]),
            np.stack([s.wavelet for s in out]))


def featurize_dataset(raw: RawDataset, resolution: int = DEFAULT_RESOLUTION, eye_k: int | None = None,
                      eye_channels: int = 1, workers: int = 1, chunk_size: int = 1024) -> FeatureSet:
    """Featurize every frame of ``raw``; the result does not depend on ``workers``."""
    if len(raw) == 0:
        raise InvalidArgumentError("dataset is empty")
    k = raw.samples_per_symbol if eye_k is None else eye_k
    chunks = [np.arange(s, min(s + chunk_size, len(raw))) for s in range(0, len(raw), chunk_size)]
    jobs = [(raw, rows, resolution, k, eye_channels) for rows in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_featurize_chunk, jobs))
    else:
        parts = [_featurize_chunk(j) for j in jobs]
    cons, eye, wav = (np.concatenate([p[i] for p in parts]) for i in range(3))
    meta = {"resolution": resolution, "eye_k": k, "eye_channels": eye_channels,
            "frame_length": int(raw.i_samples.shape[1])}
    return FeatureSet(cons, eye, wav, raw.labels.astype(np.int64), raw.snr_db.astype(np.float64),
                      raw.class_names, meta)


_HEADER = struct.Struct("<4sIQIIII")


def _sample_dtype(h: int, w: int, eye_channels: int, wav_len: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("snr_db", "<f4"), ("cons", "<f4", (1, h, w)),
                     ("eye", "<f4", (eye_channels, h, w)), ("wav", "<f4", (wav_len,))])


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_features(features: FeatureSet, path) -> Path:
    path = Path(path)
    n = len(features)
    _, _, h, w = features.constellation.shape
    ce = features.eye.shape[1]
    d = features.wavelet.shape[1]
    rec = np.zeros(n, dtype=_sample_dtype(h, w, ce, d))
    rec["label"] = features.labels
    rec["snr_db"] = features.snr_db
    rec["cons"] = features.constellation
    rec["eye"] = features.eye
    rec["wav"] = features.wavelet
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, h, w, ce, d))
            fh.write(rec.tobytes())
        sidecar_path(path).write_text(json.dumps(
            {"class_names": features.class_names, **features.meta}, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise WriteError(f"cannot write features: {exc}", path=str(path)) from exc
    return path


def read_features(path) -> FeatureSet:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise FormatError("not an AMRF feature file (bad magic)", path=str(path))
    _, _, n, h, w, ce, d = _HEADER.unpack_from(blob, 0)
    dtype = _sample_dtype(h, w, ce, d)
    if len(blob) != _HEADER.size + n * dtype.itemsize:
        raise FormatError("feature file size does not match its header", path=str(path))
    rec = np.frombuffer(blob, dtype=dtype, count=n, offset=_HEADER.size)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    names = meta.pop("class_names", [])
    return FeatureSet(rec["cons"].copy(), rec["eye"].copy(), rec["wav"].copy(),
                      rec["label"].astype(np.int64), rec["snr_db"].astype(np.float64), names, meta)


def synth_features(manifest, resolution: int = DEFAULT_RESOLUTION, eye_channels: int = 1,
                   workers: int = 1) -> FeatureSet:
    """Synthesize and featurize ``manifest`` in memory (no dataset file)."""
    from .sigsynth import _frame_plan, synth_frame

    plan = _frame_plan(manifest)
    frames = [synth_frame(manifest, fid, label, snr) for fid, label, snr in plan]
    raw = RawDataset(
        np.array([p[0] for p in plan], dtype=np.int64), np.array([p[1] for p in plan], dtype=np.int64),
        np.array([p[2] for p in plan], dtype=np.float64),
        np.stack([f.i_samples for f in frames]).astype(np.float32).astype(np.float64),
        np.stack([f.q_samples for f in frames]).astype(np.float32).astype(np.float64),
        manifest.samples_per_symbol, manifest.format_version, manifest)
    return featurize_dataset(raw, resolution, eye_channels=eye_channels, workers=workers)


__all__ = [
    "BAND_NAMES", "ConstellationImage", "DB4_DEC_HI", "DB4_DEC_LO", "EyeImage", "FeatureSet",
    "MultimodalSample", "WaveletVector", "band_offsets_for", "dwt_db4_two_level", "dwt_single_level",
    "extract_eye_trajectories", "featurize_dataset", "featurize_frame", "pack_wavelet_features",
    "rasterize_constellation", "rasterize_eye", "read_features", "synth_features", "wavelet_length",
    "write_features",
]
