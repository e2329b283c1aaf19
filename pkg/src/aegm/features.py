"""Acoustic features: STFT magnitude, Slaney log-mel, context stacking,
and the low-frequency shuffle augmentation.

Defaults follow the 64 ms / 50% hop framing at 16 kHz: n_fft 1024,
hop 512, 128 mel channels (640-dim stacked input) or 513 STFT bins
(2565-dim stacked input).
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import read_container, split_blocks, write_container
from .errors import BadMelConfig, ClipTooShort, NonFiniteFeature, ShapeMismatch

FEATURE_MAGIC = b"AEGMFEAT"
FEATURE_VERSION = 1

LOG_MEL = "logmel"
STFT_MAG = "stft"


@dataclass(frozen=True)
class FeatureConfig:
    """Front-end settings; hash() of the fields threads through all artifacts."""

    feature_kind: str = LOG_MEL
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    context_frames: int = 5
    log_floor_epsilon: float = 1e-12
    fmin: float = 0.0
    fmax: float = 8000.0
    stft_power: float = 1.0  # 1 = raw magnitude, 2 = power; applies to STFT features only

    def __post_init__(self):
        if self.feature_kind not in (LOG_MEL, STFT_MAG):
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if not (0 < self.hop <= self.n_fft):
            raise ValueError("hop must satisfy 0 < hop <= n_fft")
        if self.context_frames < 1:
            raise ValueError("context_frames must be >= 1")

    @property
    def per_frame_dim(self):
        if self.feature_kind == STFT_MAG:
            return self.n_fft // 2 + 1
        return self.n_mels

    @property
    def input_dim(self):
        return self.per_frame_dim * self.context_frames

    def config_hash(self):
        payload = json.dumps(
            {k: getattr(self, k) for k in (
                "feature_kind", "n_fft", "hop", "n_mels", "context_frames",
                "log_floor_epsilon", "fmin", "fmax", "stft_power")},
            sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureMatrix:
    """Stacked context rows for one clip; the model input."""

    rows: np.ndarray
    clip_id: str
    section_id: int
    section_code: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2:
            raise ShapeMismatch("FeatureMatrix rows must be 2-D")
        if not np.isfinite(self.rows).all():
            raise NonFiniteFeature(f"clip {self.clip_id!r}: non-finite feature values")


def hann_window(n):
    # Periodic Hann, the STFT convention (vs numpy's symmetric hanning).
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(num_samples, n_fft, hop):
    if num_samples < n_fft:
        raise ClipTooShort(f"{num_samples} samples < one frame of {n_fft}")
    return (num_samples - n_fft) // hop + 1


def stft_magnitude(clip, cfg):
    """Hann-windowed magnitude spectrogram, T x (n_fft/2 + 1)."""
    x = clip.samples
    t = frame_count(len(x), cfg.n_fft, cfg.hop)
    idx = cfg.hop * np.arange(t)[:, None] + np.arange(cfg.n_fft)[None, :]
    frames = x[idx] * hann_window(cfg.n_fft)
    return np.abs(np.fft.rfft(frames, axis=1))


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f < min_log_hz, f / f_sp, min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m < min_log_mel, m * f_sp, min_log_hz * np.exp(logstep * (m - min_log_mel)))


def mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax):
    """Triangular Slaney-normalized filterbank, (n_mels, n_fft/2 + 1)."""
    if n_mels < 1:
        raise BadMelConfig(f"n_mels = {n_mels}")
    if fmax > sample_rate / 2 or fmin < 0 or fmin >= fmax:
        raise BadMelConfig(f"mel range [{fmin}, {fmax}] invalid for sr {sample_rate}")
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    diffs = np.diff(hz_pts)
    ramps = hz_pts[:, None] - bin_freqs[None, :]
    for i in range(n_mels):
        lower = -ramps[i] / diffs[i]
        upper = ramps[i + 2] / diffs[i + 1]
        fb[i] = np.maximum(0.0, np.minimum(lower, upper))
    # Slaney area normalization: each triangle integrates to ~2/bandwidth
    fb *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    return fb


def log_mel(clip, cfg):
    """10*log10(mel power + floor) features, T x n_mels."""
    fb = mel_filterbank(clip.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    mag = stft_magnitude(clip, cfg)
    mel_power = (mag * mag) @ fb.T
    return 10.0 * np.log10(mel_power + cfg.log_floor_epsilon)


def stack_context(frames, context):
    """Concatenate each run of `context` consecutive frames into one row."""
    frames = np.asarray(frames)
    t, f = frames.shape
    if t < context:
        raise ClipTooShort(f"{t} frames < context of {context}")
    n_out = t - context + 1
    return np.hstack([frames[i:i + n_out] for i in range(context)])


def extract(clip, cfg, section_id=-1, section_code=""):
    """Full front end for one clip: frames -> stacked FeatureMatrix."""
    if cfg.feature_kind == LOG_MEL:
        frames = log_mel(clip, cfg)
    else:
        frames = stft_magnitude(clip, cfg)
        if cfg.stft_power != 1.0:
            frames = frames ** cfg.stft_power
    rows = stack_context(frames, cfg.context_frames)
    return FeatureMatrix(rows=rows, clip_id=clip.clip_id,
                         section_id=section_id, section_code=section_code)


def shuffle_low_freq(rows, per_frame_dim, context, low_bins, prob, rng):
    """Training augmentation: per selected row, permute the lowest-frequency
    coefficients of the stacked context slots across those slots.

    Values are moved, never altered, so the per-row multiset of each
    low bin is preserved; bins >= low_bins stay bit-identical. Returns a
    new array; rows is untouched.
    """
    rows = np.asarray(rows)
    if rows.shape[1] != per_frame_dim * context:
        raise ShapeMismatch(
            f"rows dim {rows.shape[1]} != per_frame_dim {per_frame_dim} x context {context}")
    if not (0 <= low_bins <= per_frame_dim):
        raise ValueError("low_bins outside [0, per_frame_dim]")
    if not (0.0 <= prob <= 1.0):
        raise ValueError("prob outside [0, 1]")
    out = rows.copy()
    if low_bins == 0 or prob == 0.0:
        return out
    for i in range(out.shape[0]):
        if rng.random() >= prob:
            continue
        slots = out[i].reshape(context, per_frame_dim)
        perm = rng.permutation(context)
        slots[:, :low_bins] = slots[perm, :low_bins]
    return out


def save_features(path, fm, cfg):
    """Write one clip's FeatureMatrix as an AEGMFEAT container."""
    header = {
        "clip_id": fm.clip_id,
        "section_id": int(fm.section_id),
        "section_code": fm.section_code,
        "rows": int(fm.rows.shape[0]),
        "dim": int(fm.rows.shape[1]),
        "feature_kind": cfg.feature_kind,
        "context_frames": cfg.context_frames,
        "config_hash": cfg.config_hash(),
    }
    write_container(path, FEATURE_MAGIC, FEATURE_VERSION, header, [fm.rows])


def load_features(path):
    """Read an AEGMFEAT container; returns (FeatureMatrix, header dict)."""
    _version, header, raw = read_container(path, FEATURE_MAGIC)
    (rows,) = split_blocks(raw, [(header["rows"], header["dim"])], path=str(path))
    fm = FeatureMatrix(rows=rows, clip_id=header["clip_id"],
                       section_id=header["section_id"],
                       section_code=header.get("section_code", ""))
    return fm, header


def peek_feature_header(path):
    _version, header, _raw = read_container(Path(path), FEATURE_MAGIC)
    return header
