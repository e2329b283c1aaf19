"""Dataset plumbing: the DCASE-style directory scanner and a synthetic
multi-section dataset for desk-scale end-to-end verification.

The generator stands in for the real corpora: per section a distinct
harmonic complex in factory-style white noise, with three anomaly
mechanisms. Harmonic distortion and transient bursts perturb the
spectrum (reconstruction should catch them); a section swap synthesizes
a *different* section's sound under this section's label, which a plain
autoencoder reconstructs happily but the section classifier flags.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import write_wav_pcm16
from .errors import LayoutError, NameParseError

MANIFEST_NAME = "manifest.csv"

KIND_HARMONIC = "harmonic_distortion"
KIND_BURSTS = "transient_bursts"
KIND_SWAP = "section_swap"
ANOMALY_KINDS = (KIND_HARMONIC, KIND_BURSTS, KIND_SWAP)

SAMPLE_RATE = 16000


@dataclass
class ClipMeta:
    path: Path
    machine: str
    section_id: int        # dense 0..M-1 index
    section_code: str      # the NN token from the filename
    split: str             # "train" | "test"
    label: str             # "normal" | "anomaly" | "unknown"
    anomaly_kind: str = ""


def _parse_name(stem, split):
    """Extract (section NN, label) from a DCASE-style filename stem."""
    tokens = stem.split("_")
    code = None
    for i, tok in enumerate(tokens):
        if tok == "section" and i + 1 < len(tokens) and tokens[i + 1].isdigit():
            code = tokens[i + 1]
            break
    if code is None:
        raise NameParseError(f"{stem}: no section_NN token")
    has_normal = "normal" in tokens
    has_anomaly = "anomaly" in tokens
    if has_normal == has_anomaly:
        raise NameParseError(f"{stem}: needs exactly one of normal/anomaly tokens")
    label = "normal" if has_normal else "anomaly"
    if split == "train" and label != "normal":
        raise NameParseError(f"{stem}: anomalous clip in the train split")
    return code, label


def scan_dcase(root, machine):
    """Inventory <root>/<machine>/{train,test}/*.wav into ClipMeta records.

    Section codes are densely re-indexed to 0..M-1 in ascending order.
    """
    base = Path(root) / machine
    for split in ("train", "test"):
        if not (base / split).is_dir():
            raise LayoutError(f"{base}: missing {split}/ directory")
    raw = []
    for split in ("train", "test"):
        for path in sorted((base / split).glob("*.wav")):
            code, label = _parse_name(path.stem, split)
            raw.append((path, code, split, label))
    codes = sorted({code for _p, code, _s, _l in raw}, key=int)
    index = {code: i for i, code in enumerate(codes)}
    return [
        ClipMeta(path=path, machine=machine, section_id=index[code],
                 section_code=code, split=split, label=label)
        for path, code, split, label in raw
    ]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for the synthetic dataset (all sizes per section)."""

    num_sections: int = 3
    clips_per_section_train: int = 60
    test_normal: int = 20
    test_anomaly: int = 20
    clip_seconds: float = 2.0
    base_freqs: tuple = (500.0, 900.0, 1400.0)
    noise_snr_db: float = 20.0
    anomaly_kinds: tuple = ANOMALY_KINDS
    seed: int = 0
    machine: str = "synth"

    def __post_init__(self):
        if len(self.base_freqs) != self.num_sections:
            raise ValueError("need one base frequency per section")
        if len(set(self.base_freqs)) != self.num_sections:
            raise ValueError("base frequencies must be pairwise distinct")
        if max(self.base_freqs) >= 8000.0:
            raise ValueError("base frequencies must stay below 8 kHz")
        kinds = (self.anomaly_kinds,) if isinstance(self.anomaly_kinds, str) else tuple(self.anomaly_kinds)
        object.__setattr__(self, "anomaly_kinds", kinds)
        for kind in kinds:
            if kind not in ANOMALY_KINDS:
                raise ValueError(f"unknown anomaly kind {kind!r}")
        if KIND_SWAP in kinds and self.num_sections < 2:
            raise ValueError("section_swap anomalies need at least 2 sections")


def _harmonic_wave(rng, f0, n):
    """Fundamental plus two harmonics, jittered amplitudes/random phases."""
    t = np.arange(n) / SAMPLE_RATE
    sig = np.zeros(n)
    for k, base_amp in enumerate((1.0, 0.5, 0.25)):
        amp = base_amp * rng.uniform(0.85, 1.15)
        sig += amp * np.sin(2.0 * np.pi * f0 * (k + 1) * t + rng.uniform(0.0, 2.0 * np.pi))
    return sig


def _finish(rng, sig, snr_db):
    """Fix signal RMS, add white noise at the requested SNR, guard peaks."""
    sig = sig * (0.2 / np.sqrt(np.mean(sig * sig)))
    noise = rng.standard_normal(len(sig))
    noise *= (0.2 / np.sqrt(np.mean(noise * noise))) * 10.0 ** (-snr_db / 20.0)
    x = sig + noise
    peak = np.abs(x).max()
    if peak > 0.95:
        x *= 0.95 / peak
    return x


def _synth_clip(spec, section, split, label, kind, index):
    rng = np.random.default_rng(np.random.SeedSequence(
        [0x5E71, spec.seed, section, 0 if split == "train" else 1,
         0 if label == "normal" else 1, index]))
    n = int(round(spec.clip_seconds * SAMPLE_RATE))
    if label == "normal":
        return _finish(rng, _harmonic_wave(rng, spec.base_freqs[section], n), spec.noise_snr_db)
    if kind == KIND_HARMONIC:
        sig = _harmonic_wave(rng, spec.base_freqs[section], n)
        t = np.arange(n) / SAMPLE_RATE
        inharmonic = spec.base_freqs[section] * 2.37
        sig += 0.7 * rng.uniform(0.85, 1.15) * np.sin(
            2.0 * np.pi * inharmonic * t + rng.uniform(0.0, 2.0 * np.pi))
        return _finish(rng, sig, spec.noise_snr_db)
    if kind == KIND_BURSTS:
        sig = _harmonic_wave(rng, spec.base_freqs[section], n)
        x = _finish(rng, sig, spec.noise_snr_db)
        burst_len = int(0.008 * SAMPLE_RATE)
        envelope = np.exp(-np.arange(burst_len) / (burst_len / 4.0))
        for _ in range(int(rng.integers(4, 8))):
            pos = int(rng.integers(0, n - burst_len))
            x[pos:pos + burst_len] += 0.6 * envelope * rng.standard_normal(burst_len)
        peak = np.abs(x).max()
        return x * (0.95 / peak) if peak > 0.95 else x
    if kind == KIND_SWAP:
        other = int((section + 1 + rng.integers(spec.num_sections - 1)) % spec.num_sections)
        return _finish(rng, _harmonic_wave(rng, spec.base_freqs[other], n), spec.noise_snr_db)
    raise ValueError(f"unknown anomaly kind {kind!r}")


def synth_generate(spec, out_dir):
    """Write the synthetic WAV tree + manifest.csv; returns ClipMeta list.

    The layout matches scan_dcase exactly, so synthetic and real data are
    interchangeable downstream. Byte-identical for identical specs.
    """
    out_dir = Path(out_dir)
    clips = []
    for section in range(spec.num_sections):
        code = f"{section:02d}"
        jobs = [("train", "normal", "", i) for i in range(spec.clips_per_section_train)]
        jobs += [("test", "normal", "", i) for i in range(spec.test_normal)]
        jobs += [("test", "anomaly", spec.anomaly_kinds[i % len(spec.anomaly_kinds)], i)
                 for i in range(spec.test_anomaly)]
        for split, label, kind, index in jobs:
            samples = _synth_clip(spec, section, split, label, kind, index)
            rel = Path(spec.machine) / split / f"section_{code}_{split}_{label}_{index:04d}.wav"
            path = out_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav_pcm16(path, samples)
            clips.append(ClipMeta(path=path, machine=spec.machine, section_id=section,
                                  section_code=code, split=split, label=label,
                                  anomaly_kind=kind))
    write_manifest(clips, out_dir / MANIFEST_NAME, relative_to=out_dir)
    return clips


def write_manifest(clips, path, relative_to=None):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "machine", "section", "split", "label", "anomaly_kind"])
        for c in clips:
            p = c.path.relative_to(relative_to).as_posix() if relative_to else str(c.path)
            writer.writerow([p, c.machine, c.section_code, c.split, c.label, c.anomaly_kind])


def read_manifest(path):
    """Load manifest.csv back into ClipMeta records (paths relative to it)."""
    path = Path(path)
    clips = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            clips.append(ClipMeta(
                path=path.parent / row["path"], machine=row["machine"],
                section_id=-1, section_code=row["section"], split=row["split"],
                label=row["label"], anomaly_kind=row.get("anomaly_kind", "")))
    codes = sorted({c.section_code for c in clips}, key=int)
    index = {code: i for i, code in enumerate(codes)}
    for c in clips:
        c.section_id = index[c.section_code]
    return clips
