"""WAV ingestion and the in-memory clip type.

Hand-rolled RIFF parsing so format rejection is precise: the pipeline
accepts exactly mono 16 kHz PCM16 or IEEE float32 files and nothing
else. The stdlib wave module cannot read float WAVs, which is why this
exists.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClipTooShort, CorruptFile, UnsupportedFormat

EXPECTED_SAMPLE_RATE = 16000
MIN_SAMPLES = 1024  # one analysis frame

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


@dataclass
class AudioClip:
    """Mono 16 kHz waveform with amplitudes in roughly [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    clip_id: str = field(default="")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedFormat("AudioClip requires a mono 1-D sample array")
        if self.sample_rate != EXPECTED_SAMPLE_RATE:
            raise UnsupportedFormat(
                f"sample rate {self.sample_rate} Hz; this pipeline ingests {EXPECTED_SAMPLE_RATE} Hz only")
        if len(self.samples) < MIN_SAMPLES:
            raise ClipTooShort(
                f"clip {self.clip_id!r} has {len(self.samples)} samples; need >= {MIN_SAMPLES}")


def _parse_chunks(data, path):
    """Yield (chunk id, payload bytes) from a RIFF body, checking sizes."""
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise CorruptFile(f"{path}: chunk {cid!r} claims {size} bytes past end of file")
        yield cid, data[body_start:body_start + size]
        pos = body_start + size + (size & 1)  # chunks are word-aligned


def load_wav(path):
    """Read a RIFF/WAVE file into an AudioClip scaled to [-1, 1].

    Raises UnsupportedFormat for anything that is not mono 16 kHz
    PCM16/float32, CorruptFile for structural damage.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body in _parse_chunks(data, path):
        if cid == b"fmt " and fmt is None:
            if len(body) < 16:
                raise CorruptFile(f"{path}: fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data" and payload is None:
            payload = body
    if fmt is None or payload is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels; mono required")
    if sample_rate != EXPECTED_SAMPLE_RATE:
        raise UnsupportedFormat(
            f"{path}: {sample_rate} Hz; {EXPECTED_SAMPLE_RATE} Hz required (no resampling)")
    if (audio_format, bits) == (_FMT_PCM, 16):
        if len(payload) % 2:
            raise CorruptFile(f"{path}: odd PCM16 data size")
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif (audio_format, bits) == (_FMT_IEEE_FLOAT, 32):
        if len(payload) % 4:
            raise CorruptFile(f"{path}: float32 data size not a multiple of 4")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: format tag {audio_format} / {bits}-bit; PCM16 or IEEE float32 required")

    return AudioClip(samples=samples, sample_rate=sample_rate, clip_id=path.stem)


def write_wav_pcm16(path, samples, sample_rate=EXPECTED_SAMPLE_RATE):
    """Write mono PCM16; values are clipped to [-1, 1] before quantizing."""
    samples = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.rint(samples * 32767.0), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(body)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(struct.pack("<IHHIIHH", 16, _FMT_PCM, 1, sample_rate,
                            sample_rate * 2, 2, 16))
        f.write(b"data")
        f.write(struct.pack("<I", len(body)))
        f.write(body)
