"""WAV reading/writing. In memory, audio is float (channels, samples)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 of shape (channels, samples)."""
    rate, data = wavfile.read(str(path))
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        audio = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        audio = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        audio = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    if audio.ndim == 1:
        audio = audio[None, :]
    else:
        audio = audio.T
    return np.ascontiguousarray(audio), rate


def write_wav(path, audio, rate: int = SAMPLE_RATE, fmt: str = "float32") -> None:
    """Write (channels, samples) or (samples,) audio.

    ``fmt`` is ``"float32"`` or ``"pcm16"``; PCM output is clipped to [-1, 1).
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 2:
        audio = audio.T
    if fmt == "float32":
        data = audio.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(audio * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), rate, np.ascontiguousarray(data))
