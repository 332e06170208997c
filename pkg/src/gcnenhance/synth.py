"""Synthetic speech-like and noise corpora for fixtures and demos.

Speech is a sequence of formant-filtered harmonic syllables with aspiration,
fricative bursts and occasional pauses. Syllables are joined into word-like
runs, so envelopes dip at syllable rate without falling silent after every
syllable; this gives the band-limited modulation structure that STOI and the
enhancement network respond to. Noise clips are pink,
white, babble-like or hum. Nothing here is meant to replace real corpora.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt
from scipy.signal.windows import tukey

from .audio_io import write_wav

NOISE_KINDS = ("pink", "white", "babble", "hum")
# (formant range in Hz, relative gain)
FORMANTS = (((300, 800), 1.0), ((900, 2300), 0.8), ((2400, 3200), 0.6), ((3300, 4500), 0.5))


def _resonator(x: np.ndarray, freq: float, bw: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1 - r], a, x)


def speech_like(seconds: float, fs: int = 16000, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng or np.random.default_rng()
    n = int(seconds * fs)
    out = np.zeros(n)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    while pos < n:
        dur = int(rng.uniform(0.12, 0.32) * fs)
        stop = min(pos + dur, n)
        t = np.arange(stop - pos) / fs
        f0 = rng.uniform(95, 230) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        src = sum(np.sin(k * phase) / k for k in range(1, int(5000 / f0.max()) + 1))
        src = src + 0.1 * np.std(src) * rng.standard_normal(len(t))
        voiced = sum(
            gain * _resonator(src, rng.uniform(*band), rng.uniform(80, 250), fs)
            for band, gain in FORMANTS
        )
        seg = voiced * tukey(len(t), 0.35)
        if rng.random() < 0.4:
            burst = int(min(len(t), rng.uniform(0.04, 0.1) * fs))
            sos = butter(4, rng.uniform(2500, 4500), "highpass", fs=fs, output="sos")
            fric = sosfilt(sos, rng.standard_normal(burst)) * np.hanning(burst)
            seg[:burst] += 0.5 * fric * np.std(seg) / (np.std(fric) + 1e-12)
        out[pos:stop] += seg
        # most syllables run straight into the next one; about a third end a word
        pause = rng.uniform(0.08, 0.25) if rng.random() < 0.3 else 0.02
        pos = stop + int(pause * fs)
    peak = np.max(np.abs(out))
    return 0.5 * out / peak if peak > 0 else out


def noise_clip(kind: str, seconds: float, fs: int = 16000, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng or np.random.default_rng()
    n = int(seconds * fs)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(len(spec))
        spec[1:] /= np.sqrt(f[1:])
        x = np.fft.irfft(spec, n)
    elif kind == "babble":
        x = sum(speech_like(seconds, fs, rng) for _ in range(4))
    elif kind == "hum":
        t = np.arange(n) / fs
        base = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * k * base * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 8))
        x = x + 0.3 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return 0.3 * x / np.max(np.abs(x))


def write_corpus(out_dir, n_speech: int = 8, n_noise: int = 4, seconds: float = 5.0,
                 fs: int = 16000, seed: int = 0) -> tuple[Path, Path]:
    """Write ``speech/`` and ``noise/`` WAV directories under ``out_dir``."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    speech_dir, noise_dir = out_dir / "speech", out_dir / "noise"
    for i in range(n_speech):
        write_wav(speech_dir / f"utt{i:03d}.wav", speech_like(seconds, fs, rng), fs, "pcm16")
    for i in range(n_noise):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        write_wav(noise_dir / f"{kind}{i:03d}.wav", noise_clip(kind, seconds, fs, rng), fs, "pcm16")
    return speech_dir, noise_dir
