"""Simulated reverberant multi-channel mixtures.

Rooms are shoebox rooms with uniform wall absorption; impulse responses come
from the image-source method with nearest-sample delays. One speech source
and M - 1 noise sources are placed at random, their images at every
microphone are summed with a single global noise gain chosen so that the
reference microphone sees the requested SNR.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .audio_io import AudioFormatError, read_wav, write_wav

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
GEOMETRIES = ("linear", "circular", "distributed")
SNR_LEVELS = (-7.5, -5.0, 0.0, 5.0, 7.5)
SPLIT_ROOMS = {
    "train": ((3.0, 3.0, 2.0), (5.0, 4.0, 6.0), (8.0, 9.0, 10.0)),
    "dev": ((5.0, 8.0, 3.0), (4.0, 7.0, 8.0)),
    "test": ((4.0, 5.0, 3.0), (6.0, 8.0, 5.0)),
}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple[float, float, float]
    rt60: float = 0.5
    split: str = "train"

    @property
    def volume(self) -> float:
        x, y, z = self.dims
        return x * y * z

    @property
    def surface(self) -> float:
        x, y, z = self.dims
        return 2 * (x * y + x * z + y * z)

    def absorption(self, model: str = "calibrated") -> float:
        """Uniform wall absorption coefficient that yields ``rt60``.

        ``"sabine"``: T = 0.161 V / (S a); ``"eyring"``: T = 0.161 V / (-S ln(1 - a)).
        ``"calibrated"`` starts from Eyring and rescales the per-reflection
        attenuation until the Schroeder decay of a probe RIR matches ``rt60``;
        the closed forms assume a diffuse field and overestimate decay rates
        of image-source responses in elongated rooms.
        """
        k = 24 * math.log(10) / SPEED_OF_SOUND * self.volume / (self.surface * self.rt60)
        if model == "sabine":
            alpha = k
        elif model == "eyring":
            alpha = 1 - math.exp(-k)
        elif model == "calibrated":
            alpha = _calibrated_absorption(tuple(float(v) for v in self.dims), float(self.rt60))
        else:
            raise ValueError(f"unknown absorption model {model!r}")
        if not 0 < alpha <= 1:
            raise GeometryError(f"rt60={self.rt60}s is not reachable in a {self.dims} room")
        return alpha

    def contains(self, pos, margin: float = 0.0) -> bool:
        pos = np.asarray(pos, dtype=float)
        return bool(np.all(pos >= margin) and np.all(pos <= np.asarray(self.dims) - margin))


@dataclass(frozen=True)
class ArraySpec:
    geometry: str = "linear"
    n_mics: int = 4
    spacing: float = 0.05
    radius: float = 0.1

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.n_mics < 1:
            raise ValueError("n_mics must be >= 1")


@dataclass
class SceneSpec:
    room: RoomSpec
    array: ArraySpec
    mic_positions: np.ndarray
    speech_position: np.ndarray
    noise_positions: np.ndarray
    snr_db: float
    speech_id: str = ""
    noise_ids: list[str] = field(default_factory=list)
    seed: int = 0


@dataclass
class MixtureExample:
    noisy: np.ndarray  # (M, L)
    clean_ref: np.ndarray  # (L,)
    scene: SceneSpec
    speech_image: np.ndarray  # (M, L), scaled like ``noisy``
    noise_image: np.ndarray  # (M, L), already multiplied by the SNR gain


def place_array(spec: ArraySpec, room: RoomSpec, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    """Microphone coordinates, shape (M, 3)."""
    dims = np.asarray(room.dims, dtype=float)
    lo, hi = margin, dims - margin
    if np.any(hi <= lo):
        raise GeometryError(f"room {room.dims} is too small for a {margin} m wall margin")
    m = spec.n_mics
    height = rng.uniform(lo, hi[2])
    if spec.geometry == "linear":
        length = (m - 1) * spec.spacing
        axis = int(rng.integers(2))
        other = 1 - axis
        if length > hi[axis] - lo:
            raise GeometryError(f"linear array of length {length:.3f} m does not fit in room {room.dims}")
        start = rng.uniform(lo, hi[axis] - length)
        pos = np.empty((m, 3))
        pos[:, axis] = start + spec.spacing * np.arange(m)
        pos[:, other] = rng.uniform(lo, hi[other])
        pos[:, 2] = height
    elif spec.geometry == "circular":
        r = spec.radius
        if 2 * r > min(hi[0], hi[1]) - lo:
            raise GeometryError(f"circular array of radius {r} m does not fit in room {room.dims}")
        center = rng.uniform(lo + r, hi[:2] - r)
        phase = rng.uniform(0, 2 * np.pi)
        angles = phase + 2 * np.pi * np.arange(m) / m
        pos = np.stack(
            [center[0] + r * np.cos(angles), center[1] + r * np.sin(angles), np.full(m, height)], axis=1
        )
    else:
        pos = rng.uniform(lo, hi, size=(m, 3))
    if m > 1:
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.min(d[~np.eye(m, dtype=bool)]) <= 0:
            raise GeometryError("microphone positions are not distinct")
    return pos


def place_sources(
    room: RoomSpec,
    mics: np.ndarray,
    count: int,
    rng: np.random.Generator,
    min_distance: float = 0.5,
    margin: float = 0.1,
    max_tries: int = 10000,
) -> np.ndarray:
    dims = np.asarray(room.dims, dtype=float)
    out = []
    for _ in range(count):
        for _ in range(max_tries):
            p = rng.uniform(margin, dims - margin)
            if np.min(np.linalg.norm(mics - p, axis=1)) >= min_distance:
                out.append(p)
                break
        else:
            raise GeometryError(
                f"could not place a source {min_distance} m away from all microphones in room {room.dims}"
            )
    return np.array(out).reshape(count, 3)


@functools.lru_cache(maxsize=16)
def _image_lattice(dims: tuple[float, float, float], max_dist: float):
    """Image offsets, mirror signs and reflection counts for a shoebox room.

    Image k of source s sits at ``signs[k] * s + offsets[k]`` and has been
    reflected ``orders[k]`` times.
    """
    L = np.asarray(dims)
    reach = np.ceil(max_dist / (2 * L)).astype(int) + 1
    axes = []
    for a in range(3):
        n = np.arange(-reach[a], reach[a] + 1)
        q = np.array([0, 1])
        nn_, qq = np.meshgrid(n, q, indexing="ij")
        nn_, qq = nn_.ravel(), qq.ravel()
        axes.append((2 * nn_ * L[a], 1 - 2 * qq, np.abs(nn_ - qq) + np.abs(nn_)))
    (ox, sx, rx), (oy, sy, ry), (oz, sz, rz) = axes
    # prune lattice cells that cannot come within max_dist of any point in the room
    bound = max_dist + 2 * float(np.linalg.norm(L))
    keep_x, keep_y, keep_z = (np.abs(o) <= bound for o in (ox, oy, oz))
    ox, sx, rx = ox[keep_x], sx[keep_x], rx[keep_x]
    oy, sy, ry = oy[keep_y], sy[keep_y], ry[keep_y]
    oz, sz, rz = oz[keep_z], sz[keep_z], rz[keep_z]
    ix, iy, iz = np.meshgrid(np.arange(len(ox)), np.arange(len(oy)), np.arange(len(oz)), indexing="ij")
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()
    near = ox[ix] ** 2 + oy[iy] ** 2 + oz[iz] ** 2 <= bound**2
    ix, iy, iz = ix[near], iy[near], iz[near]
    offsets = np.stack([ox[ix], oy[iy], oz[iz]], axis=1)
    signs = np.stack([sx[ix], sy[iy], sz[iz]], axis=1).astype(np.float64)
    orders = (rx[ix] + ry[iy] + rz[iz]).astype(np.int64)
    for arr in (offsets, signs, orders):
        arr.setflags(write=False)
    return offsets, signs, orders


def simulate_rir(
    room: RoomSpec,
    src,
    mic,
    fs: int = 16000,
    length: int | None = None,
    absorption: float | None = None,
    absorption_model: str = "calibrated",
    margin: float = 0.0,
) -> np.ndarray:
    """Image-source room impulse response(s).

    Args:
        room: shoebox room.
        src: source position (3,).
        mic: microphone position (3,) or positions (K, 3).
        fs: sample rate.
        length: RIR length in samples; defaults to ``ceil(rt60 * fs)``.
        absorption: wall absorption in (0, 1]; derived from ``room.rt60`` when None.
            1.0 gives the free-field (direct path only) response.

    Returns:
        (length,) or (K, length) array. Each image contributes
        ``beta**order / (4 pi d)`` at sample ``round(d / c * fs)``.
    """
    src = np.asarray(src, dtype=float)
    mics = np.atleast_2d(np.asarray(mic, dtype=float))
    if not room.contains(src, margin) or not all(room.contains(m, margin) for m in mics):
        raise GeometryError("source and microphones must lie inside the room")
    if np.any(np.linalg.norm(mics - src, axis=1) == 0):
        raise GeometryError("source and microphone coincide")
    if absorption is None:
        absorption = room.absorption(absorption_model)
    if not 0 < absorption <= 1:
        raise ValueError(f"absorption must be in (0, 1], got {absorption}")
    beta = math.sqrt(1 - absorption)
    n = int(math.ceil(room.rt60 * fs)) if length is None else int(length)
    max_dist = n / fs * SPEED_OF_SOUND

    if beta == 0:
        d = np.linalg.norm(mics - src, axis=1)
        out = np.zeros((len(mics), n))
        idx = np.rint(d / SPEED_OF_SOUND * fs).astype(int)
        ok = idx < n
        out[np.arange(len(mics))[ok], idx[ok]] = 1 / (4 * np.pi * d[ok])
        return out[0] if np.ndim(mic) == 1 else out

    offsets, signs, orders = _image_lattice(tuple(float(v) for v in room.dims), round(max_dist, 6))
    images = signs * src + offsets
    gains = beta ** orders.astype(float)
    out = np.zeros((len(mics), n))
    for k, m in enumerate(mics):
        d = np.sqrt(((images - m) ** 2).sum(axis=1))
        idx = np.rint(d * (fs / SPEED_OF_SOUND)).astype(np.int64)
        sel = idx < n
        out[k] = np.bincount(idx[sel], weights=gains[sel] / (4 * np.pi * d[sel]), minlength=n)[:n]
    return out[0] if np.ndim(mic) == 1 else out


@functools.lru_cache(maxsize=64)
def _calibrated_absorption(dims: tuple[float, float, float], rt60: float, fs: int = 16000) -> float:
    room = RoomSpec(dims, rt60)
    d = np.asarray(dims)
    src, mic = d * np.array([0.3, 0.35, 0.4]), d * np.array([0.65, 0.6, 0.55])
    # attenuation per reflection in nepers of energy; decay time scales ~ 1 / atten
    atten = -math.log(1 - room.absorption("eyring"))
    for _ in range(8):
        alpha = 1 - math.exp(-atten)
        if alpha >= 1:
            return 1.0
        measured = schroeder_rt60(simulate_rir(room, src, mic, fs, absorption=alpha), fs)
        if abs(measured - rt60) <= 0.005 * rt60:
            break
        atten *= measured / rt60
    return 1 - math.exp(-atten)


def schroeder_rt60(rir: np.ndarray, fs: int = 16000, start_db: float = -5.0, stop_db: float = -35.0) -> float:
    """Reverberation time from the Schroeder backward-integrated decay curve.

    A line is fit to the energy decay curve between ``start_db`` and
    ``stop_db`` and extrapolated to -60 dB.
    """
    energy = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    if energy[0] <= 0:
        raise ValueError("impulse response has no energy")
    edc = 10 * np.log10(np.maximum(energy / energy[0], 1e-300))
    i0 = int(np.argmax(edc <= start_db))
    below = edc <= stop_db
    if not below.any():
        raise ValueError(f"decay curve never reaches {stop_db} dB")
    i1 = int(np.argmax(below))
    t = np.arange(i0, i1 + 1) / fs
    slope, _ = np.polyfit(t, edc[i0: i1 + 1], 1)
    return float(-60.0 / slope)


def snr_db(speech: np.ndarray, noise: np.ndarray) -> float:
    return float(10 * np.log10(np.mean(speech**2) / np.mean(noise**2)))


def mix_at_snr(
    speech_images: np.ndarray,
    noise_images: Sequence[np.ndarray],
    snr: float,
    ref_channel: int = 0,
) -> tuple[np.ndarray, float]:
    """Mix speech with the summed noise using one global noise gain.

    Returns the (M, L) mixture and the gain applied to the noise. ``snr=inf``
    disables the noise.
    """
    speech_images = np.asarray(speech_images, dtype=float)
    if math.isinf(snr) and snr > 0:
        return speech_images.copy(), 0.0
    if not noise_images:
        raise ValueError("no noise images given")
    noise = np.sum([np.asarray(n, dtype=float) for n in noise_images], axis=0)
    if noise.shape != speech_images.shape:
        raise ValueError(f"noise shape {noise.shape} does not match speech shape {speech_images.shape}")
    p_speech = np.mean(speech_images[ref_channel] ** 2)
    p_noise = np.mean(noise[ref_channel] ** 2)
    if p_speech == 0:
        raise ValueError("speech is silent at the reference microphone")
    if p_noise == 0:
        raise ValueError("noise is silent at the reference microphone")
    gain = math.sqrt(p_speech / (p_noise * 10 ** (snr / 10)))
    return speech_images + gain * noise, gain


def fit_length(signal: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Loop or truncate ``signal`` to ``length`` samples from a random offset."""
    offset = int(rng.integers(len(signal)))
    return np.take(signal, (offset + np.arange(length)) % len(signal))


def simulate_example(
    speech: np.ndarray,
    noises: Sequence[np.ndarray],
    room: RoomSpec,
    array: ArraySpec,
    snr: float,
    rng: np.random.Generator,
    fs: int = 16000,
    ref_channel: int = 0,
    clean_target: str = "direct",
    wall_margin: float = 0.1,
    min_source_distance: float = 0.5,
    absorption_model: str = "calibrated",
    peak: float | None = 0.9,
) -> MixtureExample:
    """Render one scene.

    ``noises`` must hold exactly M - 1 dry noise clips (any lengths). The
    clean target is the direct-path image of the speech at the reference
    microphone (``clean_target="direct"``) or its full reverberant image
    (``"reverberant"``). With ``peak`` set, all outputs are scaled by one
    common factor so that the noisy peak equals ``peak``.
    """
    m = array.n_mics
    if len(noises) != m - 1:
        raise ValueError(f"{m} microphones need {m - 1} noise clips, got {len(noises)}")
    length = len(speech)
    mics = place_array(array, room, rng, wall_margin)
    sources = place_sources(room, mics, m, rng, min_source_distance, wall_margin)
    clips = [fit_length(np.asarray(n, dtype=float), length, rng) for n in noises]

    def image(dry, src):
        rirs = simulate_rir(room, src, mics, fs, absorption_model=absorption_model)
        return np.stack([fftconvolve(dry, h)[:length] for h in rirs])

    speech_img = image(speech, sources[0])
    noise_imgs = [image(c, s) for c, s in zip(clips, sources[1:])]
    if noise_imgs:
        noisy, gain = mix_at_snr(speech_img, noise_imgs, snr, ref_channel)
        noise_img = gain * np.sum(noise_imgs, axis=0)
    else:
        noisy, noise_img = speech_img.copy(), np.zeros_like(speech_img)
    if clean_target == "direct":
        h = simulate_rir(room, sources[0], mics[ref_channel], fs, absorption=1.0)
        clean = fftconvolve(speech, h)[:length]
    elif clean_target == "reverberant":
        clean = speech_img[ref_channel].copy()
    else:
        raise ValueError(f"unknown clean_target {clean_target!r}")

    if peak is not None:
        top = np.max(np.abs(noisy))
        if top > 0:
            scale = peak / top
            noisy, clean = noisy * scale, clean * scale
            speech_img, noise_img = speech_img * scale, noise_img * scale

    scene = SceneSpec(room, array, mics, sources[0], sources[1:], snr)
    return MixtureExample(noisy, clean, scene, speech_img, noise_img)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class SimConfig:
    num_examples: int = 100
    splits: tuple[str, ...] = ("train", "dev", "test")
    geometries: tuple[str, ...] = GEOMETRIES
    mic_counts: tuple[int, ...] = (2, 4)
    snr_levels: tuple[float, ...] = SNR_LEVELS
    rt60: float = 0.5
    utterance_seconds: float = 0.0
    mic_spacing: float = 0.05
    array_radius: float = 0.1
    wall_margin: float = 0.1
    min_source_distance: float = 0.5
    clean_target: str = "direct"
    absorption_model: str = "calibrated"
    room_dims: tuple[tuple[float, float, float], ...] = ()
    ref_channel: int = 0
    sample_rate: int = 16000
    wav_format: str = "float32"
    seed: int = 0
    workers: int = 1

    def rooms_for(self, split: str) -> tuple[tuple[float, float, float], ...]:
        if self.room_dims:
            return self.room_dims
        if split not in SPLIT_ROOMS:
            raise ValueError(f"unknown split {split!r}")
        return SPLIT_ROOMS[split]


def list_corpus(directory, sample_rate: int = 16000) -> list[Path]:
    """Sorted WAV files under ``directory``; every file must be at ``sample_rate``."""
    root = Path(directory)
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() == ".wav")
    if not files:
        raise ValueError(f"corpus {root} contains no .wav files")
    for f in files:
        rate, _ = wavfile.read(str(f), mmap=True)
        if rate != sample_rate:
            raise AudioFormatError(f"{f}: sample rate {rate} Hz, expected {sample_rate} Hz")
    return files


def example_seed(base: int, split: str, index: int) -> int:
    split_key = int.from_bytes(hashlib.sha256(split.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([base, split_key, index]).generate_state(1)[0])


def _load_mono(path: Path, fs: int) -> np.ndarray:
    audio, _ = read_wav(path, fs)
    return audio.mean(axis=0)


def _render_one(job) -> dict:
    cfg, split, index, speech_files, noise_files, out_dir = job
    seed = example_seed(cfg.seed, split, index)
    rng = np.random.default_rng(seed)
    dims = cfg.rooms_for(split)
    room = RoomSpec(tuple(dims[int(rng.integers(len(dims)))]), cfg.rt60, split)
    geometry = cfg.geometries[int(rng.integers(len(cfg.geometries)))]
    m = int(cfg.mic_counts[int(rng.integers(len(cfg.mic_counts)))])
    array = ArraySpec(geometry, m, cfg.mic_spacing, cfg.array_radius)
    snr = float(cfg.snr_levels[int(rng.integers(len(cfg.snr_levels)))])

    speech_path = speech_files[int(rng.integers(len(speech_files)))]
    speech = _load_mono(speech_path, cfg.sample_rate)
    if cfg.utterance_seconds > 0:
        want = int(round(cfg.utterance_seconds * cfg.sample_rate))
        if len(speech) > want:
            start = int(rng.integers(len(speech) - want + 1))
            speech = speech[start: start + want]
    noise_paths = [noise_files[int(rng.integers(len(noise_files)))] for _ in range(m - 1)]
    noises = [_load_mono(p, cfg.sample_rate) for p in noise_paths]

    ex = simulate_example(
        speech, noises, room, array, snr, rng, cfg.sample_rate, cfg.ref_channel,
        cfg.clean_target, cfg.wall_margin, cfg.min_source_distance, cfg.absorption_model,
    )
    example_id = f"{split}_{index:06d}"
    noisy_rel = Path("noisy") / f"{example_id}.wav"
    clean_rel = Path("clean") / f"{example_id}.wav"
    write_wav(out_dir / noisy_rel, ex.noisy, cfg.sample_rate, cfg.wav_format)
    write_wav(out_dir / clean_rel, ex.clean_ref, cfg.sample_rate, cfg.wav_format)
    return {
        "example_id": example_id,
        "noisy_path": str(noisy_rel),
        "clean_path": str(clean_rel),
        "M": m,
        "geometry": geometry,
        "room_dims": list(room.dims),
        "rt60": cfg.rt60,
        "snr_db": snr,
        "ref_channel": cfg.ref_channel,
        "seed": seed,
    }


def generate_dataset(cfg: SimConfig, speech_dir, noise_dir, out_dir) -> dict[str, Path]:
    """Render ``cfg.num_examples`` examples per split.

    Writes ``<out>/<split>/{noisy,clean}/*.wav`` and ``<out>/<split>/manifest.jsonl``;
    manifest paths are relative to the manifest's directory. Returns the
    manifest path per split.
    """
    speech_files = list_corpus(speech_dir, cfg.sample_rate)
    noise_files = list_corpus(noise_dir, cfg.sample_rate) if max(cfg.mic_counts) > 1 else []
    out_dir = Path(out_dir)
    manifests = {}
    for split in cfg.splits:
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(cfg, split, i, speech_files, noise_files, split_dir) for i in range(cfg.num_examples)]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                rows = list(pool.map(_render_one, jobs))
        else:
            rows = [_render_one(job) for job in jobs]
        path = split_dir / "manifest.jsonl"
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        logger.info("wrote %d examples to %s", len(rows), path)
        manifests[split] = path
    return manifests


def read_manifest(path) -> list[dict]:
    """Load a manifest, resolving relative audio paths against its directory."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("noisy_path", "clean_path"):
                p = Path(row[key])
                row[key] = str(p if p.is_absolute() else path.parent / p)
            rows.append(row)
    return rows
