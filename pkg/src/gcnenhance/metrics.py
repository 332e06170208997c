"""Objective metrics: SDR, STOI and an external PESQ hook, plus report tables."""

from __future__ import annotations

import json
import logging
import math
import re
import shlex
import subprocess
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .audio_io import write_wav

logger = logging.getLogger(__name__)

SDR_CAP_DB = 60.0

# STOI constants (Taal et al., 2011)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0

METRICS = ("stoi", "pesq", "sdr")


def sdr(est, ref) -> float:
    """Single-target BSS-eval SDR in dB with a gain allowance, capped at +60 dB."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference signal has zero energy")
    target = (np.dot(est, ref) / ref_energy) * ref
    err = est - target
    num, den = np.dot(target, target), np.dot(err, err)
    if num == 0:
        return -SDR_CAP_DB
    if den == 0 or num / den >= 10 ** (SDR_CAP_DB / 10):
        return SDR_CAP_DB
    return float(max(10 * np.log10(num / den), -SDR_CAP_DB))


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x: np.ndarray) -> np.ndarray:
    hop = STOI_FRAME // 2
    n = (len(x) - STOI_FRAME) // hop + 1
    idx = np.arange(STOI_FRAME)[None, :] + hop * np.arange(max(n, 0))[:, None]
    return x[idx] * _stoi_window()


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames of ``x`` more than 40 dB below its loudest frame (same frames from ``y``)."""
    hop = STOI_FRAME // 2
    xf, yf = _frames(x), _frames(y)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = energy > energy.max() - STOI_DYN_RANGE
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    length = (n - 1) * hop + STOI_FRAME if n else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(n):
        xs[i * hop: i * hop + STOI_FRAME] += xf[i]
        ys[i * hop: i * hop + STOI_FRAME] += yf[i]
    return xs, ys


def third_octave_bands(fs: int = STOI_FS, nfft: int = STOI_NFFT, num_bands: int = STOI_BANDS,
                       min_freq: float = STOI_MIN_FREQ) -> tuple[np.ndarray, np.ndarray]:
    """One-third octave band matrix (bands x bins) and the band center frequencies."""
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    centers = min_freq * 2.0 ** (k / 3)
    lows = min_freq * 2.0 ** ((2 * k - 1) / 6)
    highs = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(freqs)))
    for i in range(num_bands):
        lo = int(np.argmin((freqs - lows[i]) ** 2))
        hi = int(np.argmin((freqs - highs[i]) ** 2))
        obm[i, lo:hi] = 1
    return obm, centers


def stoi(est, ref, fs: int = 16000) -> float:
    """Short-time objective intelligibility of ``est`` given clean ``ref``.

    Signals are resampled to 10 kHz, silent frames (relative to ``ref``) are
    removed, and 384 ms envelope segments in 15 one-third octave bands are
    compared by clipped, normalized correlation.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    if fs != STOI_FS:
        g = math.gcd(STOI_FS, fs)
        ref = resample_poly(ref, STOI_FS // g, fs // g)
        est = resample_poly(est, STOI_FS // g, fs // g)
    ref, est = _remove_silent_frames(ref, est)

    spec_ref = np.fft.rfft(_frames(ref), n=STOI_NFFT).T
    spec_est = np.fft.rfft(_frames(est), n=STOI_NFFT).T
    if spec_ref.shape[1] < STOI_SEGMENT:
        raise ValueError(
            f"not enough active speech for STOI: {spec_ref.shape[1]} frames, need {STOI_SEGMENT} (384 ms)"
        )
    obm, _ = third_octave_bands()
    x_bands = np.sqrt(obm @ np.abs(spec_ref) ** 2)
    y_bands = np.sqrt(obm @ np.abs(spec_est) ** 2)

    n_seg = x_bands.shape[1] - STOI_SEGMENT + 1
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(n_seg)[:, None]
    x_seg = x_bands[:, idx].transpose(1, 0, 2)  # (segments, bands, N)
    y_seg = y_bands[:, idx].transpose(1, 0, 2)
    eps = np.finfo(float).eps
    scale = np.linalg.norm(x_seg, axis=2, keepdims=True) / (np.linalg.norm(y_seg, axis=2, keepdims=True) + eps)
    y_norm = y_seg * scale
    clip = 10 ** (-STOI_BETA / 20)
    y_prime = np.minimum(y_norm, x_seg * (1 + clip))
    x_c = x_seg - x_seg.mean(axis=2, keepdims=True)
    y_c = y_prime - y_prime.mean(axis=2, keepdims=True)
    x_c /= np.linalg.norm(x_c, axis=2, keepdims=True) + eps
    y_c /= np.linalg.norm(y_c, axis=2, keepdims=True) + eps
    return float(np.mean(np.sum(x_c * y_c, axis=2)))


_FLOAT = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def pesq_hook(est, ref, fs: int = 16000, command: str | None = None, timeout: float = 120.0) -> float | None:
    """PESQ via an external tool, or None.

    ``command`` is a shell-style command line; ``{ref}`` and ``{deg}`` are
    replaced with temporary WAV paths (appended in that order when absent).
    The last number printed on stdout is taken as the score. Failures are
    logged and yield None.
    """
    if not command:
        logger.warning("PESQ requested but no pesq_cmd configured; reporting it as absent")
        return None
    with tempfile.TemporaryDirectory() as tmp:
        ref_path, deg_path = Path(tmp) / "ref.wav", Path(tmp) / "deg.wav"
        write_wav(ref_path, np.asarray(ref), fs, "pcm16")
        write_wav(deg_path, np.asarray(est), fs, "pcm16")
        if "{ref}" in command or "{deg}" in command:
            argv = [a.format(ref=ref_path, deg=deg_path) for a in shlex.split(command)]
        else:
            argv = shlex.split(command) + [str(ref_path), str(deg_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, check=True)
        except (OSError, subprocess.SubprocessError) as exc:
            logger.warning("PESQ tool failed: %s", exc)
            return None
    numbers = _FLOAT.findall(proc.stdout)
    if not numbers:
        logger.warning("PESQ tool printed no score: %r", proc.stdout[-200:])
        return None
    return float(numbers[-1])


def compute_metrics(est, ref, fs: int = 16000, metrics=METRICS, pesq_cmd: str | None = None) -> dict:
    out = {}
    if "stoi" in metrics:
        out["stoi"] = stoi(est, ref, fs)
    if "pesq" in metrics:
        score = pesq_hook(est, ref, fs, pesq_cmd) if pesq_cmd else None
        if score is not None:
            out["pesq"] = score
    if "sdr" in metrics:
        out["sdr"] = sdr(est, ref)
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    """Per-example metric rows plus condition means.

    Each row carries ``example_id``, ``geometry``, ``M``, ``snr_db`` and the
    dicts ``noisy`` and ``enhanced`` of metric values.
    """

    rows: list[dict] = field(default_factory=list)

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def aggregate(self, keys=("geometry", "M", "snr_db")) -> list[dict]:
        groups: dict[tuple, list[dict]] = defaultdict(list)
        for row in self.rows:
            groups[tuple(row[k] for k in keys)].append(row)
        out = []
        for key in sorted(groups, key=lambda k: tuple(str(v) if isinstance(v, str) else v for v in k)):
            rows = groups[key]
            entry = dict(zip(keys, key))
            entry["count"] = len(rows)
            for kind in ("noisy", "enhanced"):
                entry[kind] = _means([r[kind] for r in rows])
            out.append(entry)
        return out

    def write(self, out_dir, figures: bool = True) -> dict[str, Path]:
        """Write ``report.jsonl``, ``summary.jsonl`` and ``report.txt`` into ``out_dir``.

        With ``figures`` a metric-versus-input-SNR plot is added as ``snr_trend.png``.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out_dir / "report.jsonl",
            "summary": out_dir / "summary.jsonl",
            "table": out_dir / "report.txt",
        }
        with open(paths["report"], "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")
        with open(paths["summary"], "w") as fh:
            for entry in self.aggregate():
                fh.write(json.dumps(entry) + "\n")
        paths["table"].write_text(render_geometry_table(self) + "\n\n" + render_snr_table(self) + "\n")
        if figures and self.rows:
            from .plotting import snr_trend

            paths["figure"] = snr_trend(self.aggregate(("snr_db",)), out_dir / "snr_trend.png")
        return paths


def _means(dicts: list[dict]) -> dict:
    keys = [m for m in METRICS if any(m in d for d in dicts)]
    out = {}
    for k in keys:
        vals = [d[k] for d in dicts if k in d]
        out[k] = float(sum(vals) / len(vals))
    return out


def _fmt(v) -> str:
    return "--" if v is None else f"{v:.2f}"


def _grid(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "-" * len(line(header))
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def render_geometry_table(report: MetricReport) -> str:
    """Method x #mics rows, geometry x (STOI, PESQ, SDR) columns."""
    agg = report.aggregate(("geometry", "M"))
    geometries = sorted({a["geometry"] for a in agg})
    mics = sorted({a["M"] for a in agg})
    lookup = {(a["geometry"], a["M"]): a for a in agg}
    header = ["Method", "#Mics"] + [f"{g[:4]}:{m.upper()}" for g in geometries for m in METRICS]
    rows = []
    for kind, label in (("noisy", "Noisy"), ("enhanced", "Enhanced")):
        for m in mics:
            cells = [label, str(m)]
            for g in geometries:
                vals = lookup.get((g, m), {}).get(kind, {})
                cells += [_fmt(vals.get(k)) for k in METRICS]
            rows.append(cells)
    return _grid(header, rows)


def render_snr_table(report: MetricReport) -> str:
    """Method rows, input SNR x (STOI, PESQ, SDR) columns."""
    agg = report.aggregate(("snr_db",))
    header = ["Method"] + [f"{a['snr_db']:g}dB:{m.upper()}" for a in agg for m in METRICS]
    rows = []
    for kind, label in (("noisy", "Noisy"), ("enhanced", "Enhanced")):
        cells = [label]
        for a in agg:
            cells += [_fmt(a[kind].get(k)) for k in METRICS]
        rows.append(cells)
    return _grid(header, rows)


def evaluate_manifest(
    checkpoint,
    manifest,
    metrics=METRICS,
    pesq_cmd: str | None = None,
    force_identity_mask: bool = False,
    dump_adjacency=None,
    max_frames: int = 4096,
) -> MetricReport:
    """Enhance every manifest example and score noisy and enhanced signals.

    ``checkpoint`` is a path or an already-loaded model bundle from
    :func:`gcnenhance.checkpoint.load_checkpoint`. With ``force_identity_mask``
    the network is bypassed and the "enhanced" signal is the reference channel
    passed through STFT/iSTFT.
    """
    from .acoustics import read_manifest
    from .audio_io import read_wav
    from .checkpoint import ModelBundle, load_checkpoint
    from .inference import enhance_waveform, passthrough

    bundle = checkpoint if isinstance(checkpoint, ModelBundle) else load_checkpoint(checkpoint)
    rows = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    report = MetricReport()
    if dump_adjacency:
        Path(dump_adjacency).mkdir(parents=True, exist_ok=True)
    for row in rows:
        noisy, fs = read_wav(row["noisy_path"], bundle.stft.sample_rate)
        clean, _ = read_wav(row["clean_path"], bundle.stft.sample_rate)
        clean = clean[0]
        if noisy.shape[0] != bundle.n_mics:
            raise ValueError(
                f"{row['example_id']}: example has M={noisy.shape[0]} channels, checkpoint expects M={bundle.n_mics}"
            )
        ref = noisy[bundle.model.cfg.ref_channel]
        if force_identity_mask:
            enhanced, graph = passthrough(ref, bundle.stft), None
        else:
            enhanced, graph = enhance_waveform(bundle, noisy, max_frames=max_frames, return_graph=True)
        if dump_adjacency and graph is not None:
            np.savetxt(Path(dump_adjacency) / f"{row['example_id']}.txt", graph, fmt="%.6f")
        report.add({
            "example_id": row["example_id"],
            "geometry": row["geometry"],
            "M": int(row["M"]),
            "snr_db": float(row["snr_db"]),
            "noisy": compute_metrics(ref, clean, fs, metrics, pesq_cmd),
            "enhanced": compute_metrics(enhanced, clean, fs, metrics, pesq_cmd),
        })
    return report
