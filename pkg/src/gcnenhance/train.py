"""Training loop, checkpoint resume, ablation harness and file-level enhancement."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .acoustics import read_manifest
from .audio_io import read_wav, write_wav
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .inference import enhance_waveform
from .losses import LossVariant, loss_combined
from .model import GraphUNet, ModelConfig
from .signal import StftParams, istft, stack_reim, stft

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mag_raw"
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 20
    chunk_len: int = 128
    steps: int = 20000
    eval_every: int = 500
    checkpoint_every: int = 1000
    patience: int = 10
    grad_clip: float = 0.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        LossVariant(self.loss)


@dataclass
class Example:
    example_id: str
    noisy: np.ndarray  # (M, L) float32
    clean: np.ndarray  # (L,) float32


def load_examples(manifest, sample_rate: int = 16000) -> list[Example]:
    rows = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    out = []
    for row in rows:
        noisy, _ = read_wav(row["noisy_path"], sample_rate)
        clean, _ = read_wav(row["clean_path"], sample_rate)
        out.append(Example(row["example_id"], noisy.astype(np.float32), clean[0].astype(np.float32)))
    return out


def _crop(x: np.ndarray, start: int, length: int) -> np.ndarray:
    seg = x[..., start: start + length]
    if seg.shape[-1] < length:
        pad = [(0, 0)] * (seg.ndim - 1) + [(0, length - seg.shape[-1])]
        seg = np.pad(seg, pad)
    return seg


class Trainer:
    """Owns the model, the Adam state and the batch sampler.

    Batches are ``batch_size`` random crops of ``(chunk_len - 1) * hop``
    samples, which give exactly ``chunk_len`` STFT frames.
    """

    def __init__(
        self,
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        stft_params: StftParams,
        train_data: list[Example],
        dev_data: list[Example] | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        if not train_data:
            raise ValueError("training set is empty")
        mics = {ex.noisy.shape[0] for ex in train_data + list(dev_data or [])}
        if len(mics) != 1:
            raise ValueError(f"all examples must have the same number of microphones, found {sorted(mics)}")
        self.n_mics = mics.pop()
        need = model_cfg.min_input_size
        if cfg.chunk_len < need:
            raise ValueError(f"chunk_len={cfg.chunk_len} is below the encoder minimum of {need} frames")
        if stft_params.n_freq_bins < need:
            raise ValueError(f"{stft_params.n_freq_bins} frequency bins is below the encoder minimum of {need}")
        if model_cfg.ref_channel >= self.n_mics:
            raise ValueError(f"ref_channel={model_cfg.ref_channel} but examples have {self.n_mics} microphones")
        self.cfg = cfg
        self.stft = stft_params
        self.variant = LossVariant(cfg.loss)
        self.train_data = train_data
        self.dev_data = dev_data or []
        self.dtype = dtype
        torch.manual_seed(cfg.seed)
        self.model = GraphUNet(model_cfg).to(dtype)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
        )
        self.rng = np.random.default_rng(cfg.seed)
        self.step_count = 0
        self.best_dev = math.inf
        self.bad_evals = 0

    @property
    def crop_samples(self) -> int:
        return (self.cfg.chunk_len - 1) * self.stft.hop

    def sample_batch(self) -> tuple[torch.Tensor, torch.Tensor]:
        n = self.crop_samples
        noisy, clean = [], []
        for i in self.rng.integers(len(self.train_data), size=self.cfg.batch_size):
            ex = self.train_data[int(i)]
            length = ex.noisy.shape[-1]
            start = int(self.rng.integers(length - n + 1)) if length > n else 0
            noisy.append(_crop(ex.noisy, start, n))
            clean.append(_crop(ex.clean, start, n))
        return (torch.as_tensor(np.stack(noisy), dtype=self.dtype),
                torch.as_tensor(np.stack(clean), dtype=self.dtype))

    def compute_loss(self, noisy: torch.Tensor, clean: torch.Tensor) -> torch.Tensor:
        spec = stft(noisy, self.stft)
        pred, _ = self.model(stack_reim(spec), spec[:, self.model.cfg.ref_channel])
        target = stft(clean, self.stft)
        if self.variant.needs_waveform:
            pred_wave = istft(pred, self.stft, clean.shape[-1])
            return loss_combined(pred, target, self.variant, pred_wave, clean)
        return loss_combined(pred, target, self.variant)

    def train_step(self) -> float:
        self.model.train()
        self._check_parameters()
        noisy, clean = self.sample_batch()
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.compute_loss(noisy, clean)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {self.step_count + 1}")
        loss.backward()
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.step_count += 1
        self._check_parameters()
        return value

    def _check_parameters(self) -> None:
        for name, p in self.model.named_parameters():
            if not torch.isfinite(p).all():
                raise TrainingDiverged(f"non-finite parameter {name} after step {self.step_count}")

    @torch.no_grad()
    def dev_loss(self) -> float:
        """Mean loss over the first chunk of every dev example, in evaluation mode."""
        if not self.dev_data:
            return math.nan
        self.model.eval()
        n = self.crop_samples
        total, count = 0.0, 0
        bs = self.cfg.batch_size
        for i in range(0, len(self.dev_data), bs):
            batch = self.dev_data[i: i + bs]
            noisy = torch.as_tensor(np.stack([_crop(ex.noisy, 0, n) for ex in batch]), dtype=self.dtype)
            clean = torch.as_tensor(np.stack([_crop(ex.clean, 0, n) for ex in batch]), dtype=self.dtype)
            total += float(self.compute_loss(noisy, clean)) * len(batch)
            count += len(batch)
        self.model.train()
        return total / count

    def train_state(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "best_dev": None if math.isinf(self.best_dev) else self.best_dev,
            "bad_evals": self.bad_evals,
            "train_config": self.cfg.__dict__,
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.model, self.stft, self.n_mics, self.step_count,
                               self.optimizer, self.train_state())

    def resume(self, path) -> None:
        meta = restore_optimizer(path, self.model, self.optimizer)
        if meta["model_config"] != self.model.cfg.to_dict():
            raise ValueError(f"{path}: model configuration differs from the current run")
        state = meta.get("train_state") or {}
        self.step_count = int(meta["step"])
        if "rng" in state:
            self.rng.bit_generator.state = state["rng"]
        self.best_dev = math.inf if state.get("best_dev") is None else state["best_dev"]
        self.bad_evals = int(state.get("bad_evals", 0))


@dataclass
class TrainResult:
    out_dir: Path
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    dev: list[tuple[int, float]] = field(default_factory=list)
    last_checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    stopped_early: bool = False
    trainer: Trainer | None = None

    @property
    def checkpoint(self) -> Path:
        return self.best_checkpoint or self.last_checkpoint


def smoothed(values, window: int = 25) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    window = max(1, min(window, len(v)))
    return np.convolve(v, np.ones(window) / window, mode="valid")


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    stft_params: StftParams,
    train_manifest,
    dev_manifest=None,
    out_dir="run",
    resume=None,
    plot: bool = True,
) -> TrainResult:
    """Train a model; writes checkpoints, ``loss_log.csv`` and ``dev_log.csv`` to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(max(1, cfg.threads))
    train_data = load_examples(train_manifest, stft_params.sample_rate)
    dev_data = load_examples(dev_manifest, stft_params.sample_rate) if dev_manifest else []
    trainer = Trainer(model_cfg, cfg, stft_params, train_data, dev_data)
    if resume:
        trainer.resume(resume)
        logger.info("resumed from %s at step %d", resume, trainer.step_count)

    result = TrainResult(out_dir)
    log_path, dev_path = out_dir / "loss_log.csv", out_dir / "dev_log.csv"
    mode = "a" if resume and log_path.exists() else "w"
    t0 = time.perf_counter()
    with open(log_path, mode, newline="") as log_fh, open(dev_path, mode, newline="") as dev_fh:
        log, dev_log = csv.writer(log_fh), csv.writer(dev_fh)
        if mode == "w":
            log.writerow(["step", "loss", "wall_time"])
            dev_log.writerow(["step", "dev_loss"])
        while trainer.step_count < cfg.steps:
            try:
                loss = trainer.train_step()
            except TrainingDiverged:
                logger.error("training diverged at step %d", trainer.step_count + 1)
                raise
            step = trainer.step_count
            log.writerow([step, repr(loss), f"{time.perf_counter() - t0:.3f}"])
            result.steps.append(step)
            result.losses.append(loss)
            if step % 50 == 0:
                logger.info("step %d loss %.5f", step, loss)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                trainer.save(out_dir / f"ckpt_step{step:07d}.npz")
            if cfg.eval_every and dev_data and step % cfg.eval_every == 0:
                dl = trainer.dev_loss()
                dev_log.writerow([step, repr(dl)])
                result.dev.append((step, dl))
                logger.info("step %d dev loss %.5f", step, dl)
                if dl < trainer.best_dev:
                    trainer.best_dev, trainer.bad_evals = dl, 0
                    result.best_checkpoint = trainer.save(out_dir / "best.npz")
                else:
                    trainer.bad_evals += 1
                    if cfg.patience and trainer.bad_evals >= cfg.patience:
                        logger.info("early stopping at step %d", step)
                        result.stopped_early = True
                        break
    result.last_checkpoint = trainer.save(out_dir / "last.npz")
    if plot and result.steps:
        plotting.loss_curve(result.steps, result.losses, out_dir / "loss_curve.png", result.dev)
    result.trainer = trainer
    return result


# ---------------------------------------------------------------------------
# ablation


def cell_label(axis: str, value) -> str:
    if axis == "loss":
        return LossVariant(value).label
    if axis == "gcn_enabled":
        return "w/ GCN" if value else "w/o GCN"
    return f"{axis}={value}"


@dataclass
class AblationResult:
    rows: list[dict]
    table: str
    param_names: dict[str, list[str]]
    paths: dict[str, Path] = field(default_factory=dict)


def render_ablation_table(rows: list[dict]) -> str:
    header = ["Method", "PESQ", "STOI", "SDR"]
    body = [[r["method"]] + [("--" if r.get(m) is None else f"{r[m]:.2f}") for m in ("pesq", "stoi", "sdr")]
            for r in rows]
    widths = [max(len(x[i]) for x in [header] + body) for i in range(4)]
    fmt = lambda r: " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header), "-" * len(fmt(header))] + [fmt(r) for r in body])


def ablate(base: dict, axis: str, values: list[str], train_manifest, dev_manifest, out_dir) -> AblationResult:
    """Train one model per grid value (shared seed) and compare them on the dev set."""
    from .config import model_config, parse_value, stft_params, train_config
    from .metrics import evaluate_manifest

    out_dir = Path(out_dir)
    rows, noisy_row, names = [], None, {}
    for i, raw in enumerate(values):
        cfg = dict(base)
        cfg[axis] = parse_value(axis, raw)
        label = cell_label(axis, cfg[axis])
        cell_dir = out_dir / f"cell{i:02d}"
        logger.info("ablation cell %d: %s", i, label)
        res = train(train_config(cfg), model_config(cfg), stft_params(cfg), train_manifest, dev_manifest, cell_dir)
        report = evaluate_manifest(res.checkpoint, dev_manifest, cfg["metrics"], cfg["pesq_cmd"] or None,
                                   max_frames=cfg["max_frames"])
        report.write(cell_dir / "eval")
        means = _overall(report)
        if noisy_row is None:
            noisy_row = {"method": "Noisy", **means["noisy"]}
        rows.append({"method": label, "axis": axis, "value": raw, **means["enhanced"]})
        names[label] = [n for n, _ in res.trainer.model.named_parameters()]
    rows = [noisy_row] + rows if noisy_row else rows
    table = render_ablation_table(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"table": out_dir / "ablation.txt", "rows": out_dir / "ablation.jsonl"}
    paths["table"].write_text(table + "\n")
    with open(paths["rows"], "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    if rows:
        paths["figure"] = plotting.ablation_bars(rows, out_dir / "ablation.png")
    return AblationResult(rows, table, names, paths)


def _overall(report) -> dict:
    out = {}
    for kind in ("noisy", "enhanced"):
        vals: dict[str, list[float]] = {}
        for row in report.rows:
            for k, v in row[kind].items():
                vals.setdefault(k, []).append(v)
        out[kind] = {k: float(np.mean(v)) for k, v in vals.items()}
    return out


# ---------------------------------------------------------------------------
# inference on files


def enhance_file(checkpoint, in_path, out_path, max_frames: int = 4096, wav_format: str = "float32") -> np.ndarray:
    bundle = load_checkpoint(checkpoint)
    noisy, _ = read_wav(in_path, bundle.stft.sample_rate)
    if noisy.shape[0] != bundle.n_mics:
        raise ValueError(f"{in_path} has {noisy.shape[0]} channels, checkpoint expects {bundle.n_mics}")
    out = enhance_waveform(bundle, noisy, max_frames=max_frames)
    write_wav(out_path, out, bundle.stft.sample_rate, wav_format)
    return out
