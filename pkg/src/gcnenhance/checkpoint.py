"""Single-file checkpoint container.

A checkpoint is an uncompressed NumPy ``.npz`` archive (a ZIP of ``.npy``
arrays) holding:

* ``param/<name>``: float32 model parameters, one array per parameter name;
* ``buffer/<name>``: float32 batch-norm buffers (running statistics and
  ``num_batches_tracked``, which is an integer stored as float32);
* ``optim/exp_avg/<name>``, ``optim/exp_avg_sq/<name>``: float32 Adam moments
  (training checkpoints only);
* ``__meta__``: UTF-8 JSON bytes (uint8 array) with ``format``, ``model_config``,
  ``stft``, ``n_mics``, ``step`` and, for training checkpoints,
  ``optimizer`` (hyperparameters and per-parameter step counts) and ``train_state``.

Each ``.npy`` member carries its own shape and dtype header, so the file is
readable from any language with a ZIP reader and an NPY parser.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import GraphUNet, ModelConfig
from .signal import StftParams

FORMAT = "gcnenhance-checkpoint/1"
META_KEY = "__meta__"


@dataclass
class ModelBundle:
    model: GraphUNet
    stft: StftParams
    n_mics: int
    step: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(
    path,
    model: GraphUNet,
    stft_params: StftParams,
    n_mics: int,
    step: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    train_state: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy().astype(np.float32)
    for name, b in model.named_buffers():
        arrays[f"buffer/{name}"] = b.detach().cpu().numpy().astype(np.float32)
    meta = {
        "format": FORMAT,
        "model_config": model.cfg.to_dict(),
        "stft": asdict(stft_params),
        "n_mics": int(n_mics),
        "step": int(step),
    }
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        steps = {}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                name = names[id(p)]
                arrays[f"optim/exp_avg/{name}"] = state["exp_avg"].detach().cpu().numpy().astype(np.float32)
                arrays[f"optim/exp_avg_sq/{name}"] = state["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)
                steps[name] = float(state["step"])
        meta["optimizer"] = {
            "hyper": {k: v for k, v in optimizer.param_groups[0].items() if k != "params"},
            "steps": steps,
        }
    if train_state is not None:
        meta["train_state"] = train_state
    arrays[META_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(str(path), allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta_raw = arrays.pop(META_KEY, None)
    if meta_raw is None:
        raise ValueError(f"{path}: not a checkpoint (missing {META_KEY})")
    meta = json.loads(meta_raw.tobytes().decode())
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return arrays, meta


def _load_into_model(model: GraphUNet, arrays: dict[str, np.ndarray]) -> None:
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"param/{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint lacks parameter {name}")
            p.copy_(torch.from_numpy(arrays[key]).to(p.dtype))
        for name, b in model.named_buffers():
            key = f"buffer/{name}"
            if key in arrays:
                b.copy_(torch.from_numpy(arrays[key]).to(b.dtype))
    expected = {f"param/{n}" for n, _ in model.named_parameters()}
    extra = {k for k in arrays if k.startswith("param/")} - expected
    if extra:
        raise KeyError(f"checkpoint has parameters unknown to this model: {sorted(extra)}")


def load_checkpoint(path) -> ModelBundle:
    """Load a checkpoint into a fresh model in evaluation mode."""
    arrays, meta = read_arrays(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = GraphUNet(cfg)
    _load_into_model(model, arrays)
    model.eval()
    return ModelBundle(model, StftParams(**meta["stft"]), meta["n_mics"], meta["step"], meta)


def restore_optimizer(path, model: GraphUNet, optimizer: torch.optim.Optimizer) -> dict:
    """Load model weights and Adam moments in place; returns the checkpoint metadata."""
    arrays, meta = read_arrays(path)
    _load_into_model(model, arrays)
    opt_meta = meta.get("optimizer")
    if opt_meta is None:
        raise ValueError(f"{path}: checkpoint carries no optimizer state")
    for name, p in model.named_parameters():
        if name not in opt_meta["steps"]:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(opt_meta["steps"][name], dtype=torch.float32),
            "exp_avg": torch.from_numpy(arrays[f"optim/exp_avg/{name}"]).to(p.dtype).clone(),
            "exp_avg_sq": torch.from_numpy(arrays[f"optim/exp_avg_sq/{name}"]).to(p.dtype).clone(),
        }
    return meta
