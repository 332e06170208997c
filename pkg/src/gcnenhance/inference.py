"""Waveform-level enhancement with a trained model."""

from __future__ import annotations

import numpy as np
import torch

from .checkpoint import ModelBundle
from .signal import StftParams, apply_crm, istft, stack_reim, stft


def passthrough(ref: np.ndarray, params: StftParams) -> np.ndarray:
    """Reference channel through STFT, an identity mask (1+0i) and iSTFT."""
    x = torch.as_tensor(np.asarray(ref, dtype=np.float64))
    spec = stft(x, params)
    mask = torch.zeros(2, *spec.shape, dtype=x.dtype)
    mask[0] = 1
    return istft(apply_crm(mask, spec), params, x.shape[-1]).numpy()


def min_samples(bundle: ModelBundle) -> int:
    return (bundle.model.cfg.min_input_size - 1) * bundle.stft.hop


@torch.no_grad()
def _forward_full(bundle: ModelBundle, noisy: np.ndarray):
    params = bundle.stft
    length = noisy.shape[-1]
    need = min_samples(bundle)
    x = torch.as_tensor(noisy, dtype=torch.float32)
    if length < need:
        x = torch.nn.functional.pad(x, (0, need - length))
    spec = stft(x, params)
    pred, _, graph = bundle.model(stack_reim(spec).unsqueeze(0), return_graph=True)
    out = istft(pred[0], params, x.shape[-1])[:length].numpy().astype(np.float64)
    adj = graph.adjacency[0].numpy() if graph is not None else None
    return out, adj


def enhance_waveform(
    bundle: ModelBundle,
    noisy: np.ndarray,
    max_frames: int = 4096,
    overlap_frames: int = 32,
    return_graph: bool = False,
):
    """Enhance an (M, L) recording into an (L,) waveform.

    Recordings longer than ``max_frames`` STFT frames are processed in
    overlapping chunks whose seams are linearly cross-faded. Inputs shorter
    than the encoder minimum are zero-padded and trimmed back.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.ndim != 2 or noisy.shape[0] != bundle.n_mics:
        raise ValueError(f"expected ({bundle.n_mics}, L) input, got shape {noisy.shape}")
    was_training = bundle.model.training
    bundle.model.eval()
    try:
        hop = bundle.stft.hop
        length = noisy.shape[1]
        chunk = max((max_frames - 1) * hop, min_samples(bundle))
        if length <= chunk:
            out, adj = _forward_full(bundle, noisy)
        else:
            fade = min(overlap_frames * hop, chunk // 2)
            step = chunk - fade
            out = np.zeros(length)
            weight = np.zeros(length)
            adjs = []
            start = 0
            while True:
                stop = min(start + chunk, length)
                seg, a = _forward_full(bundle, noisy[:, start:stop])
                w = np.ones(stop - start)
                if start > 0:
                    w[:fade] = np.linspace(0, 1, fade + 2)[1:-1]
                if stop < length:
                    w[-fade:] = np.minimum(w[-fade:], np.linspace(1, 0, fade + 2)[1:-1])
                out[start:stop] += w * seg
                weight[start:stop] += w
                if a is not None:
                    adjs.append(a)
                if stop == length:
                    break
                start += step
            out /= np.maximum(weight, 1e-12)
            adj = np.mean(adjs, axis=0) if adjs else None
    finally:
        bundle.model.train(was_training)
    if return_graph:
        return out, adj
    return out
