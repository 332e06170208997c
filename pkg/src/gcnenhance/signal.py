"""STFT analysis/synthesis, real/imag stacking and complex ratio masking.

Shape conventions (leading batch dimensions are allowed everywhere):

    waveform:      (..., L)
    spectrogram:   (..., T, F) complex, F = window_length // 2 + 1
    stack:         (..., M, 2, T, F) real, plane 0 = real part, plane 1 = imag
    mask:          (..., 2, T, F) real

Framing is centered: the signal is reflection-padded by ``window_length // 2``
on both sides before framing, which gives ``T = 1 + L // hop``.
Synthesis is overlap-add divided by the summed squared window, written with
differentiable torch primitives so that waveform-domain losses backpropagate
into the spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "StftParams",
    "num_frames",
    "stft",
    "istft",
    "stack_reim",
    "unstack_reim",
    "apply_crm",
]

WINDOW_EPS = 1e-8


@dataclass(frozen=True)
class StftParams:
    window_length: int = 1024
    hop: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_length <= 0 or self.window_length % 2:
            raise ValueError(f"window_length must be a positive even number, got {self.window_length}")
        if not 0 < self.hop <= self.window_length:
            raise ValueError(f"hop must be in (0, window_length], got {self.hop}")

    @property
    def n_freq_bins(self) -> int:
        return self.window_length // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_length // 2

    def window(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.hann_window(self.window_length, periodic=True, dtype=dtype, device=device)


def num_frames(length: int, params: StftParams) -> int:
    """Number of STFT frames produced for a signal of ``length`` samples."""
    return 1 + length // params.hop


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def stft(signal, params: StftParams = StftParams()) -> torch.Tensor:
    """Centered STFT with a periodic Hann window.

    Args:
        signal: waveform of shape (..., L), L >= window_length.
        params: analysis parameters.

    Returns:
        Complex tensor of shape (..., T, F) with T = 1 + L // hop.
    """
    x = _as_tensor(signal)
    if not x.is_floating_point():
        x = x.to(torch.get_default_dtype())
    length = x.shape[-1]
    if length < params.window_length:
        raise ValueError(
            f"signal has {length} samples; at least window_length={params.window_length} are required"
        )
    if not torch.isfinite(x).all():
        raise ValueError("signal contains non-finite samples")
    lead = x.shape[:-1]
    flat = x.reshape(-1, 1, length)
    padded = F.pad(flat, (params.pad, params.pad), mode="reflect").squeeze(1)
    frames = padded.unfold(-1, params.window_length, params.hop)
    frames = frames * params.window(x.dtype, x.device)
    spec = torch.fft.rfft(frames, dim=-1)
    return spec.reshape(*lead, spec.shape[-2], spec.shape[-1])


def istft(spec: torch.Tensor, params: StftParams, out_length: int) -> torch.Tensor:
    """Overlap-add inverse of :func:`stft`.

    The result is differentiable with respect to ``spec``.
    """
    spec = _as_tensor(spec)
    if not spec.is_complex():
        raise TypeError("istft expects a complex spectrogram")
    n_frames, n_bins = spec.shape[-2], spec.shape[-1]
    if n_bins != params.n_freq_bins:
        raise ValueError(
            f"spectrogram has {n_bins} frequency bins but params imply {params.n_freq_bins}"
        )
    if num_frames(out_length, params) != n_frames:
        raise ValueError(
            f"out_length={out_length} implies {num_frames(out_length, params)} frames, "
            f"spectrogram has {n_frames}"
        )
    lead = spec.shape[:-2]
    flat = spec.reshape(-1, n_frames, n_bins)
    real_dtype = flat.real.dtype
    window = params.window(real_dtype, flat.device)
    frames = torch.fft.irfft(flat, n=params.window_length, dim=-1) * window

    total = (n_frames - 1) * params.hop + params.window_length
    fold = dict(output_size=(1, total), kernel_size=(1, params.window_length), stride=(1, params.hop))
    summed = F.fold(frames.transpose(1, 2), **fold).reshape(flat.shape[0], total)
    wss = (window**2).unsqueeze(0).unsqueeze(-1).expand(1, params.window_length, n_frames)
    norm = F.fold(wss, **fold).reshape(total)
    out = summed / norm.clamp(min=WINDOW_EPS)

    out = out[:, params.pad: params.pad + out_length]
    if out.shape[-1] < out_length:
        out = F.pad(out, (0, out_length - out.shape[-1]))
    return out.reshape(*lead, out_length)


def stack_reim(specs) -> torch.Tensor:
    """Stack M complex spectrograms into an (..., M, 2, T, F) real tensor.

    ``specs`` is either a sequence of (T, F) complex tensors or a single complex
    tensor whose third-from-last axis indexes channels.
    """
    if isinstance(specs, (list, tuple)):
        if not specs:
            raise ValueError("need at least one spectrogram")
        shapes = {tuple(s.shape) for s in specs}
        if len(shapes) != 1:
            raise ValueError(f"spectrograms have heterogeneous shapes: {sorted(shapes)}")
        specs = torch.stack([_as_tensor(s) for s in specs], dim=-3)
    if not specs.is_complex():
        raise TypeError("stack_reim expects complex spectrograms")
    return torch.stack([specs.real, specs.imag], dim=-3)


def unstack_reim(stack: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`stack_reim`; returns (..., M, T, F) complex."""
    if stack.shape[-3] != 2:
        raise ValueError(f"expected a real/imag axis of size 2, got shape {tuple(stack.shape)}")
    return torch.complex(stack[..., 0, :, :], stack[..., 1, :, :])


def apply_crm(mask: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Complex multiplication of a (..., 2, T, F) mask with a (..., T, F) spectrogram."""
    if mask.shape[-3] != 2 or mask.shape[-2:] != ref.shape[-2:]:
        raise ValueError(
            f"mask shape {tuple(mask.shape)} does not match reference spectrogram {tuple(ref.shape)}"
        )
    m_re, m_im = mask[..., 0, :, :], mask[..., 1, :, :]
    r_re, r_im = ref.real, ref.imag
    return torch.complex(m_re * r_re - m_im * r_im, m_re * r_im + m_im * r_re)
