"""Training objectives over magnitude, complex spectrogram and waveform.

All L1 terms are mean-reduced (multiply by the element count to recover the
plain norm). Combined variants are unit-weight sums.
"""

from __future__ import annotations

import enum

import torch

__all__ = ["LossVariant", "loss_mag", "loss_spec", "loss_raw", "loss_combined"]


class LossVariant(str, enum.Enum):
    MAG = "mag"
    SPEC = "spec"
    MAG_SPEC = "mag_spec"
    MAG_RAW = "mag_raw"

    @property
    def needs_waveform(self) -> bool:
        return self is LossVariant.MAG_RAW

    @property
    def label(self) -> str:
        return {"mag": "L_Mag", "spec": "L_Spec", "mag_spec": "L_Mag+Spec", "mag_raw": "L_Mag+raw"}[self.value]


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def loss_mag(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(pred, target)
    return (pred.abs() - target.abs()).abs().mean()


def loss_spec(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean L1 over the 2*T*F stacked real and imaginary entries."""
    _check(pred, target)
    return torch.view_as_real(pred - target).abs().mean()


def loss_raw(pred_wave: torch.Tensor, target_wave: torch.Tensor) -> torch.Tensor:
    _check(pred_wave, target_wave)
    return (pred_wave - target_wave).abs().mean()


def loss_combined(
    pred: torch.Tensor,
    target: torch.Tensor,
    variant: LossVariant | str,
    pred_wave: torch.Tensor | None = None,
    target_wave: torch.Tensor | None = None,
) -> torch.Tensor:
    variant = LossVariant(variant)
    if variant is LossVariant.MAG:
        return loss_mag(pred, target)
    if variant is LossVariant.SPEC:
        return loss_spec(pred, target)
    if variant is LossVariant.MAG_SPEC:
        return loss_mag(pred, target) + loss_spec(pred, target)
    if pred_wave is None or target_wave is None:
        raise ValueError(f"loss variant {variant.value!r} needs predicted and target waveforms")
    return loss_mag(pred, target) + loss_raw(pred_wave, target_wave)
