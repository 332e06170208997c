"""Graph U-Net for multi-channel complex ratio mask estimation.

Every microphone channel goes through the same encoder (weights shared over
channels, batch norm statistics pooled over batch x channel). The bottleneck
embeddings of the M channels are treated as node features of a learned
graph; graph convolutions mix them at every bottleneck position. The same
decoder (with per-channel U-Net skips) maps each node back to a 2 x T x F
tensor, and a softmax attention over channels fuses the M outputs into one
complex ratio mask for the reference microphone.

Layer sizes with k=3, s=2 and no padding: one level maps n -> (n - 1) // 2,
so L levels need at least 2**(L + 1) - 1 frames and bins. Transposed
convolutions target the recorded encoder shapes exactly (output_padding of
0 or 1 per level).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .graph import ChannelGraph, GraphConvolution
from .signal import apply_crm, unstack_reim

DEFAULT_ENCODER_CHANNELS = (64, 128, 128, 256, 256, 256)


@dataclass(frozen=True)
class ModelConfig:
    encoder_channels: tuple[int, ...] = DEFAULT_ENCODER_CHANNELS
    kernel: int = 3
    stride: int = 2
    gcn_layers: int = 2
    scorer_hidden: int = 128
    ref_channel: int = 0
    gcn_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if not self.encoder_channels:
            raise ValueError("encoder_channels must not be empty")
        if self.gcn_enabled and self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1 when the GCN is enabled")

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        """Widths entering each decoder stage (before skip concatenation)."""
        return tuple(reversed(self.encoder_channels))

    @property
    def embedding_dim(self) -> int:
        return self.encoder_channels[-1]

    @property
    def min_input_size(self) -> int:
        n = 1
        for _ in self.encoder_channels:
            n = (n - 1) * self.stride + self.kernel
        return n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def level_shape(n: int, kernel: int = 3, stride: int = 2) -> int:
    return (n - kernel) // stride + 1


@dataclass
class EncoderOutput:
    """Encoder result for a batch of B samples with M channels each.

    ``bottleneck`` is (B, M, C, T', F'); ``skips`` holds the per-level
    activations flattened to (B*M, C_k, T_k, F_k), the last entry being the
    bottleneck itself; ``shape_trace`` lists (T, F) from the input down.
    """

    bottleneck: torch.Tensor
    skips: list[torch.Tensor]
    shape_trace: list[tuple[int, int]] = field(default_factory=list)
    graph: ChannelGraph | None = None

    @property
    def batch(self) -> int:
        return self.bottleneck.shape[0]

    @property
    def channels(self) -> int:
        return self.bottleneck.shape[1]


def pool_embeddings(enc: EncoderOutput) -> torch.Tensor:
    """Node features: global average of each channel's bottleneck, (B, M, C)."""
    return enc.bottleneck.mean(dim=(-2, -1))


def _block(conv: nn.Module, channels: int) -> nn.ModuleDict:
    return nn.ModuleDict({"conv": conv, "norm": nn.BatchNorm2d(channels)})


class GraphUNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        k, s = cfg.kernel, cfg.stride
        widths = (2,) + cfg.encoder_channels
        self.encoder = nn.ModuleList(
            _block(nn.Conv2d(widths[i], widths[i + 1], k, stride=s), widths[i + 1])
            for i in range(len(cfg.encoder_channels))
        )
        # stage i restores encoder level (depth - 1 - i); its input is the previous
        # stage output concatenated with the matching skip (none for the bottleneck).
        depth = len(cfg.encoder_channels)
        self.decoder = nn.ModuleList()
        for i in range(depth):
            level = depth - 1 - i
            in_ch = cfg.decoder_channels[i] * (1 if i == 0 else 2)
            out_ch = widths[level]
            conv = nn.ConvTranspose2d(in_ch, out_ch, k, stride=s)
            if level == 0:
                # start exactly at the identity mask 1+0i: an untrained model passes the
                # reference through, and training only has to learn what to remove
                with torch.no_grad():
                    conv.weight.zero_()
                    conv.bias.copy_(torch.tensor([1.0, 0.0]))
                self.decoder.append(nn.ModuleDict({"conv": conv}))
            else:
                self.decoder.append(_block(conv, out_ch))
        self.graph = (
            GraphConvolution(cfg.embedding_dim, cfg.gcn_layers, cfg.scorer_hidden)
            if cfg.gcn_enabled
            else None
        )
        self.attention = nn.Linear(2, 1)

    def encode(self, x: torch.Tensor) -> EncoderOutput:
        if x.dim() != 5 or x.shape[2] != 2:
            raise ValueError(f"expected input of shape (B, M, 2, T, F), got {tuple(x.shape)}")
        b, m, _, t, f = x.shape
        need = self.cfg.min_input_size
        if t < need or f < need:
            raise ValueError(
                f"input is {t} frames x {f} bins; this encoder needs at least {need} x {need}"
            )
        h = x.reshape(b * m, 2, t, f)
        skips, trace = [], [(t, f)]
        for block in self.encoder:
            h = F.selu(block["norm"](block["conv"](h)))
            skips.append(h)
            trace.append(tuple(h.shape[-2:]))
        return EncoderOutput(h.reshape(b, m, *h.shape[1:]), skips, trace)

    def graph_bottleneck(self, enc: EncoderOutput) -> EncoderOutput:
        if self.graph is None:
            return enc
        graph = self.graph.build_graph(pool_embeddings(enc))
        # nodes at every (t, f) position share the sample's graph
        positional = ChannelGraph(
            graph.adjacency[:, None, None],
            graph.degree[:, None, None],
            graph.row_stochastic[:, None, None],
        )
        h = enc.bottleneck.permute(0, 3, 4, 1, 2)
        h = self.graph(h, positional).permute(0, 3, 4, 1, 2)
        skips = enc.skips[:-1] + [h.reshape(-1, *h.shape[2:])]
        return EncoderOutput(h, skips, enc.shape_trace, graph)

    def decode(self, enc: EncoderOutput) -> torch.Tensor:
        if not enc.shape_trace:
            raise ValueError("encoder output carries no shape trace")
        b, m = enc.batch, enc.channels
        depth = len(self.decoder)
        h = enc.skips[-1]
        for i, stage in enumerate(self.decoder):
            level = depth - 1 - i
            if i > 0:
                h = torch.cat([h, enc.skips[level]], dim=1)
            h = stage["conv"](h, output_size=enc.shape_trace[level])
            if "norm" in stage:
                h = F.selu(stage["norm"](h))
        return h.reshape(b, m, *h.shape[1:])

    def fusion_weights(self, dec: torch.Tensor) -> torch.Tensor:
        logits = self.attention(dec.mean(dim=(-2, -1))).squeeze(-1)
        return torch.softmax(logits, dim=-1)

    def fuse(self, dec: torch.Tensor) -> torch.Tensor:
        """Attention-weighted sum over channels: (B, M, 2, T, F) -> (B, 2, T, F)."""
        alpha = self.fusion_weights(dec)
        return (alpha[:, :, None, None, None] * dec).sum(dim=1)

    def forward(self, x: torch.Tensor, ref_spec: torch.Tensor | None = None, return_graph: bool = False):
        """Predict the clean reference spectrogram.

        Args:
            x: (B, M, 2, T, F) stacked real/imag spectrograms.
            ref_spec: (B, T, F) complex spectrogram of the reference channel;
                taken from ``x`` when omitted.

        Returns:
            ``(clean_spec, mask)`` and, with ``return_graph``, the sample graphs
            (None when the GCN is disabled).
        """
        if ref_spec is None:
            ref_spec = unstack_reim(x[:, self.cfg.ref_channel])
        enc = self.graph_bottleneck(self.encode(x))
        mask = self.fuse(self.decode(enc))
        out = apply_crm(mask, ref_spec)
        if return_graph:
            return out, mask, enc.graph
        return out, mask


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
