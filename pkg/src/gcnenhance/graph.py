"""Learned microphone graph and graph convolution.

Nodes are microphones. For every ordered pair (i, j) the concatenated node
features ``[f_i || f_j]`` are scored by a small MLP, scores are row-softmaxed
into a row-stochastic matrix, and the result is symmetrized by averaging with
its transpose. Graph convolution follows the Kipf form

    H' = g(D^{-1/2} A D^{-1/2} H W)

applied literally, without adding an explicit identity (self-loops come from
scoring the (i, i) pairs).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "ChannelGraph",
    "EdgeScorer",
    "GraphConvolution",
    "edge_scores",
    "build_adjacency",
    "gcn_layer",
    "gcn_forward",
]


@dataclass
class ChannelGraph:
    """Adjacency over microphone nodes.

    ``adjacency`` and ``row_stochastic`` have shape (..., M, M); ``degree``
    holds the diagonal of D with shape (..., M).
    """

    adjacency: torch.Tensor
    degree: torch.Tensor
    row_stochastic: torch.Tensor

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[-1]

    def normalized(self) -> torch.Tensor:
        """D^{-1/2} A D^{-1/2}."""
        if (self.degree <= 0).any():
            raise ValueError("graph has a node with zero degree")
        inv_sqrt = self.degree.rsqrt()
        return inv_sqrt.unsqueeze(-1) * self.adjacency * inv_sqrt.unsqueeze(-2)


class EdgeScorer(nn.Module):
    """Scores a concatenated node pair: R^{2N} -> R."""

    def __init__(self, num_features: int, hidden: int = 128):
        super().__init__()
        self.hidden = nn.Linear(2 * num_features, hidden)
        self.out = nn.Linear(hidden, 1)

    def forward(self, pairs: torch.Tensor) -> torch.Tensor:
        return self.out(torch.tanh(self.hidden(pairs))).squeeze(-1)


def edge_scores(features: torch.Tensor, scorer: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Score every ordered node pair, including self pairs.

    Args:
        features: node features of shape (..., M, N).
        scorer: maps (..., 2N) to (...,) (a trailing singleton is squeezed).

    Returns:
        (..., M, M) tensor with ``out[..., i, j] = scorer([f_i || f_j])``.
    """
    if torch.isnan(features).any():
        raise ValueError("node features contain NaN")
    m = features.shape[-2]
    left = features.unsqueeze(-2).expand(*features.shape[:-2], m, m, features.shape[-1])
    right = features.unsqueeze(-3).expand_as(left)
    scores = scorer(torch.cat([left, right], dim=-1))
    if scores.dim() == left.dim():
        scores = scores.squeeze(-1)
    return scores


def build_adjacency(scores: torch.Tensor) -> ChannelGraph:
    """Row-softmax the pair scores, then symmetrize: A = (S + S^T) / 2."""
    if not torch.isfinite(scores).all():
        raise ValueError("edge scores must be finite")
    row_stochastic = torch.softmax(scores, dim=-1)
    adjacency = (row_stochastic + row_stochastic.transpose(-1, -2)) / 2
    return ChannelGraph(adjacency, adjacency.sum(dim=-1), row_stochastic)


def gcn_layer(
    h: torch.Tensor,
    graph: ChannelGraph,
    weight: torch.Tensor,
    activation: Callable[[torch.Tensor], torch.Tensor] = F.selu,
) -> torch.Tensor:
    """One graph convolution.

    ``h`` has shape (..., M, K_in), ``weight`` (K_in, K_out). The graph's
    leading dimensions must broadcast against those of ``h``.
    """
    if h.shape[-2] != graph.num_nodes:
        raise ValueError(f"features have {h.shape[-2]} nodes, graph has {graph.num_nodes}")
    if h.shape[-1] != weight.shape[0]:
        raise ValueError(f"feature width {h.shape[-1]} does not match weight {tuple(weight.shape)}")
    return activation(graph.normalized() @ h @ weight)


def gcn_forward(
    h0: torch.Tensor,
    graph: ChannelGraph,
    weights: Sequence[torch.Tensor],
    activation: Callable[[torch.Tensor], torch.Tensor] = F.selu,
) -> torch.Tensor:
    if len(weights) < 1:
        raise ValueError("need at least one GCN layer")
    h = h0
    for w in weights:
        h = gcn_layer(h, graph, w, activation)
    return h


class GraphConvolution(nn.Module):
    """Dynamic graph construction plus a stack of graph convolutions."""

    def __init__(self, num_features: int, num_layers: int = 2, scorer_hidden: int = 128):
        super().__init__()
        self.scorer = EdgeScorer(num_features, scorer_hidden)
        self.weights = nn.ParameterList(
            nn.Parameter(torch.empty(num_features, num_features)) for _ in range(num_layers)
        )
        for w in self.weights:
            nn.init.xavier_uniform_(w)
        self.activation = F.selu

    def build_graph(self, node_features: torch.Tensor) -> ChannelGraph:
        return build_adjacency(edge_scores(node_features, self.scorer))

    def forward(self, h: torch.Tensor, graph: ChannelGraph) -> torch.Tensor:
        return gcn_forward(h, graph, list(self.weights), self.activation)
