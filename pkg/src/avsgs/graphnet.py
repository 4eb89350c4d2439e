"""Graph embedding stack: attention -> edge convolution -> pooling -> GRU.

All graphs handled here are complete, so layers work on dense n x n
neighbourhoods instead of sparse edge lists.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .scenegraph import FEATURE_DIM, FeatureProjector, SceneGraph


@dataclass
class EmbeddingSet:
    embeddings: torch.Tensor  # (count, d), unit rows
    hidden_trace: list[torch.Tensor]  # hidden states before each step, Delta_0 .. Delta_{count-1}


class GATLayer(nn.Module):
    """Multi-head graph attention over a complete graph with self-loops.

    Each head projects to ``dim // heads`` channels; heads are concatenated
    back to ``dim``.
    """

    def __init__(self, dim: int = FEATURE_DIM, heads: int = 4, negative_slope: float = 0.2):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads, self.head_dim = heads, dim // heads
        self.proj = nn.Linear(dim, dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.negative_slope = negative_slope
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-head attention weights, shape (heads, n_dst, n_src)."""
        h = self.proj(x).view(-1, self.heads, self.head_dim)
        src = (h * self.att_src).sum(-1)  # (n, heads)
        dst = (h * self.att_dst).sum(-1)
        logits = F.leaky_relu(dst.T[:, :, None] + src.T[:, None, :], self.negative_slope)
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.heads * self.head_dim:
            raise ValueError(f"expected (n, {self.heads * self.head_dim}) features, got {tuple(x.shape)}")
        h = self.proj(x).view(-1, self.heads, self.head_dim).transpose(0, 1)  # (heads, n, hd)
        out = torch.bmm(self.attention(x), h)  # (heads, n, hd)
        return out.transpose(0, 1).reshape(x.shape[0], -1) + self.bias


class EdgeConv(nn.Module):
    """e_jk = h([f_j; f_k]) for every ordered pair j != k, averaged into k.

    A lone node has no incoming edges; it then uses its own pair (f_k; f_k)
    so single-node graphs stay defined.
    """

    def __init__(self, dim: int = FEATURE_DIM, negative_slope: float = 0.2):
        super().__init__()
        self.fc1 = nn.Linear(2 * dim, dim)
        self.fc2 = nn.Linear(dim, dim)
        self.negative_slope = negative_slope

    def edge_mlp(self, pairs: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.leaky_relu(self.fc1(pairs), self.negative_slope))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        if n == 1:
            return self.edge_mlp(torch.cat([x, x], dim=1))
        src = x[:, None, :].expand(n, n, -1)  # [j, k] -> f_j
        dst = x[None, :, :].expand(n, n, -1)  # [j, k] -> f_k
        e = self.edge_mlp(torch.cat([src, dst], dim=-1))
        off_diag = 1.0 - torch.eye(n, dtype=x.dtype, device=x.device)
        return (e * off_diag[:, :, None]).sum(0) / (n - 1)


class GraphPool(nn.Module):
    """concat(max over nodes, mean over nodes) followed by a linear map."""

    def __init__(self, dim: int = FEATURE_DIM):
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] == 0:
            raise ValueError("cannot pool an empty graph")
        return self.proj(torch.cat([x.max(0).values, x.mean(0)]))


class EmbeddingGenerator(nn.Module):
    def __init__(self, dim: int = FEATURE_DIM):
        super().__init__()
        self.cell = nn.GRUCell(dim, dim)

    def forward(self, zeta: torch.Tensor, count: int) -> EmbeddingSet:
        if count < 1:
            raise ValueError("embedding count must be >= 1")
        h = zeta.new_zeros(1, self.cell.hidden_size)
        trace, rows = [], []
        for _ in range(count):
            trace.append(h[0])
            h = self.cell(zeta[None], h)
            rows.append(F.normalize(h[0], dim=0, eps=1e-12))
        return EmbeddingSet(embeddings=torch.stack(rows), hidden_trace=trace)


class GraphEmbedder(nn.Module):
    """Scene graph -> zeta -> unit-norm embedding set."""

    def __init__(self, dim: int = FEATURE_DIM, heads: int = 4, raw_dim: int = 2048):
        super().__init__()
        self.projector = FeatureProjector(raw_dim, 2 * dim, dim)
        self.gat = GATLayer(dim, heads)
        self.edge = EdgeConv(dim)
        self.pool = GraphPool(dim)
        self.gru = EmbeddingGenerator(dim)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        # Default fan-in bias init dominates the small between-graph
        # differences and collapses every zeta onto one direction.
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                nn.init.xavier_uniform_(mod.weight)
                if mod.bias is not None:
                    nn.init.zeros_(mod.bias)
        nn.init.zeros_(self.gru.cell.bias_ih)
        nn.init.zeros_(self.gru.cell.bias_hh)

    def summarize(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.gat(x), 0.2)
        x = F.leaky_relu(self.edge(x), 0.2)
        return self.pool(x)

    def forward(self, graph: SceneGraph, count: int | None = None) -> EmbeddingSet:
        count = graph.principal_count + 1 if count is None else count
        zeta = self.summarize(self.projector.project_graph(graph))
        return self.gru(zeta, count)
