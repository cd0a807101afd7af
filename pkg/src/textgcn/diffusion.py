"""Training-free diffusion of item-title embeddings over the interaction graph.

User vectors start as the mean of each user's interacted-item embeddings;
both sides are then propagated through L parameter-free, symmetrically
normalized convolution layers over the bipartite graph, and the final
embedding is the arithmetic mean of layers 0..L. With L=0 this degenerates
to ranking directly on the raw text embeddings (nearest-neighbor mode).

There is deliberately no learnable state here: self-loops, nonlinearities
and layer weights are all absent. Arithmetic is float32 with the
summation order fixed by the CSR layout, so repeated runs are
bit-identical on one platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .corpus import InteractionMatrix
from .errors import DataError


class NormalizedGraph:
    """Bipartite adjacency with 1/sqrt(deg_u * deg_i) edge weights, both directions."""

    def __init__(self, train: InteractionMatrix):
        du = train.user_degrees.astype(np.float64)
        di = train.item_degrees.astype(np.float64)
        edge_users = np.repeat(np.arange(train.n_users), train.user_degrees)
        weights = 1.0 / np.sqrt(du[edge_users] * di[train.indices])
        self.n_users = train.n_users
        self.n_items = train.n_items
        self.user_to_item = sp.csr_matrix(
            (weights.astype(np.float32), train.indices.copy(), train.indptr.copy()),
            shape=(train.n_users, train.n_items),
        )
        self.item_to_user = self.user_to_item.T.tocsr()


def init_user_layer0(
    train: InteractionMatrix, item_emb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean of interacted-item embeddings per user.

    Returns (user_matrix, zero_degree_flags); users with no training
    interactions get the zero vector and a raised flag.
    """
    item_emb = np.ascontiguousarray(item_emb, dtype=np.float32)
    if item_emb.shape[0] != train.n_items:
        raise DataError(
            f"item embedding rows {item_emb.shape[0]} != n_items {train.n_items}"
        )
    ones = sp.csr_matrix(
        (np.ones(train.n_interactions, dtype=np.float32), train.indices, train.indptr),
        shape=(train.n_users, train.n_items),
    )
    sums = ones @ item_emb
    degrees = train.user_degrees.astype(np.float32)
    flags = train.user_degrees == 0
    denom = np.where(flags, 1.0, degrees).astype(np.float32)
    return sums / denom[:, None], flags


def propagate(
    graph: NormalizedGraph, user_layer: np.ndarray, item_layer: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One simultaneous convolution step: both outputs read the same layer."""
    if user_layer.shape[0] != graph.n_users or item_layer.shape[0] != graph.n_items:
        raise DataError("layer row counts do not match the graph")
    if user_layer.shape[1] != item_layer.shape[1]:
        raise DataError("user/item embedding dims differ")
    user_next = graph.user_to_item @ item_layer
    item_next = graph.item_to_user @ user_layer
    return user_next, item_next


@dataclass
class DiffusionOutput:
    """Layer-averaged user/item embeddings plus zero-degree flags."""

    user_final: np.ndarray
    item_final: np.ndarray
    zero_degree_users: np.ndarray
    zero_degree_items: np.ndarray
    n_layers: int
    layers: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def diffuse(
    train: InteractionMatrix,
    item_emb: np.ndarray,
    n_layers: int,
    retain_layers: bool = False,
) -> DiffusionOutput:
    """Full pipeline: layer 0 init, L propagation steps, average of layers 0..L.

    n_layers=0 returns layer 0 unchanged (item side bit-identical to the
    input). Deterministic: no randomness anywhere.
    """
    if n_layers < 0:
        raise DataError("n_layers must be >= 0")
    item_emb = np.ascontiguousarray(item_emb, dtype=np.float32)
    user0, user_flags = init_user_layer0(train, item_emb)
    item_flags = train.item_degrees == 0

    graph = NormalizedGraph(train) if n_layers > 0 else None
    user_acc = user0.copy()
    item_acc = item_emb.copy()
    user_l, item_l = user0, item_emb
    kept = [(user0, item_emb)] if retain_layers else []
    for _ in range(n_layers):
        user_l, item_l = propagate(graph, user_l, item_l)
        user_acc += user_l
        item_acc += item_l
        if retain_layers:
            kept.append((user_l, item_l))
    scale = np.float32(n_layers + 1)
    return DiffusionOutput(
        user_final=user_acc / scale,
        item_final=item_acc / scale,
        zero_degree_users=user_flags,
        zero_degree_items=item_flags,
        n_layers=n_layers,
        layers=kept,
    )
