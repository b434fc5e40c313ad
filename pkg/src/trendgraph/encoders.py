"""Per-month attribute embeddings from the two graph patterns.

The bipartite encoder aggregates static community embeddings into each
attribute (inductive GCN-style mean over neighbors, GraphSage update with
L2 normalization).  The hypergraph encoder applies the symmetrically
normalized node-hyperedge-node convolution over the incidence matrix.
Community embeddings are read-only in both encoders; only attribute
representations evolve.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .snapshots import BipartiteSnapshot, Hypergraph


def neighbor_mean_matrix(snapshot: BipartiteSnapshot) -> np.ndarray:
    """Attribute x community averaging operator: row j holds 1/deg(j) at neighbors.

    Isolated attributes get an all-zero row, so their aggregated neighbor
    vector is zero.
    """
    out = np.zeros((snapshot.n_attributes, snapshot.n_communities))
    for j, neighbors in enumerate(snapshot.adjacency):
        if neighbors:
            out[j, neighbors] = 1.0 / len(neighbors)
    return out


def sage_encode(snapshot: BipartiteSnapshot | None, community_embed: Node,
                attribute_embed: Node, layer_weights: list[tuple[Node, Node]],
                aggregator: Node | None = None) -> Node:
    """Bipartite attribute encoding; one (aggregation, update) weight pair per layer.

    Each layer computes the degree-normalized mean of neighbor community
    embeddings (times the aggregation weight), concatenates it with the
    attribute's own embedding, applies the update weight and ReLU, and
    L2-normalizes rows.  ``aggregator`` may carry a precomputed
    ``neighbor_mean_matrix`` constant; otherwise it is built from the
    snapshot.
    """
    if not layer_weights:
        raise ValueError("sage_encode needs at least one layer")
    if aggregator is None:
        if snapshot is None:
            raise ValueError("sage_encode needs a snapshot or a precomputed aggregator")
        aggregator = ad.constant(neighbor_mean_matrix(snapshot))
    x = attribute_embed
    for w_agg, w_update in layer_weights:
        neighbor = ad.matmul(aggregator, ad.matmul(community_embed, w_agg))
        x = ad.row_l2_normalize(ad.relu(ad.matmul(ad.concat_cols(x, neighbor), w_update)))
    return x


def hypergraph_operator_factors(hg: Hypergraph) -> tuple[np.ndarray, np.ndarray]:
    """Factored propagation operator (left, right) with left @ right equal to
    Dv^-1/2 H W De^-1 H^T Dv^-1/2.

    Zero-degree vertices and hyperedges contribute zero instead of dividing
    by zero, which leaves isolated vertices at exactly zero after ReLU.
    """
    d_inv_sqrt = np.zeros_like(hg.vertex_degrees)
    nz_v = hg.vertex_degrees > 0
    d_inv_sqrt[nz_v] = 1.0 / np.sqrt(hg.vertex_degrees[nz_v])
    b_inv = np.zeros_like(hg.edge_degrees)
    nz_e = hg.edge_degrees > 0
    b_inv[nz_e] = 1.0 / hg.edge_degrees[nz_e]
    left = d_inv_sqrt[:, None] * hg.incidence
    right = (hg.edge_weights * b_inv)[:, None] * hg.incidence.T * d_inv_sqrt[None, :]
    return left, right


def hyperconv_encode(hg: Hypergraph | None, attribute_embed: Node,
                     layer_weights: list[Node],
                     factors: tuple[Node, Node] | None = None) -> Node:
    """Hypergraph attribute encoding; one mixing weight per layer.

    Layer i maps X to relu(left @ (right @ (X @ P_i))) where left/right are
    the factored symmetric-normalized propagation operator.  ``factors``
    may carry precomputed constants for the current month.
    """
    if not layer_weights:
        raise ValueError("hyperconv_encode needs at least one layer")
    if factors is None:
        if hg is None:
            raise ValueError("hyperconv_encode needs a hypergraph or precomputed factors")
        left_arr, right_arr = hypergraph_operator_factors(hg)
        factors = (ad.constant(left_arr), ad.constant(right_arr))
    left, right = factors
    x = attribute_embed
    for mix in layer_weights:
        x = ad.relu(ad.matmul(left, ad.matmul(right, ad.matmul(x, mix))))
    return x
