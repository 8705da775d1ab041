"""Multi-head attention pooling over a bag of instance embeddings.

Each head rates every instance with a learnable score
``w_h . tanh(V_h e_k)``, normalizes the scores with a softmax into a
weight row, and compresses the bag into that head's weighted sum.  The
per-head sums are concatenated and projected back to the embedding
width by a learnable output matrix, giving one slide-level vector.  The
weight rows are returned alongside as the per-instance importance map.
Mean and max pooling are provided as ablation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import DenseTensor, Parameter, ops


def default_attention_width(dim: int) -> int:
    """Bottleneck width for the scoring MLP: half the embedding, floor 16."""
    return max(16, dim // 2)


@dataclass
class AttentionPoolParams:
    """Learnable state of the pooling module.

    score_matrix[h] is [att_dim x dim], score_vector[h] is [att_dim],
    output_projection is [dim x (heads * dim)].
    """

    heads: int
    dim: int
    att_dim: int
    score_matrix: list[Parameter]
    score_vector: list[Parameter]
    output_projection: Parameter

    def parameters(self) -> list[Parameter]:
        out = []
        for h in range(self.heads):
            out.append(self.score_matrix[h])
            out.append(self.score_vector[h])
        out.append(self.output_projection)
        return out


def init_attention_pool(
    dim: int,
    heads: int = 8,
    att_dim: int | None = None,
    rng: np.random.Generator | None = None,
    id_prefix: str = "pool",
) -> AttentionPoolParams:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)) per matrix."""
    if heads < 1 or dim < 1:
        raise ContractError(f"heads and dim must be positive, got {heads}, {dim}")
    if att_dim is None:
        att_dim = default_attention_width(dim)
    if att_dim < 1:
        raise ContractError(f"att_dim must be positive, got {att_dim}")
    rng = rng if rng is not None else np.random.default_rng(0)

    def uniform(fan_in, fan_out, shape):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    score_matrix = [
        Parameter(uniform(dim, att_dim, (att_dim, dim)), f"{id_prefix}.h{h}.score_matrix")
        for h in range(heads)
    ]
    score_vector = [
        Parameter(uniform(att_dim, 1, (att_dim,)), f"{id_prefix}.h{h}.score_vector")
        for h in range(heads)
    ]
    output_projection = Parameter(
        uniform(heads * dim, dim, (dim, heads * dim)), f"{id_prefix}.output_projection"
    )
    return AttentionPoolParams(heads, dim, att_dim, score_matrix, score_vector, output_projection)


@dataclass
class AttentionMap:
    """Per-head instance weights, one probability row per head."""

    weights: np.ndarray  # [heads x n_instances]
    instance_ids: list = field(default_factory=list)

    def mean_over_heads(self) -> np.ndarray:
        return self.weights.mean(axis=0)


def _check_bag(bag: DenseTensor, dim: int | None = None):
    if bag.data.ndim != 2:
        raise DimensionError(f"bag must be [n_instances x dim], got {bag.shape}")
    if bag.shape[0] < 1:
        raise ContractError("empty bag")
    if dim is not None and bag.shape[1] != dim:
        raise DimensionError(f"bag width {bag.shape[1]} does not match pooling width {dim}")


def pool_attention(
    bag: DenseTensor, params: AttentionPoolParams, instance_ids=None
) -> tuple[DenseTensor, AttentionMap]:
    """Rate, normalize, and compress a bag into one slide vector.

    Fully differentiable; the returned map holds detached weight copies
    in bag instance order.
    """
    _check_bag(bag, params.dim)
    n = bag.shape[0]

    bag_t = ops.transpose(bag)  # [dim x n]
    head_sums = []
    weight_rows = []
    for h in range(params.heads):
        scored = ops.tanh(ops.matmul(params.score_matrix[h].tensor, bag_t))  # [att x n]
        w_row = ops.reshape(params.score_vector[h].tensor, (1, params.att_dim))
        scores = ops.matmul(w_row, scored)  # [1 x n]
        alpha = ops.softmax(scores, axis=1)
        head_sums.append(ops.matmul(alpha, bag))  # [1 x dim]
        weight_rows.append(alpha.data.reshape(n))

    stacked = ops.concat(head_sums, axis=1)  # [1 x heads*dim]
    projected = ops.matmul(stacked, ops.transpose(params.output_projection.tensor))
    slide_vector = ops.reshape(projected, (params.dim,))

    ids = list(instance_ids) if instance_ids is not None else list(range(n))
    attention = AttentionMap(np.vstack(weight_rows), ids)
    return slide_vector, attention


def pool_mean(bag: DenseTensor) -> DenseTensor:
    """Arithmetic mean over instances."""
    _check_bag(bag)
    return ops.reduce_mean(bag, axis=0)


def pool_max(bag: DenseTensor) -> DenseTensor:
    """Elementwise max over instances; gradient goes to the first argmax."""
    _check_bag(bag)
    return ops.reduce_max(bag, axis=0)
