"""Encoder, shared attention pooling, and per-task heads in one model.

The encoder maps raw instance features to the embedding width, the
pooling module compresses each bag into one slide vector shared by all
tasks, and each task owns a dropout + linear decision head.  Heads are
zero-initialized so the untrained model predicts the uniform
distribution and every task's starting loss is ln(classes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, RegistryError
from .pooling import AttentionMap, AttentionPoolParams, init_attention_pool, pool_attention
from .tasks import TaskRegistry, TaskSpec
from .tensor import DenseTensor, Parameter, ops

FREEZE_SCOPES = ("encoder", "pool", "heads")


@dataclass
class EncoderConfig:
    input_width: int
    hidden_widths: list[int] = field(default_factory=list)
    output_width: int = 64
    activation: str = "tanh"

    def __post_init__(self):
        widths = [self.input_width, *self.hidden_widths, self.output_width]
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"encoder widths must be positive, got {widths}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")


class Encoder:
    """MLP over instances: activation after every layer except the last."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        widths = [config.input_width, *config.hidden_widths, config.output_width]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(
                Parameter(rng.uniform(-a, a, size=(fan_in, fan_out)), f"encoder.{i}.weight")
            )
            self.biases.append(Parameter(np.zeros(fan_out), f"encoder.{i}.bias"))

    def forward(self, x: DenseTensor) -> DenseTensor:
        act = ops.tanh if self.config.activation == "tanh" else ops.relu
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ops.add(ops.matmul(h, w.tensor), b.tensor)
            if i != last:
                h = act(h)
        return h

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class TaskHead:
    """Dropout on the slide vector followed by a linear decision layer."""

    def __init__(self, task_id: str, dim: int, num_classes: int, dropout_p: float = 0.1):
        if num_classes < 2:
            raise ConfigurationError(f"head {task_id!r}: needs at least 2 classes")
        if not 0.0 <= dropout_p < 1.0:
            raise ConfigurationError(f"head {task_id!r}: dropout_p must be in [0, 1)")
        self.task_id = task_id
        self.num_classes = num_classes
        self.dropout_p = dropout_p
        self.weight = Parameter(np.zeros((num_classes, dim)), f"head.{task_id}.weight")
        self.bias = Parameter(np.zeros(num_classes), f"head.{task_id}.bias")

    def forward(self, slide_vector: DenseTensor, mode: str, rng=None) -> DenseTensor:
        dim = slide_vector.shape[0]
        z = ops.dropout(slide_vector, self.dropout_p, mode, rng)
        logits = ops.matmul(self.weight.tensor, ops.reshape(z, (dim, 1)))
        return ops.add(ops.reshape(logits, (self.num_classes,)), self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MultiTaskModel:
    """Shared encoder and pooling with one decision head per task."""

    def __init__(
        self,
        encoder_config: EncoderConfig,
        registry: TaskRegistry,
        heads: int = 8,
        att_dim: int | None = None,
        dropout_p: float = 0.1,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder_config = encoder_config
        self.registry = registry
        self.dropout_p = dropout_p
        self.encoder = Encoder(encoder_config, rng)
        self.pool: AttentionPoolParams = init_attention_pool(
            encoder_config.output_width, heads=heads, att_dim=att_dim, rng=rng
        )
        self.heads: dict[str, TaskHead] = {}
        for spec in registry:
            self.heads[spec.task_id] = TaskHead(
                spec.task_id, encoder_config.output_width, spec.num_classes, dropout_p
            )
        ids = [p.stable_id for p in self.parameters()]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("duplicate stable_id among model parameters")

    def parameters(self) -> list[Parameter]:
        out = list(self.encoder.parameters())
        out.extend(self.pool.parameters())
        for task_id in self.heads:
            out.extend(self.heads[task_id].parameters())
        return out

    def parameters_by_id(self) -> dict[str, Parameter]:
        return {p.stable_id: p for p in self.parameters()}

    def scope_parameters(self, scope: str) -> list[Parameter]:
        if scope == "encoder":
            return self.encoder.parameters()
        if scope == "pool":
            return self.pool.parameters()
        if scope == "heads":
            out = []
            for head in self.heads.values():
                out.extend(head.parameters())
            return out
        raise ConfigurationError(f"unknown freeze scope {scope!r}, expected one of {FREEZE_SCOPES}")

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()


def forward_bag(
    model: MultiTaskModel,
    task_id: str,
    bag,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    instance_ids=None,
) -> tuple[DenseTensor, AttentionMap]:
    """Encode, pool, and decode one bag for one task.

    Returns the head logits and the attention map of the shared pooling
    module.  Eval mode disables dropout and is deterministic.
    """
    if task_id not in model.heads:
        raise RegistryError(f"task {task_id!r} is not registered with this model")
    features = bag if isinstance(bag, DenseTensor) else DenseTensor(bag)
    if features.data.ndim != 2:
        raise DimensionError(f"bag must be [n_instances x input_width], got {features.shape}")
    if features.shape[0] < 1:
        raise ContractError("empty bag")
    if features.shape[1] != model.encoder_config.input_width:
        raise DimensionError(
            f"bag width {features.shape[1]} does not match encoder input width "
            f"{model.encoder_config.input_width}"
        )
    if mode == "train" and model.dropout_p > 0 and rng is None:
        raise ContractError("train-mode forward requires a seeded rng for dropout")

    embeddings = model.encoder.forward(features)
    slide_vector, attention = pool_attention(embeddings, model.pool, instance_ids=instance_ids)
    logits = model.heads[task_id].forward(slide_vector, mode, rng)
    return logits, attention


def freeze(model: MultiTaskModel, scope: str, frozen: bool = True) -> None:
    """Stop (or resume) optimizer updates for one scope.

    Gradients still flow through frozen parameters during backward; they
    are only skipped by the optimizer.
    """
    for p in model.scope_parameters(scope):
        p.frozen = frozen


def encoder_fingerprint(model: MultiTaskModel) -> bytes:
    """Hash of all encoder parameter bytes, for frozen-scope checks."""
    import hashlib

    digest = hashlib.sha256()
    for p in model.encoder.parameters():
        digest.update(p.stable_id.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.digest()
