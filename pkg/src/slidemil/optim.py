"""AdamW with decoupled weight decay.

Weight decay is applied directly to the parameter, separate from the
moment-based adaptive update, both computed from the pre-step value.
Frozen parameters are skipped entirely: no moment update, no step count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class MomentPair:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class OptimizerState:
    moments: dict[str, MomentPair] = field(default_factory=dict)

    def ensure(self, param: Parameter) -> MomentPair:
        pair = self.moments.get(param.stable_id)
        if pair is None:
            pair = MomentPair(np.zeros_like(param.data), np.zeros_like(param.data))
            self.moments[param.stable_id] = pair
        return pair


def adamw_step(
    params,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    for p in params:
        if p.frozen:
            continue
        pair = state.ensure(p)
        pair.t += 1
        g = p.grad
        pair.m = beta1 * pair.m + (1.0 - beta1) * g
        pair.v = beta2 * pair.v + (1.0 - beta2) * (g * g)
        m_hat = pair.m / (1.0 - beta1 ** pair.t)
        v_hat = pair.v / (1.0 - beta2 ** pair.t)
        theta = p.data
        p.data = theta - lr * weight_decay * theta - lr * m_hat / (np.sqrt(v_hat) + eps)
