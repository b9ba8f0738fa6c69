"""
Adam optimizer over named tensors.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Union

import numpy as np

from ai_engine.tensor import Tensor
from models.errors import ContractError

Params = Union[Mapping[str, Tensor], Sequence[Tensor]]


@dataclass
class AdamState:
    """Step counter, moment buffers and hyperparameters of one Adam run."""
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def _named(params: Params) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


def adam_step(params: Params, state: AdamState) -> None:
    """
    Apply one bias-corrected Adam update and zero the gradients.

    The step size is lr * sqrt(1 - beta2^t) / (1 - beta1^t), with epsilon added
    to sqrt(v) before division.

    Args:
        params: Tensors to update, by name or position; every one must carry a grad
        state: Moment buffers and hyperparameters, updated in place
    """
    named = _named(params)
    missing = [name for name, p in named.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step called on parameters without gradients: {missing[:5]}")

    state.step += 1
    t = state.step
    step_size = state.learning_rate * np.sqrt(1.0 - state.beta2 ** t) / (1.0 - state.beta1 ** t)

    for name, p in named.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        # Rebind rather than mutate: arrays saved on an old tape stay valid.
        p.data = p.data - step_size * m / (np.sqrt(v) + state.epsilon)
        p.grad = np.zeros_like(p.data)
