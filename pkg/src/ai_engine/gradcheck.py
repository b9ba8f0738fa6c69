"""
Central-difference gradient checking for tape-recorded computations.
"""

from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Tuple

import numpy as np

from ai_engine.tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    """Outcome of a gradient check over sampled entries."""
    max_relative_error: float
    checked: int
    worst: Tuple[str, int]

    def passed(self, tolerance: float) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    n_samples: Optional[int] = None,
    eps: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckResult:
    """
    Compare tape gradients against central differences.

    Args:
        loss_fn: Builds the scalar loss from the current tensor values
        tensors: Named tensors to perturb; they must require grad
        n_samples: Number of random entries to check (all entries when None)
        eps: Finite-difference step
        seed: Seed for entry sampling
        floor: Denominator floor for the relative error

    Returns:
        Largest relative error over the checked entries
    """
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    entries: List[Tuple[str, int]] = [
        (name, i) for name, t in tensors.items() for i in range(t.size)
    ]
    if n_samples is not None and n_samples < len(entries):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(entries), size=n_samples, replace=False)
        entries = [entries[i] for i in sorted(chosen)]

    worst_error, worst_entry = 0.0, entries[0]
    for name, index in entries:
        t = tensors[name]
        original = t.data.copy()
        flat = original.reshape(-1)

        shifted = flat.copy()
        shifted[index] += eps
        t.data = shifted.reshape(original.shape)
        plus = loss_fn().item()
        shifted[index] -= 2 * eps
        t.data = shifted.reshape(original.shape)
        minus = loss_fn().item()
        t.data = original

        numeric = (plus - minus) / (2 * eps)
        error = relative_error(float(analytic[name].reshape(-1)[index]), numeric, floor)
        if error > worst_error:
            worst_error, worst_entry = error, (name, index)

    return GradCheckResult(max_relative_error=worst_error, checked=len(entries), worst=worst_entry)
