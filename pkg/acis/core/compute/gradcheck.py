from typing import Callable, Optional

import numpy as np

from acis.core.compute.tensor import Tensor
from acis.core.exceptions import ContractViolation

# relative errors are measured against max(|analytic|, |numeric|, RELATIVE_FLOOR)
# so that gradients near zero are compared in absolute terms
RELATIVE_FLOOR = 1e-3


def finite_difference_check(
    fn: Callable[[Tensor], Tensor],
    point: Tensor,
    eps: float = 1e-5,
    samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare the analytic gradient of the scalar fn(point) with central differences.

    point is perturbed in place, so fn may ignore its argument and read the same tensor through a
    model (the usual way to check a Parameter). With samples set, only that many randomly chosen
    coordinates are compared. Returns the maximum relative error.
    """
    if not point.requires_grad:
        raise ContractViolation("finite_difference_check needs a point that requires grad")

    point.zero_grad()
    out = fn(point)
    if out.size != 1:
        raise ContractViolation(f"finite_difference_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()

    flat = point.data.reshape(-1)
    indices = np.arange(flat.size)
    if samples is not None and samples < flat.size:
        indices = np.random.default_rng(seed).choice(flat.size, size=samples, replace=False)

    worst = 0.0
    for index in indices:
        original = flat[index]
        flat[index] = original + eps
        upper = fn(point).item()
        flat[index] = original - eps
        lower = fn(point).item()
        flat[index] = original

        numeric = (upper - lower) / (2.0 * eps)
        exact = analytic.reshape(-1)[index]
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
        worst = max(worst, error)

    point.zero_grad()
    return worst
