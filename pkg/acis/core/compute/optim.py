from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from acis.core.compute.tensor import Parameter
from acis.core.exceptions import ContractViolation

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    step: int = 0
    first_moment: Dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    """
    Adam with bias-corrected moments and decoupled weight decay.
    step() leaves gradients in place; callers zero them with zero_grad().
    """

    def __init__(self, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")

        self.params: List[Parameter] = list(params)
        self.state = AdamState(lr=lr, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        self.state.lr = value

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()


def adam_step(params: Sequence[Parameter], state: AdamState):
    state.step += 1
    t = state.step
    for index, param in enumerate(params):
        if not param.trainable:
            continue

        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        m = state.first_moment.setdefault(index, np.zeros_like(param.data))
        v = state.second_moment.setdefault(index, np.zeros_like(param.data))
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad

        m_hat = m / (1.0 - BETA1**t)
        v_hat = v / (1.0 - BETA2**t)
        update = m_hat / (np.sqrt(v_hat) + EPS)
        if state.weight_decay:
            update = update + state.weight_decay * param.data
        param.data -= state.lr * update
