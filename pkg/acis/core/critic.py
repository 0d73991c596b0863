import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from acis.core.compute import kernels, ops
from acis.core.compute.module import BatchNorm, Conv2d, Linear, Module
from acis.core.compute.tensor import Tensor, as_tensor
from acis.core.environment import STATE_CHANNELS, EnvState
from acis.core.exceptions import ShapeMismatch

log = logging.getLogger("acis.core.critic")

CRITIC_CHANNELS = STATE_CHANNELS + 1


@dataclass(frozen=True)
class CriticConfig:
    channels: Tuple[int, ...] = (8, 16, 24, 32)
    fc_sizes: Tuple[int, ...] = (64, 64, 32)


class Critic(Module):
    """
    Q(s, m): reads the state stack plus the actor's soft mask.
    Every stage is conv, batchnorm, ReLU; all but the last halve the resolution with max pooling and
    the last is reduced by a global max pool. A LeakyReLU FC stack ends in one scalar per sample.
    """

    def __init__(self, config: Optional[CriticConfig] = None, seed: int = 0):
        super(Critic, self).__init__()
        self.config = config or CriticConfig()
        rng = np.random.default_rng(seed)

        self.convs: List[Conv2d] = []
        self.norms: List[BatchNorm] = []
        in_channels = CRITIC_CHANNELS
        for k, channels in enumerate(self.config.channels):
            self.convs.append(self.add_module(f"conv{k}", Conv2d(in_channels, channels, 1, rng)))
            self.norms.append(self.add_module(f"bn{k}", BatchNorm(channels)))
            in_channels = channels

        self.fcs: List[Linear] = []
        for k, size in enumerate(self.config.fc_sizes):
            self.fcs.append(self.add_module(f"fc{k}", Linear(in_channels, size, rng)))
            in_channels = size
        self.out = self.add_module("out", Linear(in_channels, 1, rng))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != CRITIC_CHANNELS:
            raise ShapeMismatch(f"critic expects [N, {CRITIC_CHANNELS}, H, W], got {x.shape}")

        last = len(self.convs) - 1
        for k, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = ops.relu(norm(conv(x)))
            x = kernels.global_max_pool2d(x) if k == last else kernels.maxpool2d(x)

        for fc in self.fcs:
            x = ops.leaky_relu(fc(x))
        q = self.out(x)
        return q.reshape(q.shape[0])


def critic_input(states: Tensor, masks: Tensor) -> Tensor:
    """Concatenate state stacks [N, 11, H, W] with soft masks [N, H, W]."""
    states, masks = as_tensor(states), as_tensor(masks)
    if masks.ndim != 3 or states.shape[0] != masks.shape[0] or states.shape[2:] != masks.shape[1:]:
        raise ShapeMismatch(f"masks {masks.shape} do not fit states {states.shape}")
    return ops.concat([states, masks.reshape(masks.shape[0], 1, *masks.shape[1:])], axis=1)


def critic_forward(critic: Critic, state: EnvState, mask) -> Tensor:
    mask = as_tensor(mask)
    if mask.ndim == 2:
        mask = mask.reshape(1, *mask.shape)
    return critic(critic_input(Tensor(state.stack()[None]), mask))


def critic_loss(q: Tensor, target_return) -> Tensor:
    target = np.asarray(as_tensor(target_return).data, dtype=np.float64).reshape(q.shape)
    return kernels.mse_loss(q, target)


def actor_objective(critic: Critic, states: Tensor, output, beta_act: float) -> Tensor:
    """-Q(s, m) + beta_act * KL for one batch of actor outputs; descending it ascends Q."""
    q = critic(critic_input(states, output.decoded_mask))
    objective = -ops.mean(q)
    if beta_act:
        objective = objective + kernels.kl_diag_gaussian(output.mu, output.log_var) * beta_act
    return objective


def actor_gradient_via_critic(
    critic: Critic,
    actor,
    states: Tensor,
    output,
    beta_act: float,
    extra: Optional[Tensor] = None,
    scale: float = 1.0,
) -> float:
    """
    Back-propagate dQ/dm through the frozen decoder into the actor and accumulate the gradients on
    the actor parameters. The critic runs in eval mode; its gradients and the decoder's are
    discarded. Returns the objective value.
    """
    critic.eval()
    objective = actor_objective(critic, states, output, beta_act)
    if extra is not None:
        objective = objective + extra
    objective = objective * scale
    objective.backward()

    critic.zero_grad()
    actor.decoder.zero_grad()
    return objective.item()
