"""
The policy network.

A convolutional encoder reads the state stack, an LSTM carries the episode memory and two heads
emit the mean and log-variance of a compact latent action. A decoder pre-trained as a conditional
VAE maps the action back to a full-resolution mask, restoring detail from the State Pyramid. A
termination unit predicts "1" to continue and "0" to stop.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from acis.core.compute import kernels, ops
from acis.core.compute.module import Conv2d, ConvTranspose2d, Linear, LSTMCell, Module
from acis.core.compute.optim import Adam
from acis.core.compute.tensor import Tensor, no_grad
from acis.core.environment import (
    STATE_CHANNELS,
    EnvState,
    Scene,
    angle_quantization,
    corrupt_aux,
    empty_state,
    pyramid_levels,
    transition,
)
from acis.core.exceptions import ContractViolation, NonFiniteValue, ShapeMismatch, TrainingAborted
from acis.core.scoring import binarize, dice

log = logging.getLogger("acis.core.actor")

Hidden = Tuple[Tensor, Tensor]
ActionMode = Literal["sample", "mean"]
BlockMode = Literal["none", "lstm", "mask"]
BLOCK_MODES = ("none", "lstm", "mask")


@dataclass(frozen=True)
class ArchConfig:
    # desk-scale ladder; reference-scale networks use the same fields with wider stages
    encoder_channels: Tuple[int, ...] = (8, 16, 24, 32)
    hidden_size: int = 64
    z_size: int = 64
    latent_dim: int = 8
    # first entry is the channel count of the reshaped bottleneck, then one entry per upsampling stage
    decoder_channels: Tuple[int, ...] = (32, 24, 16, 8, 8)
    height: int = 32
    width: int = 32
    use_state_pyramid: bool = True
    init_from_pretrain: bool = True

    @property
    def stages(self) -> int:
        return len(self.encoder_channels)

    @property
    def num_scales(self) -> int:
        return self.stages + 1

    @property
    def bottom(self) -> Tuple[int, int]:
        return self.height >> self.stages, self.width >> self.stages

    def validate(self):
        factor = 2**self.stages
        if self.height % factor or self.width % factor:
            raise ContractViolation(f"{self.height}x{self.width} input does not survive {self.stages} poolings")
        if self.latent_dim >= self.height * self.width:
            raise ContractViolation(f"latent_dim {self.latent_dim} must be smaller than H*W")
        if len(self.decoder_channels) != self.stages + 1:
            raise ContractViolation(
                f"decoder_channels needs {self.stages + 1} entries for {self.stages} encoder stages, "
                f"got {len(self.decoder_channels)}"
            )
        sizes = [*self.encoder_channels, *self.decoder_channels, self.hidden_size, self.z_size, self.latent_dim]
        if min(sizes) < 1:
            raise ContractViolation("all layer sizes must be positive")


@dataclass
class ActorOutput:
    mu: Tensor
    log_var: Tensor
    action: Tensor
    decoded_mask: Tensor
    termination_logit: Tensor
    hidden: Hidden
    feature: Tensor

    def detached_hidden(self) -> Hidden:
        return self.hidden[0].detach(), self.hidden[1].detach()


class Encoder(Module):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super(Encoder, self).__init__()
        self.convs: List[Conv2d] = []
        in_channels = STATE_CHANNELS
        for k, channels in enumerate(arch.encoder_channels):
            self.convs.append(self.add_module(f"conv{k}", Conv2d(in_channels, channels, 1, rng)))
            in_channels = channels

        bottom_h, bottom_w = arch.bottom
        self.fc = self.add_module("fc", Linear(in_channels * bottom_h * bottom_w, arch.hidden_size, rng))

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = kernels.maxpool2d(ops.relu(conv(x)))
        return ops.leaky_relu(self.fc(x.reshape(x.shape[0], -1)))


class Heads(Module):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super(Heads, self).__init__()
        self.latent_dim = arch.latent_dim
        self.post = self.add_module("post", Linear(arch.hidden_size, arch.z_size, rng))
        # zero output layer: mu = 0, log_var = 0 at init
        self.out = self.add_module("out", Linear(arch.z_size, 2 * arch.latent_dim))

    def __call__(self, h: Tensor) -> Tuple[Tensor, Tensor]:
        out = self.out(ops.leaky_relu(self.post(h)))
        mu = out[:, : self.latent_dim]
        # left unclipped; reparameterize clamps it for sampling
        log_var = out[:, self.latent_dim :]
        return mu, log_var


class Decoder(Module):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super(Decoder, self).__init__()
        self.arch = arch
        channels = arch.decoder_channels
        bottom_h, bottom_w = arch.bottom
        self.fc0 = self.add_module("fc0", Linear(arch.latent_dim, arch.z_size, rng))
        self.fc1 = self.add_module("fc1", Linear(arch.z_size, channels[0] * bottom_h * bottom_w, rng))
        self.ups: List[ConvTranspose2d] = []
        for k in range(arch.stages):
            up = ConvTranspose2d(channels[k] + STATE_CHANNELS, channels[k + 1], 2, rng)
            self.ups.append(self.add_module(f"up{k}", up))
        self.out = self.add_module("out", ConvTranspose2d(channels[-1] + STATE_CHANNELS, 1, 1, rng))

    def __call__(self, action: Tensor, levels: Sequence[Tensor]) -> Tensor:
        if len(levels) != self.arch.num_scales:
            raise ContractViolation(f"decoder needs {self.arch.num_scales} pyramid levels, got {len(levels)}")

        batch = action.shape[0]
        bottom_h, bottom_w = self.arch.bottom
        x = ops.leaky_relu(self.fc1(ops.leaky_relu(self.fc0(action))))
        x = x.reshape(batch, self.arch.decoder_channels[0], bottom_h, bottom_w)
        for up, scale in zip(self.ups, range(self.arch.stages, 0, -1)):
            x = ops.relu(up(ops.concat([x, levels[scale]], axis=1)))
        x = self.out(ops.concat([x, levels[0]], axis=1))
        return ops.sigmoid(x).reshape(batch, self.arch.height, self.arch.width)


class Termination(Module):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super(Termination, self).__init__()
        self.fc = self.add_module("fc", Linear(2 * arch.hidden_size, 1, rng))

    def __call__(self, h: Tensor, feature: Tensor) -> Tensor:
        logit = self.fc(ops.concat([h, feature], axis=1))
        return logit.reshape(logit.shape[0])


class Actor(Module):
    def __init__(self, arch: Optional[ArchConfig] = None, seed: int = 0):
        super(Actor, self).__init__()
        self.arch = arch or ArchConfig()
        self.arch.validate()

        rng = np.random.default_rng(seed)
        self.encoder = self.add_module("encoder", Encoder(self.arch, rng))
        self.lstm = self.add_module("lstm", LSTMCell(self.arch.hidden_size, self.arch.hidden_size, rng))
        self.heads = self.add_module("heads", Heads(self.arch, rng))
        self.decoder = self.add_module("decoder", Decoder(self.arch, rng))
        self.term = self.add_module("term", Termination(self.arch, rng))

    def initial_hidden(self, batch: int = 1) -> Hidden:
        return self.lstm.initial_state(batch)

    def pyramid(self, stack: Tensor) -> List[Tensor]:
        levels = pyramid_levels(stack, self.arch.num_scales)
        if not self.arch.use_state_pyramid:
            levels = [levels[0]] + [Tensor(np.zeros(level.shape)) for level in levels[1:]]
        return levels

    def step(
        self,
        inputs: Tensor,
        hidden: Hidden,
        mode: ActionMode = "mean",
        noise: Optional[np.ndarray] = None,
        block: BlockMode = "none",
        bypass_lstm: bool = False,
        pyramid_inputs: Optional[Tensor] = None,
    ) -> ActorOutput:
        """
        One actor step on a batch of state stacks [N, 11, H, W].

        block="mask" hides the accumulated mask from the network, block="lstm" resets the recurrent
        state. bypass_lstm passes the encoder feature straight to the heads (single-step
        pre-training). pyramid_inputs overrides the stack the State Pyramid is built from.
        """
        if inputs.ndim != 4 or inputs.shape[1:] != (STATE_CHANNELS, self.arch.height, self.arch.width):
            raise ShapeMismatch(
                f"actor expects [N, {STATE_CHANNELS}, {self.arch.height}, {self.arch.width}], got {inputs.shape}"
            )
        if block not in BLOCK_MODES:
            raise ContractViolation(f"block must be one of {BLOCK_MODES}, got '{block}'")

        batch = inputs.shape[0]
        h_prev, c_prev = hidden
        if h_prev.shape != (batch, self.arch.hidden_size) or c_prev.shape != h_prev.shape:
            raise ShapeMismatch(f"hidden state {h_prev.shape}/{c_prev.shape} does not fit batch {batch}")

        if block == "mask":
            blank = Tensor(np.zeros((batch, 1, self.arch.height, self.arch.width)))
            inputs = ops.concat([inputs[:, : STATE_CHANNELS - 1], blank], axis=1)
            if pyramid_inputs is not None:
                pyramid_inputs = ops.concat([pyramid_inputs[:, : STATE_CHANNELS - 1], blank], axis=1)
        if block == "lstm":
            h_prev, c_prev = self.initial_hidden(batch)

        feature = self.encoder(inputs)
        if bypass_lstm:
            h, c = feature, c_prev
        else:
            h, c = self.lstm(feature, h_prev, c_prev)

        mu, log_var = self.heads(h)
        if mode == "mean":
            action = mu
        elif mode == "sample":
            if noise is None:
                raise ContractViolation("sample mode needs injected noise")
            action = kernels.reparameterize(mu, log_var, np.asarray(noise).reshape(mu.shape))
        else:
            raise ContractViolation(f"mode must be 'sample' or 'mean', got '{mode}'")

        levels = self.pyramid(pyramid_inputs if pyramid_inputs is not None else inputs)
        return ActorOutput(
            mu=mu,
            log_var=log_var,
            action=action,
            decoded_mask=self.decoder(action, levels),
            termination_logit=self.term(h, feature),
            hidden=(h, c),
            feature=feature,
        )

    def actor_step(
        self,
        state: EnvState,
        hidden: Hidden,
        mode: ActionMode = "mean",
        noise: Optional[np.ndarray] = None,
        block: BlockMode = "none",
    ) -> ActorOutput:
        return self.step(Tensor(state.stack()[None]), hidden, mode=mode, noise=noise, block=block)


def freeze_decoder(actor: Actor):
    actor.decoder.set_trainable(False)


def load_pretrained(actor: Actor, state: dict, init_encoder: bool = True):
    """Install a pre-trained decoder; with init_encoder also start the encoder and heads from it."""
    actor.decoder.load_state_dict(state, prefix="actor.decoder.")
    if init_encoder:
        actor.encoder.load_state_dict(state, prefix="actor.encoder.")
        actor.heads.load_state_dict(state, prefix="actor.heads.")


def should_continue(output: ActorOutput, index: int = 0) -> bool:
    # sigmoid(logit) >= 0.5 exactly when logit >= 0
    return float(output.termination_logit.data[index]) >= 0.0


def infer_episode(
    actor: Actor,
    scene: Scene,
    max_steps: int,
    block: BlockMode = "none",
    ground_truth_stopping: bool = False,
) -> List[np.ndarray]:
    """
    Run the actor on its mean actions until the termination unit predicts a stop or max_steps is hit.
    With ground_truth_stopping the episode takes exactly one step per instance instead.
    """
    limit = scene.instance_count if ground_truth_stopping else max_steps
    preds: List[np.ndarray] = []
    with no_grad():
        state = empty_state(scene)
        hidden = actor.initial_hidden()
        for _ in range(limit):
            output = actor.actor_step(state, hidden, mode="mean", block=block)
            if not ground_truth_stopping and not should_continue(output):
                break
            mask = output.decoded_mask.data[0]
            preds.append(binarize(mask))
            state = transition(state, mask)
            hidden = output.hidden

    return preds


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    kl_weight: float = 1e-3
    weight_decay: float = 1e-5
    aux_noise: float = 0.0
    seed: int = 0


def pretrain_sample(
    scene: Scene, rng: np.random.Generator, aux_noise: float = 0.0, target_index: Optional[int] = None
):
    """
    One reconstruction sample: the encoder sees the target in the mask slot; the pyramid sees the
    union of a random subset of the other instances as context.
    Returns (encoder stack, pyramid stack, target).
    """
    if target_index is None:
        target_index = int(rng.integers(scene.instance_count))
    context = np.zeros((scene.height, scene.width))
    for k, mask in enumerate(scene.gt_masks):
        if k != target_index and rng.random() < 0.5:
            context = np.maximum(context, mask)

    aux = corrupt_aux(angle_quantization(scene), aux_noise, rng)
    base = np.concatenate([scene.image[None], aux.stack()])
    target = scene.gt_masks[target_index].astype(np.float64)
    return np.concatenate([base, target[None]]), np.concatenate([base, context[None]]), target


def reconstruction_loss(actor: Actor, encoder_stack: Tensor, pyramid_stack: Tensor, targets, noise, kl_weight: float):
    output = actor.step(
        encoder_stack,
        actor.initial_hidden(encoder_stack.shape[0]),
        mode="sample",
        noise=noise,
        bypass_lstm=True,
        pyramid_inputs=pyramid_stack,
    )
    bce = kernels.bce_loss(output.decoded_mask, targets)
    kl = kernels.kl_diag_gaussian(output.mu, output.log_var)
    return bce + kl * kl_weight, output


def pretrain_cvae(
    actor: Actor,
    scenes: Sequence[Scene],
    config: PretrainConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> List[float]:
    """Train encoder, heads and decoder to reconstruct a chosen instance mask. Returns epoch mean losses."""
    if not scenes:
        raise ContractViolation("pre-training needs at least one scene")

    rng = np.random.default_rng(config.seed)
    params = actor.encoder.parameters() + actor.heads.parameters() + actor.decoder.parameters()
    optimizer = Adam(params, lr=config.lr, weight_decay=config.weight_decay)

    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(scenes))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            samples = [pretrain_sample(scenes[k], rng, config.aux_noise) for k in batch]
            encoder_stack = Tensor(np.stack([sample[0] for sample in samples]))
            pyramid_stack = Tensor(np.stack([sample[1] for sample in samples]))
            targets = np.stack([sample[2] for sample in samples])
            noise = rng.standard_normal((len(samples), actor.arch.latent_dim))

            try:
                loss, _ = reconstruction_loss(actor, encoder_stack, pyramid_stack, targets, noise, config.kl_weight)
                if not np.isfinite(loss.item()):
                    raise TrainingAborted(f"pre-training loss diverged at epoch {epoch} ({loss.item()})")

                actor.zero_grad()
                loss.backward()
            except NonFiniteValue as e:
                raise TrainingAborted(f"pre-training diverged at epoch {epoch}: {e}") from e
            optimizer.step()
            losses.append(loss.item())

        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        log.debug(f"pretrain epoch {epoch}: loss {mean_loss:.6f}")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)

    actor.zero_grad()
    return history


def reconstruction_dice(actor: Actor, scenes: Sequence[Scene], seed: int = 0) -> float:
    """Mean Dice of mean-action reconstructions of every instance of every scene."""
    rng = np.random.default_rng(seed)
    scores = []
    with no_grad():
        for scene in scenes:
            for k in range(scene.instance_count):
                encoder_stack, pyramid_stack, target = pretrain_sample(scene, rng, target_index=k)
                output = actor.step(
                    Tensor(encoder_stack[None]),
                    actor.initial_hidden(),
                    mode="mean",
                    bypass_lstm=True,
                    pyramid_inputs=Tensor(pyramid_stack[None]),
                )
                scores.append(dice(binarize(output.decoded_mask.data[0]), target.astype(bool)))

    return float(np.mean(scores)) if scores else 0.0
