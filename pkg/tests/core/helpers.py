import numpy as np

from acis.core.actor import Actor, ArchConfig
from acis.core.config import RunConfig
from acis.core.critic import Critic, CriticConfig
from acis.core.environment import Scene, SceneConfig

TINY_ARCH = ArchConfig(
    encoder_channels=(2, 3),
    hidden_size=4,
    z_size=4,
    latent_dim=2,
    decoder_channels=(2, 3, 2),
    height=8,
    width=8,
)

SMALL_ARCH = ArchConfig(
    encoder_channels=(4, 8),
    hidden_size=8,
    z_size=8,
    latent_dim=4,
    decoder_channels=(4, 4, 4),
    height=16,
    width=16,
)

TINY_CRITIC = CriticConfig(channels=(2, 3), fc_sizes=(4,))

SMALL_SCENES = SceneConfig(height=16, width=16, n_min=1, n_max=3)


def tiny_scene(seed: int = 0, count: int = 2) -> Scene:
    """An 8x8 scene with `count` disjoint 2x3 blocks over a noisy background."""
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 0.2, size=(8, 8))
    masks = []
    for k in range(count):
        mask = np.zeros((8, 8), dtype=bool)
        mask[3 * k : 3 * k + 2, 1 + k : 4 + k] = True
        image[mask] = 0.5 + 0.2 * k
        masks.append(mask)
    return Scene(seed=seed, image=image, gt_masks=tuple(masks), full_areas=tuple(int(m.sum()) for m in masks))


def tiny_actor(seed: int = 0) -> Actor:
    return Actor(TINY_ARCH, seed=seed)


def tiny_critic(seed: int = 0) -> Critic:
    return Critic(TINY_CRITIC, seed=seed)


TINY_RUN_OVERRIDES = (
    "scene.height=16",
    "scene.width=16",
    "scene.n_min=1",
    "scene.n_max=2",
    "scene.train_scenes=4",
    "scene.val_scenes=2",
    "scene.test_scenes=2",
    "arch.encoder_channels=4,8",
    "arch.hidden_size=8",
    "arch.z_size=8",
    "arch.latent_dim=4",
    "arch.decoder_channels=4,4,4",
    "critic.channels=2,3",
    "critic.fc_sizes=4",
    "pretrain.epochs=1",
    "pretrain.batch_size=2",
    "trainer.epochs=1",
    "trainer.warmup_epochs=0",
    "trainer.batch_size=2",
    "experiment.repeats=1",
    "experiment.lockin_seeds=2",
    "experiment.lockin_sigmas=0,0.1",
    "experiment.lockin_steps=2",
    "experiment.orderings=3",
    "experiment.oracle_scenes=2",
    "experiment.oracle_epochs=1",
    "experiment.patch_channels=2",
)


def tiny_run_config(*overrides: str) -> RunConfig:
    """Everything small enough for a whole experiment to run in a test."""
    return RunConfig(overrides=[*TINY_RUN_OVERRIDES, *overrides])
