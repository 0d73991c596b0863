"""
Synthetic scenes and the segmentation MDP.

A scene is a grayscale image with depth-ordered shapes; each ground-truth mask holds the visible
pixels of one shape. States pair the image and its auxiliary channels with the accumulated mask
M_t of everything predicted so far. All geometry is integer arithmetic on the pixel grid, so a
scene seed reproduces the same masks on every platform.
"""
import io
import logging
import struct
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np

from acis.core.compute import kernels
from acis.core.compute.tensor import Tensor, as_tensor, no_grad
from acis.core.exceptions import (
    ContractViolation,
    SceneFormatError,
    SceneGenerationError,
    ShapeMismatch,
)
from acis.utils.hashing import hash_file

log = logging.getLogger("acis.core.environment")

SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
MIN_PIXELS = 4
ANGLE_BINS = 8
STATE_CHANNELS = 2 + ANGLE_BINS + 1
CHANNEL_NAMES = ["image", "foreground"] + [f"angle_{k}" for k in range(ANGLE_BINS)] + ["accumulated"]

SPLIT_MAGIC = b"ACISS1"
_RECORD = struct.Struct("<QIII")


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    n_min: int = 2
    n_max: int = 6
    shape_kinds: Tuple[str, ...] = SHAPE_KINDS
    overlap_prob: float = 0.5
    min_extent: int = 2
    # 0 picks a fifth of the shorter side
    max_extent: int = 0
    aux_noise: float = 0.0
    max_attempts: int = 200

    def validate(self):
        if self.height < 16 or self.width < 16:
            raise ContractViolation(f"scenes must be at least 16x16, got {self.height}x{self.width}")
        if not 1 <= self.n_min <= self.n_max <= 10:
            raise ContractViolation(f"need 1 <= n_min <= n_max <= 10, got n_min={self.n_min}, n_max={self.n_max}")
        if not self.shape_kinds or any(kind not in SHAPE_KINDS for kind in self.shape_kinds):
            raise ContractViolation(f"shape kinds must be taken from {SHAPE_KINDS}, got {self.shape_kinds}")
        if not 0.0 <= self.overlap_prob <= 1.0:
            raise ContractViolation(f"overlap_prob must lie in [0, 1], got {self.overlap_prob}")
        low, high = self.extent_range()
        if low < 1 or high < low:
            raise ContractViolation(f"invalid shape extent range [{low}, {high}]")

    def extent_range(self) -> Tuple[int, int]:
        limit = min(self.height, self.width) // 2 - 1
        high = self.max_extent if self.max_extent > 0 else max(self.min_extent + 1, min(self.height, self.width) // 5)
        return self.min_extent, min(high, limit)


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    image: np.ndarray
    gt_masks: Tuple[np.ndarray, ...]
    full_areas: Tuple[int, ...] = ()

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def instance_count(self) -> int:
        return len(self.gt_masks)

    @property
    def foreground(self) -> np.ndarray:
        return np.any(np.stack(self.gt_masks), axis=0)

    @property
    def occluded(self) -> bool:
        return any(int(mask.sum()) < area for mask, area in zip(self.gt_masks, self.full_areas))


@dataclass(frozen=True, eq=False)
class AuxChannels:
    foreground: np.ndarray
    angle_bins: np.ndarray

    def stack(self) -> np.ndarray:
        return np.concatenate([self.foreground[None], self.angle_bins]).astype(np.float64)


@dataclass(frozen=True, eq=False)
class EnvState:
    image: np.ndarray
    accumulated: np.ndarray
    aux: AuxChannels

    def stack(self) -> np.ndarray:
        """[11, H, W]: image, foreground, 8 angle bins, accumulated mask."""
        return np.concatenate([self.image[None], self.aux.stack(), self.accumulated[None]])

    def context(self) -> np.ndarray:
        """The stack without the accumulated mask, [10, H, W]."""
        return np.concatenate([self.image[None], self.aux.stack()])


@dataclass
class StatePyramid:
    levels: List[np.ndarray] = field(default_factory=list)

    @property
    def num_scales(self) -> int:
        return len(self.levels)


def _draw_shape(kind: str, rng: np.random.Generator, config: SceneConfig, yy: np.ndarray, xx: np.ndarray):
    low, high = config.extent_range()
    ry = int(rng.integers(low, high + 1))
    rx = int(rng.integers(low, high + 1))
    cy = int(rng.integers(ry, config.height - ry))
    cx = int(rng.integers(rx, config.width - rx))

    if kind == "ellipse":
        return (yy - cy) ** 2 * rx**2 + (xx - cx) ** 2 * ry**2 <= rx**2 * ry**2

    if kind == "rectangle":
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)

    vertices = [(cy + int(rng.integers(-ry, ry + 1)), cx + int(rng.integers(-rx, rx + 1))) for _ in range(3)]
    (y0, x0), (y1, x1), (y2, x2) = vertices
    if (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) == 0:
        return None

    edges = [
        (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0),
        (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1),
        (x0 - x2) * (yy - y2) - (y0 - y2) * (xx - x2),
    ]
    return ((edges[0] >= 0) & (edges[1] >= 0) & (edges[2] >= 0)) | ((edges[0] <= 0) & (edges[1] <= 0) & (edges[2] <= 0))


def generate_scene(seed: int, config: Optional[SceneConfig] = None) -> Scene:
    """
    Draw the instance count N first, then keep placing shapes until N of them stay visible.

    A shape that later shapes occlude below MIN_PIXELS no longer counts, so placement goes on
    until N survive; the scene never holds more than N. When max_attempts * n_max placements
    run out first, fewer than N are kept, and fewer than n_min raises SceneGenerationError.
    """
    config = config or SceneConfig()
    config.validate()

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0 : config.height, 0 : config.width]
    target = int(rng.integers(config.n_min, config.n_max + 1))
    background = float(rng.uniform(0.0, 0.25))

    image = np.full((config.height, config.width), background)
    labels = np.full((config.height, config.width), -1, dtype=np.int64)
    areas: List[int] = []

    def live() -> List[int]:
        return [k for k in range(len(areas)) if int((labels == k).sum()) >= MIN_PIXELS]

    attempts = 0
    while len(live()) < target and attempts < config.max_attempts * config.n_max:
        attempts += 1
        allow_overlap = rng.random() < config.overlap_prob
        kind = config.shape_kinds[int(rng.integers(len(config.shape_kinds)))]
        support = _draw_shape(kind, rng, config, yy, xx)
        if support is None or int(support.sum()) < MIN_PIXELS:
            continue
        if not allow_overlap and np.any(labels[support] >= 0):
            continue

        labels[support] = len(areas)
        image[support] = float(rng.uniform(0.35, 1.0))
        areas.append(int(support.sum()))

    kept = live()
    if len(kept) < config.n_min:
        raise SceneGenerationError(
            f"seed {seed}: placed {len(kept)} visible shapes after {attempts} attempts, need at least {config.n_min}"
        )

    # shapes occluded below MIN_PIXELS disappear from the image too
    for k in range(len(areas)):
        if k not in kept:
            image[labels == k] = background

    image = np.clip(image + rng.normal(0.0, 0.02, size=image.shape), 0.0, 1.0)
    return Scene(
        seed=seed,
        image=image,
        gt_masks=tuple(labels == k for k in kept),
        full_areas=tuple(areas[k] for k in kept),
    )


def _angle_bin(dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Half-open 45 degree sectors of atan2(dy, dx); bin 0 starts at angle 0. Exact on integers."""
    conditions = [
        ((dy >= 0) & (dy < dx)) | ((dy == 0) & (dx == 0)),
        (dx > 0) & (dy >= dx),
        (dx <= 0) & (dy > -dx),
        (dy > 0) & (dy <= -dx),
        (dy <= 0) & (dy > dx),
        (dx < 0) & (dy <= dx),
        (dx >= 0) & (dy < -dx),
        (dy < 0) & (dy >= -dx),
    ]
    return np.select(conditions, list(range(ANGLE_BINS)), default=-1)


def angle_quantization(scene: Scene) -> AuxChannels:
    """
    Bin every instance pixel by its angle around the instance centroid.
    Offsets are scaled by the pixel count so the centroid stays on the integer grid.
    """
    bins = np.zeros((ANGLE_BINS, scene.height, scene.width), dtype=bool)
    for mask in scene.gt_masks:
        ys, xs = np.nonzero(mask)
        count = len(ys)
        dy = ys.astype(np.int64) * count - int(ys.sum())
        dx = xs.astype(np.int64) * count - int(xs.sum())
        bins[_angle_bin(dy, dx), ys, xs] = True

    return AuxChannels(foreground=scene.foreground, angle_bins=bins)


def corrupt_aux(aux: AuxChannels, flip_prob: float, rng: np.random.Generator) -> AuxChannels:
    """Flip every auxiliary bit independently with probability flip_prob."""
    if flip_prob <= 0:
        return aux

    foreground = aux.foreground ^ (rng.random(aux.foreground.shape) < flip_prob)
    angle_bins = aux.angle_bins ^ (rng.random(aux.angle_bins.shape) < flip_prob)
    return AuxChannels(foreground=foreground, angle_bins=angle_bins)


def empty_state(scene: Scene, aux: Optional[AuxChannels] = None) -> EnvState:
    return EnvState(
        image=scene.image,
        accumulated=np.zeros((scene.height, scene.width)),
        aux=aux if aux is not None else angle_quantization(scene),
    )


def transition(state: EnvState, decoded_mask: Union[np.ndarray, Tensor]) -> EnvState:
    mask = decoded_mask.data if isinstance(decoded_mask, Tensor) else np.asarray(decoded_mask, dtype=np.float64)
    if mask.shape != state.accumulated.shape:
        raise ShapeMismatch(f"decoded mask {mask.shape} does not match the state {state.accumulated.shape}")

    return replace(state, accumulated=np.maximum(state.accumulated, mask))


def initial_state(
    scene: Scene, remaining: int, rng: np.random.Generator, aux_noise: float = 0.0
) -> Tuple[EnvState, List[np.ndarray]]:
    """
    Start an episode with `remaining` instances left to find.
    The other instances, chosen at random, are already in the accumulated mask.
    Returns the state and the remaining ground-truth masks in depth order.
    """
    n = scene.instance_count
    if not 1 <= remaining <= n:
        raise ContractViolation(f"remaining must lie in [1, {n}], got {remaining}")

    order = rng.permutation(n)
    done = sorted(int(k) for k in order[: n - remaining])
    targets = [scene.gt_masks[k] for k in range(n) if k not in done]

    aux = corrupt_aux(angle_quantization(scene), aux_noise, rng)
    state = empty_state(scene, aux)
    for k in done:
        state = transition(state, scene.gt_masks[k].astype(np.float64))

    return state, targets


def pyramid_levels(stack: Union[Tensor, np.ndarray], num_scales: int) -> List[Tensor]:
    """Average-pooled copies of stack at scales 0 .. num_scales - 1; differentiable."""
    stack = as_tensor(stack)
    if num_scales < 1:
        raise ContractViolation(f"num_scales must be positive, got {num_scales}")

    factor = 2 ** (num_scales - 1)
    height, width = stack.shape[-2:]
    if height % factor or width % factor:
        raise ContractViolation(f"{height}x{width} is not divisible by {factor} for {num_scales} pyramid scales")

    levels = [stack]
    for _ in range(num_scales - 1):
        levels.append(kernels.avg_pool2d(levels[-1]))
    return levels


def build_state_pyramid(state: EnvState, num_scales: int) -> StatePyramid:
    with no_grad():
        levels = pyramid_levels(Tensor(state.stack()), num_scales)
    return StatePyramid(levels=[level.data for level in levels])


def scene_seeds(seed: int, count: int, stream: int = 0) -> List[int]:
    return [int(s) for s in np.random.SeedSequence([seed, stream]).generate_state(count, dtype=np.uint32)]


def scene_split(config: SceneConfig, count: int, seed: int, stream: int = 0) -> List[Scene]:
    """`count` scenes drawn from independent seeds; streams separate train/val/test splits."""
    return [generate_scene(scene_seed, config) for scene_seed in scene_seeds(seed, count, stream)]


def write_split(fp: BinaryIO, scenes: Sequence[Scene]):
    fp.write(SPLIT_MAGIC)
    for scene in scenes:
        fp.write(_RECORD.pack(scene.seed, scene.height, scene.width, scene.instance_count))
        for mask in scene.gt_masks:
            fp.write(np.packbits(mask.reshape(-1)).tobytes())


def read_split(fp: BinaryIO, config: SceneConfig) -> List[Scene]:
    """Regenerate every scene from its seed and verify it against the stored masks."""
    if fp.read(len(SPLIT_MAGIC)) != SPLIT_MAGIC:
        raise SceneFormatError("scene split does not start with the ACISS1 magic")

    scenes = []
    while True:
        header = fp.read(_RECORD.size)
        if not header:
            return scenes
        if len(header) != _RECORD.size:
            raise SceneFormatError("scene split truncated inside a record header")

        seed, height, width, count = _RECORD.unpack(header)
        mask_bytes = (height * width + 7) // 8
        stored = []
        for _ in range(count):
            raw = fp.read(mask_bytes)
            if len(raw) != mask_bytes:
                raise SceneFormatError(f"scene split truncated inside the masks of seed {seed}")
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: height * width]
            stored.append(bits.reshape(height, width).astype(bool))

        scene = generate_scene(seed, config)
        if (scene.height, scene.width) != (height, width) or scene.instance_count != count:
            raise SceneFormatError(f"seed {seed} regenerates a different scene layout under this config")
        if any(not np.array_equal(a, b) for a, b in zip(scene.gt_masks, stored)):
            raise SceneFormatError(f"seed {seed} regenerates different masks under this config")
        scenes.append(scene)


def save_split(path: Union[str, PathLike], scenes: Sequence[Scene]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        write_split(fp, scenes)

    log.debug(f"save_split: {path} ({len(scenes)} scenes)")
    return path


def load_split(path: Union[str, PathLike], config: SceneConfig) -> List[Scene]:
    path = Path(path)
    if not path.is_file():
        raise SceneFormatError(f"scene split {path} could not be found")

    with open(path, "rb") as fp:
        return read_split(fp, config)


def split_hash(scenes: Sequence[Scene]) -> str:
    buffer = io.BytesIO()
    write_split(buffer, scenes)
    return hash_file(buffer)


def export_pgm(path: Union[str, PathLike], image: np.ndarray) -> Path:
    path = Path(path)
    height, width = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fp:
        fp.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fp.write(pixels.tobytes())
    return path


def export_pbm(path: Union[str, PathLike], mask: np.ndarray) -> Path:
    path = Path(path)
    height, width = mask.shape
    with open(path, "wb") as fp:
        fp.write(f"P4\n{width} {height}\n".encode("ascii"))
        fp.write(np.packbits(mask.astype(bool), axis=1).tobytes())
    return path


def export_scene(directory: Union[str, PathLike], scene: Scene, index: int) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    paths = [export_pgm(directory / f"scene_{index:04d}.pgm", scene.image)]
    for k, mask in enumerate(scene.gt_masks):
        paths.append(export_pbm(directory / f"scene_{index:04d}_mask_{k:02d}.pbm", mask))
    return paths
