"""Deterministic synthetic sprite videos used as ground truth for training and tests."""

from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.config import DataSettings
from src.core.exceptions import ConfigurationError

from .clip import VideoClip

RGB = tuple[float, float, float]

NAMED_COLORS: dict[str, RGB] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.1, 0.2, 0.9),
    "yellow": (0.95, 0.85, 0.1),
    "magenta": (0.85, 0.1, 0.8),
    "cyan": (0.1, 0.85, 0.85),
    "white": (0.95, 0.95, 0.95),
    "orange": (0.95, 0.5, 0.05),
}


class Sprite(BaseModel):
    """A solid shape moving with constant velocity (px/frame)."""

    model_config = ConfigDict(frozen=True)

    shape: Literal["square", "disk"] = "square"
    color: RGB = NAMED_COLORS["red"]
    size: int = Field(default=8, ge=1)
    velocity: tuple[float, float] = (0.0, 0.0)
    start: tuple[float, float] = (0.0, 0.0)

    @property
    def color_name(self) -> str:
        for name, value in NAMED_COLORS.items():
            if np.allclose(value, self.color):
                return name
        return "colored"


class ToySceneSpec(BaseModel):
    """
    Description of a synthetic scene.

    Positions and velocities are (x, y) in pixels; ``start`` is the sprite's top-left corner.
    ``background_end`` turns the background into a vertical two-color gradient.
    """

    model_config = ConfigDict(frozen=True)

    canvas: tuple[int, int] = (64, 64)
    sprites: list[Sprite] = Field(default_factory=list)
    background: RGB = (0.2, 0.2, 0.25)
    background_end: RGB | None = None
    num_frames: int = Field(default=16, ge=1)
    boundary: Literal["bounce", "wrap"] = "bounce"
    noise_std: float = Field(default=0.0, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_sprites(self) -> "ToySceneSpec":
        height, width = self.canvas
        if height < 1 or width < 1:
            raise ValueError("canvas dims must be positive")
        for sprite in self.sprites:
            if sprite.size > min(height, width):
                raise ValueError(f"sprite of size {sprite.size} does not fit {self.canvas}")
        return self

    def caption(self) -> str:
        """Deterministic text prompt describing the scene."""
        if not self.sprites:
            return "empty scene"
        return ", ".join(f"{s.color_name} {s.shape}" for s in self.sprites)


def _bounce(position: float, span: int) -> float:
    """Reflect a free-flight coordinate into [0, span]."""
    if span <= 0:
        return 0.0
    period = 2 * span
    folded = position % period
    return folded if folded <= span else period - folded


def sprite_position(
    sprite: Sprite, t: int, canvas: tuple[int, int], boundary: str
) -> tuple[float, float]:
    """Top-left corner (x, y) of a sprite at frame t."""
    height, width = canvas
    x = sprite.start[0] + sprite.velocity[0] * t
    y = sprite.start[1] + sprite.velocity[1] * t
    if boundary == "wrap":
        return x % width, y % height
    return _bounce(x, width - sprite.size), _bounce(y, height - sprite.size)


def _sprite_mask(
    sprite: Sprite, corner: tuple[float, float], canvas: tuple[int, int], wrap: bool
) -> np.ndarray:
    height, width = canvas
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    left = int(np.floor(corner[0] + 1e-9))
    top = int(np.floor(corner[1] + 1e-9))

    if sprite.shape == "square":
        dx = (xs - left) % width if wrap else xs - left
        dy = (ys - top) % height if wrap else ys - top
        return (dx >= 0) & (dx < sprite.size) & (dy >= 0) & (dy < sprite.size)

    radius = sprite.size / 2.0
    cx, cy = left + radius, top + radius
    ox = xs + 0.5 - cx
    oy = ys + 0.5 - cy
    if wrap:
        ox = (ox + width / 2.0) % width - width / 2.0
        oy = (oy + height / 2.0) % height - height / 2.0
    return ox**2 + oy**2 <= radius**2


def _background(spec: ToySceneSpec) -> np.ndarray:
    height, width = spec.canvas
    start = np.asarray(spec.background, dtype=np.float64)
    if spec.background_end is None:
        return np.broadcast_to(start, (height, width, 3)).copy()
    end = np.asarray(spec.background_end, dtype=np.float64)
    ramp = np.linspace(0.0, 1.0, height)[:, None, None]
    return np.broadcast_to(start + (end - start) * ramp, (height, width, 3)).copy()


def generate_toy_clip(spec: ToySceneSpec, downsample_factor: int = 8) -> VideoClip:
    """
    Render a scene to a clip. Pure function of ``spec``.

    Raises:
        ConfigurationError: if the canvas is not divisible by ``downsample_factor``
    """
    height, width = spec.canvas
    if height % downsample_factor or width % downsample_factor:
        raise ConfigurationError(
            f"canvas {spec.canvas} not divisible by downsample factor {downsample_factor}"
        )

    rng = np.random.default_rng(spec.seed)
    base = _background(spec)
    frames = np.empty((spec.num_frames, height, width, 3), dtype=np.float64)
    wrap = spec.boundary == "wrap"

    for t in range(spec.num_frames):
        frame = base.copy()
        for sprite in spec.sprites:
            corner = sprite_position(sprite, t, spec.canvas, spec.boundary)
            frame[_sprite_mask(sprite, corner, spec.canvas, wrap)] = sprite.color
        if spec.noise_std > 0:
            frame += rng.normal(0.0, spec.noise_std, size=frame.shape)
        frames[t] = frame

    volume = torch.from_numpy(np.clip(frames, 0.0, 1.0).astype(np.float32))
    return VideoClip(volume, source_id=f"toy-{spec.seed}")


def random_scene(
    rng: np.random.Generator, settings: DataSettings, num_frames: int | None = None
) -> ToySceneSpec:
    """Sample a scene with a few sprites and a random background gradient."""
    low, high = settings.sprites_per_clip
    colors = list(NAMED_COLORS)
    height, width = settings.canvas
    sprites = []
    for _ in range(int(rng.integers(low, high + 1))):
        size = int(rng.integers(settings.sprite_size[0], settings.sprite_size[1] + 1))
        size = min(size, height, width)
        sprites.append(
            Sprite(
                shape="square" if rng.random() < 0.5 else "disk",
                color=NAMED_COLORS[colors[int(rng.integers(len(colors)))]],
                size=size,
                velocity=(
                    float(rng.uniform(-settings.max_speed, settings.max_speed)),
                    float(rng.uniform(-settings.max_speed, settings.max_speed)),
                ),
                start=(
                    float(rng.uniform(0, width - size)),
                    float(rng.uniform(0, height - size)),
                ),
            )
        )
    shade = rng.uniform(0.05, 0.45, size=(2, 3))
    return ToySceneSpec(
        canvas=settings.canvas,
        sprites=sprites,
        background=tuple(float(v) for v in shade[0]),
        background_end=tuple(float(v) for v in shade[1]),
        num_frames=num_frames or settings.frames_per_clip,
        boundary=settings.boundary,
        seed=int(rng.integers(2**31)),
    )
