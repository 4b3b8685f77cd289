from .clip import VideoClip, resize_center_crop
from .dataset import ClipDataset, ClipRecord
from .io import load_clip, save_clip
from .synthetic import Sprite, ToySceneSpec, generate_toy_clip, random_scene

__all__ = [
    "VideoClip",
    "resize_center_crop",
    "ClipDataset",
    "ClipRecord",
    "load_clip",
    "save_clip",
    "Sprite",
    "ToySceneSpec",
    "generate_toy_clip",
    "random_scene",
]
