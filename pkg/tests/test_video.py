"""Test clips, frame-folder I/O, synthetic scenes and datasets."""

from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from src.core.exceptions import (
    ClipFormatError,
    ClipIOError,
    ClipNotFoundError,
    ConfigurationError,
    ContractError,
)
from src.video.clip import VideoClip, resize_center_crop
from src.video.dataset import ClipDataset, ClipRecord, read_prompt
from src.video.io import load_clip, save_clip, to_uint8
from src.video.synthetic import Sprite, ToySceneSpec, generate_toy_clip, sprite_position

from .conftest import make_clip, random_clip


def test_clip_rejects_out_of_range_values():
    with pytest.raises(ContractError):
        VideoClip(torch.full((2, 8, 8, 3), 1.5))
    with pytest.raises(ContractError):
        VideoClip(torch.zeros(2, 8, 8))
    with pytest.raises(ContractError):
        VideoClip(torch.full((2, 8, 8, 3), float("nan")))


def test_save_then_load_matches_quantized_frames(tmp_path):
    """Saved frames reload as the 8-bit quantization of the original."""
    clip = random_clip(3, 16, 24, seed=4)
    paths = save_clip(clip, tmp_path / "clip")
    assert [p.name for p in paths] == ["000000.png", "000001.png", "000002.png"]

    loaded = load_clip(tmp_path / "clip")
    expected = torch.from_numpy(to_uint8(clip.frames)).float() / 255.0
    assert loaded.frames.shape == (3, 16, 24, 3)
    assert torch.equal(loaded.frames, expected)
    assert loaded.source_id == "clip"


def test_to_uint8_rounds_half_up():
    values = torch.tensor([0.0, 0.001, 0.002, 0.25, 1.0], dtype=torch.float64)
    assert to_uint8(values).tolist() == [0, 0, 1, 64, 255]


def test_load_frame_range(tmp_path):
    save_clip(random_clip(5, 8, 8), tmp_path / "clip")
    assert load_clip(tmp_path / "clip", frame_range=(1, 3)).num_frames == 2
    with pytest.raises(ClipNotFoundError):
        load_clip(tmp_path / "clip", frame_range=(7, 9))


def test_mixed_frame_sizes_rejected(tmp_path):
    folder = tmp_path / "mixed"
    folder.mkdir()
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(folder / "000000.png")
    Image.fromarray(np.zeros((8, 16, 3), dtype=np.uint8)).save(folder / "000001.png")
    with pytest.raises(ClipFormatError):
        load_clip(folder)


def test_missing_and_empty_folders(tmp_path):
    with pytest.raises(ClipNotFoundError):
        load_clip(tmp_path / "absent")
    (tmp_path / "empty").mkdir()
    with pytest.raises(ClipNotFoundError):
        load_clip(tmp_path / "empty")
    with pytest.raises(ClipNotFoundError):
        ClipDataset.from_directory(tmp_path / "empty")


def test_resize_center_crop():
    """Wide frames are cropped to the target aspect ratio before resizing."""
    clip = random_clip(2, 32, 64)
    resized = resize_center_crop(clip, (16, 16))
    assert resized.frames.shape == (2, 16, 16, 3)
    assert resize_center_crop(clip, (32, 64)) is clip
    with pytest.raises(ContractError):
        resize_center_crop(clip, (12, 16))


def test_synthetic_clip_is_deterministic():
    assert torch.equal(make_clip(seed=3).frames, make_clip(seed=3).frames)
    with pytest.raises(ConfigurationError):
        generate_toy_clip(ToySceneSpec(canvas=(30, 32)))


def test_sprite_bounces_inside_canvas():
    sprite = Sprite(size=8, velocity=(5.0, 0.0), start=(50.0, 0.0))
    for t in range(40):
        x, _ = sprite_position(sprite, t, (64, 64), "bounce")
        assert 0.0 <= x <= 56.0
    x, _ = sprite_position(sprite, 3, (64, 64), "wrap")
    assert x == pytest.approx(1.0)


def test_synthetic_dataset(tiny_settings, tmp_path):
    """Generated datasets are reproducible and survive a save/load cycle with prompts."""
    first = ClipDataset.synthetic(tiny_settings.data)
    second = ClipDataset.synthetic(tiny_settings.data)
    assert len(first) == tiny_settings.data.num_clips
    assert [r.prompt for r in first.records] == [r.prompt for r in second.records]
    assert torch.equal(first[0].clip.frames, second[0].clip.frames)
    assert first[0].clip.frames.shape == (12, 32, 32, 3)

    first.save(tmp_path / "data")
    loaded = ClipDataset.from_directory(tmp_path / "data")
    assert [r.clip.source_id for r in loaded.records] == [f"toy_{i:04d}" for i in range(4)]
    assert loaded[1].prompt == first[1].prompt


def test_prompt_falls_back_to_folder_name(tmp_path):
    save_clip(random_clip(2, 8, 8), tmp_path / "data" / "sunny_beach")
    dataset = ClipDataset.from_directory(tmp_path / "data")
    assert dataset[0].prompt == "sunny beach"


def test_prompt_write_failure_is_a_clip_io_error(tmp_path):
    clip = random_clip(2, 8, 8)
    (tmp_path / "data" / clip.source_id / "prompt.txt").mkdir(parents=True)
    dataset = ClipDataset([ClipRecord(clip, "sunny beach")])
    with pytest.raises(ClipIOError):
        dataset.save(tmp_path / "data")


def test_prompt_read_failure_is_a_clip_io_error(tmp_path, monkeypatch):
    folder = tmp_path / "beach"
    folder.mkdir()
    (folder / "prompt.txt").write_text("sunny beach\n")

    def unreadable(self, *args, **kwargs):
        raise PermissionError(13, "Permission denied", str(self))

    monkeypatch.setattr(Path, "read_text", unreadable)
    with pytest.raises(ClipIOError):
        read_prompt(folder)
