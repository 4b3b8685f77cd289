"""Test the checkpoint container."""

import os

import pytest
import torch

from src.core.exceptions import (
    ClipFormatError,
    ClipIOError,
    ClipNotFoundError,
    ConfigurationError,
    MigrationError,
)
from src.training import checkpoints
from src.training.checkpoints import (
    PREAMBLE,
    Checkpoint,
    TrainPhase,
    check_phase_transition,
    checkpoint_path,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)


def _checkpoint(**overrides) -> Checkpoint:
    values = {
        "phase": TrainPhase.BASE_VIDEO,
        "step": 12,
        "model_state": {"layer.weight": torch.arange(6.0).view(2, 3), "layer.bias": torch.ones(2)},
        "optimizer_state": {"state": {}, "param_groups": [{"lr": 0.1, "params": [0, 1]}]},
        "config": {"sampler": {"steps": 50}},
        "groups": {"frozen_spatial": ["layer.bias"], "trainable_temporal_global": ["layer.weight"]},
        "extra": {"config_hash": "abc"},
    }
    return Checkpoint(**{**values, **overrides})


def test_round_trip(tmp_path):
    path = save_checkpoint(_checkpoint(), tmp_path / "run" / "ckpt.gpck")
    assert not path.with_name(path.name + ".tmp").exists()

    loaded = load_checkpoint(path)
    assert loaded.phase is TrainPhase.BASE_VIDEO
    assert loaded.step == 12
    assert torch.equal(loaded.model_state["layer.weight"], torch.arange(6.0).view(2, 3))
    assert loaded.optimizer_state["param_groups"][0]["lr"] == 0.1
    assert loaded.config == {"sampler": {"steps": 50}}
    assert loaded.groups["trainable_temporal_global"] == ["layer.weight"]
    assert loaded.extra == {"config_hash": "abc"}


def test_header_is_readable_alone(tmp_path):
    path = save_checkpoint(_checkpoint(optimizer_state=None), tmp_path / "ckpt.gpck")
    header = read_checkpoint_header(path)
    assert header["phase"] == "base_video"
    assert header["has_optimizer"] is False
    assert load_checkpoint(path).optimizer_state is None


def test_checkpoint_paths(tmp_path):
    assert checkpoint_path(tmp_path, TrainPhase.INTERP) == tmp_path / "interp" / "final.gpck"
    assert checkpoint_path(tmp_path, TrainPhase.INTERP, 500).name == "step_0000500.gpck"


def test_missing_file(tmp_path):
    with pytest.raises(ClipNotFoundError):
        load_checkpoint(tmp_path / "absent.gpck")


def test_wrong_magic(tmp_path):
    path = tmp_path / "other.gpck"
    path.write_bytes(b"PK\x03\x04" + bytes(64))
    with pytest.raises(ClipFormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == 0


def test_version_mismatch(tmp_path):
    path = save_checkpoint(_checkpoint(version=2), tmp_path / "future.gpck")
    with pytest.raises(MigrationError) as info:
        load_checkpoint(path)
    assert (info.value.found, info.value.expected) == (2, 1)


def test_truncated_files(tmp_path):
    path = save_checkpoint(_checkpoint(), tmp_path / "ckpt.gpck")
    data = path.read_bytes()
    _, _, header_length = PREAMBLE.unpack_from(data)
    payload_offset = PREAMBLE.size + header_length

    path.write_bytes(data[:10])
    with pytest.raises(ClipFormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == 10

    path.write_bytes(data[: PREAMBLE.size + 4])
    with pytest.raises(ClipFormatError) as info:
        read_checkpoint_header(path)
    assert info.value.offset == PREAMBLE.size + 4

    path.write_bytes(data[: payload_offset + 20])
    with pytest.raises(ClipFormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == payload_offset


def test_corrupt_header(tmp_path):
    path = save_checkpoint(_checkpoint(), tmp_path / "ckpt.gpck")
    data = bytearray(path.read_bytes())
    data[PREAMBLE.size] = ord("#")
    path.write_bytes(bytes(data))
    with pytest.raises(ClipFormatError) as info:
        read_checkpoint_header(path)
    assert info.value.offset == PREAMBLE.size


def test_transient_write_failures_are_retried(tmp_path, monkeypatch):
    real_replace = os.replace
    attempts = []

    def flaky_replace(src, dst):
        attempts.append(dst)
        if len(attempts) < 3:
            raise OSError("disk busy")
        real_replace(src, dst)

    monkeypatch.setattr(checkpoints.os, "replace", flaky_replace)
    path = save_checkpoint(_checkpoint(), tmp_path / "ckpt.gpck")
    assert len(attempts) == 3
    assert load_checkpoint(path).step == 12


def test_persistent_write_failure(tmp_path, monkeypatch):
    def broken_replace(src, dst):
        raise OSError("read-only filesystem")

    monkeypatch.setattr(checkpoints.os, "replace", broken_replace)
    with pytest.raises(ClipIOError):
        save_checkpoint(_checkpoint(), tmp_path / "ckpt.gpck")


def test_phase_transitions():
    check_phase_transition(TrainPhase.BASE_VIDEO, TrainPhase.BASE_VIDEO)
    check_phase_transition(TrainPhase.BASE_VIDEO, TrainPhase.INTERP)
    for source, target in [
        (TrainPhase.SPATIAL_INPAINT, TrainPhase.BASE_VIDEO),
        (TrainPhase.INTERP, TrainPhase.BASE_VIDEO),
        (TrainPhase.AUTOENCODER, TrainPhase.SPATIAL_INPAINT),
    ]:
        with pytest.raises(ConfigurationError):
            check_phase_transition(source, target)
