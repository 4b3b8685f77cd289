# GlobalPaint - training phases and checkpoints
from .batches import TrainingExample, build_training_batch, draw_training_examples, encode_examples
from .checkpoints import (
    Checkpoint,
    TrainPhase,
    check_phase_transition,
    checkpoint_path,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from .trainer import PhaseTrainer, TrainResult, load_codec, load_video_model, train_phase, warmup_lr

__all__ = [
    "TrainingExample",
    "build_training_batch",
    "draw_training_examples",
    "encode_examples",
    "Checkpoint",
    "TrainPhase",
    "check_phase_transition",
    "checkpoint_path",
    "load_checkpoint",
    "read_checkpoint_header",
    "save_checkpoint",
    "PhaseTrainer",
    "TrainResult",
    "load_codec",
    "load_video_model",
    "train_phase",
    "warmup_lr",
]
