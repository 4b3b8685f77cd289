"""Training loops for the autoencoder, spatial inpainting, base video and interpolation phases."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog
import torch
from tqdm.auto import trange

from src.core.config import AutoencoderSettings, Settings
from src.core.exceptions import ConfigurationError, ContractError, TrainingError
from src.diffusion.objectives import DiffusionObjective
from src.diffusion.schedules import make_schedule
from src.models.autoencoder import LatentCodec, ToyAutoencoder, train_autoencoder
from src.models.context import build_context_encoder
from src.models.denoiser import GlobalPaintNet, build_denoiser, freeze_spatial, parameter_groups
from src.video.dataset import ClipDataset

from .batches import build_training_batch
from .checkpoints import (
    Checkpoint,
    TrainPhase,
    check_phase_transition,
    checkpoint_path,
    load_checkpoint,
    save_checkpoint,
)

logger = structlog.get_logger()

PREREQUISITES: dict[TrainPhase, tuple[TrainPhase, ...]] = {
    TrainPhase.AUTOENCODER: (),
    TrainPhase.SPATIAL_INPAINT: (TrainPhase.AUTOENCODER,),
    TrainPhase.BASE_VIDEO: (TrainPhase.AUTOENCODER, TrainPhase.SPATIAL_INPAINT),
    TrainPhase.INTERP: (TrainPhase.AUTOENCODER, TrainPhase.BASE_VIDEO),
}


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list[float] = field(default_factory=list)


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warm-up: update ``step`` (1-based) uses base_lr · min(step, warmup) / warmup."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step, warmup_steps) / warmup_steps


def parameter_counts(model: torch.nn.Module) -> dict[str, int]:
    """Number of trainable and frozen scalars, the complexity figure reported per checkpoint."""
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    frozen = sum(p.numel() for p in model.parameters() if not p.requires_grad)
    return {"trainable": trainable, "frozen": frozen}


def find_prerequisites(run_dir: Path, phase: TrainPhase) -> dict[TrainPhase, Path]:
    """
    Final checkpoints of the phases ``phase`` depends on.

    Raises:
        ConfigurationError: if one of them has not been trained yet
    """
    found = {}
    for required in PREREQUISITES[phase]:
        path = checkpoint_path(run_dir, required)
        if not path.is_file():
            raise ConfigurationError(
                f"phase '{phase.value}' needs a '{required.value}' checkpoint at {path}"
            )
        found[required] = path
    return found


def load_codec(path: Path) -> LatentCodec:
    """Rebuild and freeze the autoencoder stored in an autoencoder-phase checkpoint."""
    checkpoint = load_checkpoint(path)
    if checkpoint.phase is not TrainPhase.AUTOENCODER:
        raise ConfigurationError(
            f"{path} is a '{checkpoint.phase.value}' checkpoint, not an autoencoder"
        )
    codec = ToyAutoencoder(AutoencoderSettings(**checkpoint.config.get("autoencoder", {})))
    codec.load_state_dict(checkpoint.model_state)
    return codec.freeze()


def load_video_model(path: Path, settings: Settings, phase: TrainPhase) -> GlobalPaintNet:
    """
    Load a base_video or interp checkpoint into a freshly built video model.

    Raises:
        ContractError: if the checkpoint does not fit the configured architecture
    """
    checkpoint = load_checkpoint(path)
    check_phase_transition(checkpoint.phase, phase)
    model, _ = build_denoiser(settings.denoiser, settings.conditioning)
    try:
        model.load_state_dict(checkpoint.model_state)
    except RuntimeError as error:
        raise ContractError(
            f"checkpoint {path} does not match the configured model: {error}"
        ) from error
    return model.eval()


def _autoencoder_frames(dataset: ClipDataset) -> tuple[torch.Tensor, torch.Tensor | None]:
    clips = [record.clip.frames for record in dataset.records]
    if len(clips) == 1:
        return clips[0], None
    held_out = max(1, len(clips) // 10)
    return torch.cat(clips[:-held_out]), torch.cat(clips[-held_out:])


class PhaseTrainer:
    """Runs one diffusion training phase and writes checkpoints plus a CSV loss log."""

    def __init__(
        self,
        settings: Settings,
        phase: TrainPhase,
        dataset: ClipDataset,
        run_dir: Path,
        resume: Path | None = None,
        steps: int | None = None,
    ):
        if phase is TrainPhase.AUTOENCODER:
            raise ConfigurationError("use train_phase for the autoencoder phase")
        self.settings = settings
        self.phase = phase
        self.dataset = dataset
        self.run_dir = Path(run_dir)
        self.training = settings.training
        self.total_steps = steps if steps is not None else self.training.total_steps[phase.value]
        self.base_lr = self.training.learning_rates[phase.value]
        self.warmup_steps = min(self.training.warmup_steps.get(phase.value, 0), self.total_steps)

        prerequisites = find_prerequisites(self.run_dir, phase)
        torch.manual_seed(self.training.seed)
        self.codec = load_codec(prerequisites[TrainPhase.AUTOENCODER])
        self.context_encoder = build_context_encoder(settings.conditioning)
        self.model = self._build_model(prerequisites)
        self.groups = parameter_groups(self.model)
        self.parameters = [p for p in self.model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.AdamW(
            self.parameters,
            lr=self.base_lr,
            betas=self.training.betas,
            weight_decay=self.training.weight_decay,
        )
        self.start_step = 0
        if resume is not None:
            self._resume(resume)

        self.objective = DiffusionObjective(
            self.model, make_schedule(settings.diffusion), p_drop=settings.conditioning.p_drop
        )
        self.loss_fn = {
            TrainPhase.SPATIAL_INPAINT: self.objective.loss_inpaint,
            TrainPhase.BASE_VIDEO: self.objective.loss_globalpaint,
            TrainPhase.INTERP: self.objective.loss_interp,
        }[phase]

    def _build_model(self, prerequisites: dict[TrainPhase, Path]) -> GlobalPaintNet:
        if self.phase is TrainPhase.SPATIAL_INPAINT:
            spatial = self.settings.denoiser.model_copy(update={"temporal": False})
            model, _ = build_denoiser(spatial, self.settings.conditioning)
            return model
        if self.phase is TrainPhase.BASE_VIDEO:
            spatial_state = load_checkpoint(prerequisites[TrainPhase.SPATIAL_INPAINT]).model_state
            model, _ = build_denoiser(
                self.settings.denoiser, self.settings.conditioning, spatial_init=spatial_state
            )
            return model
        model = load_video_model(prerequisites[TrainPhase.BASE_VIDEO], self.settings, self.phase)
        freeze_spatial(model)
        return model

    def _resume(self, path: Path) -> None:
        checkpoint = load_checkpoint(path)
        check_phase_transition(checkpoint.phase, self.phase)
        self.model.load_state_dict(checkpoint.model_state)
        if checkpoint.phase is self.phase:
            self.start_step = checkpoint.step
            if checkpoint.optimizer_state is not None:
                self.optimizer.load_state_dict(checkpoint.optimizer_state)
        logger.info(
            "training_resumed", path=str(path), phase=self.phase.value, step=self.start_step
        )

    def _checkpoint(self, step: int, path: Path) -> Path:
        checkpoint = Checkpoint(
            phase=self.phase,
            step=step,
            model_state=self.model.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
            config=self.settings.snapshot(),
            groups=self.groups,
            extra={
                "config_hash": self.settings.config_hash(),
                "parameter_counts": parameter_counts(self.model),
            },
        )
        return save_checkpoint(checkpoint, path)

    def run(self) -> TrainResult:
        rng = np.random.default_rng(self.training.seed + self.start_step)
        generator = torch.Generator().manual_seed(self.training.seed + self.start_step)
        log_path = self.run_dir / self.phase.value / "loss.csv"
        log_path.parent.mkdir(parents=True, exist_ok=True)

        losses: list[float] = []
        last_good: Path | None = None
        self.model.train()
        with log_path.open("a" if self.start_step else "w", newline="") as handle:
            writer = csv.writer(handle)
            if not self.start_step:
                writer.writerow(["step", "phase", "loss", "lr"])

            for step in trange(
                self.start_step + 1,
                self.total_steps + 1,
                desc=self.phase.value,
                disable=self.total_steps < 50,
            ):
                lr = warmup_lr(step, self.base_lr, self.warmup_steps)
                for group in self.optimizer.param_groups:
                    group["lr"] = lr

                batch = build_training_batch(
                    self.dataset, self.settings, self.phase, rng, self.codec, self.context_encoder
                )
                try:
                    loss = self.loss_fn(batch, generator)
                except TrainingError as error:
                    raise TrainingError(
                        f"{self.phase.value} loss diverged",
                        step=step,
                        diagnostics=error.diagnostics,
                        last_checkpoint=last_good,
                    ) from error

                self.optimizer.zero_grad(set_to_none=True)
                loss.backward()
                grad_norm = torch.nn.utils.clip_grad_norm_(
                    self.parameters, self.training.grad_clip_norm
                )
                self.optimizer.step()

                value = float(loss)
                losses.append(value)
                writer.writerow([step, self.phase.value, f"{value:.6f}", f"{lr:.3e}"])
                if step % self.training.log_every == 0 or step == self.total_steps:
                    logger.info(
                        "training_step",
                        phase=self.phase.value,
                        step=step,
                        loss=value,
                        lr=lr,
                        grad_norm=float(grad_norm),
                    )
                if step % self.training.checkpoint_every == 0:
                    path = checkpoint_path(self.run_dir, self.phase, step)
                    last_good = self._checkpoint(step, path)

        final = self._checkpoint(self.total_steps, checkpoint_path(self.run_dir, self.phase))
        logger.info(
            "phase_completed", phase=self.phase.value, steps=len(losses), checkpoint=str(final)
        )
        return TrainResult(checkpoint=final, losses=losses)


def train_phase(
    settings: Settings,
    phase: TrainPhase,
    dataset: ClipDataset,
    run_dir: Path,
    resume: Path | None = None,
    steps: int | None = None,
) -> TrainResult:
    """
    Train one phase; prerequisite checkpoints are looked up under ``run_dir``.

    Raises:
        ConfigurationError: missing prerequisite phase or incompatible resume checkpoint
        TrainingError: non-finite loss, carrying the last good checkpoint path
    """
    if phase is not TrainPhase.AUTOENCODER:
        return PhaseTrainer(settings, phase, dataset, run_dir, resume=resume, steps=steps).run()

    frames, held_out = _autoencoder_frames(dataset)
    codec = train_autoencoder(
        frames, settings.autoencoder, held_out=held_out, seed=settings.training.seed, steps=steps
    )
    checkpoint = Checkpoint(
        phase=TrainPhase.AUTOENCODER,
        step=steps if steps is not None else settings.autoencoder.steps,
        model_state=codec.state_dict(),
        config=settings.snapshot(),
        extra={
            "downsample_factor": codec.downsample_factor,
            "latent_channels": codec.latent_channels,
            "latent_scale": float(codec.latent_scale),
            "config_hash": settings.config_hash(),
        },
    )
    return TrainResult(checkpoint=save_checkpoint(checkpoint, checkpoint_path(run_dir, phase)))
