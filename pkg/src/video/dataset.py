"""Collections of clips with prompts, on disk or generated."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog

from src.core.config import DataSettings
from src.core.exceptions import ClipIOError, ClipNotFoundError

from .clip import VideoClip
from .io import list_frame_files, load_clip, save_clip
from .synthetic import generate_toy_clip, random_scene

logger = structlog.get_logger()

PROMPT_FILE = "prompt.txt"


@dataclass
class ClipRecord:
    """A clip together with its text prompt."""

    clip: VideoClip
    prompt: str


@dataclass
class ClipDataset:
    """Ordered list of clip records."""

    records: list[ClipRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> ClipRecord:
        return self.records[index]

    @classmethod
    def synthetic(cls, settings: DataSettings, downsample_factor: int = 8) -> "ClipDataset":
        """Generate ``settings.num_clips`` toy clips from ``settings.seed``."""
        rng = np.random.default_rng(settings.seed)
        records = []
        for index in range(settings.num_clips):
            scene = random_scene(rng, settings)
            clip = generate_toy_clip(scene, downsample_factor)
            clip.source_id = f"toy_{index:04d}"
            records.append(ClipRecord(clip=clip, prompt=scene.caption()))
        logger.info("synthetic_dataset_generated", clips=len(records), seed=settings.seed)
        return cls(records)

    @classmethod
    def from_directory(cls, root: Path) -> "ClipDataset":
        """
        Load every sub-folder of ``root`` that contains frames.

        The prompt is read from ``prompt.txt`` when present, otherwise the folder name is used.
        """
        root = Path(root)
        if not root.is_dir():
            raise ClipNotFoundError(f"dataset folder not found: {root}")
        records = []
        for folder in sorted(p for p in root.iterdir() if p.is_dir()):
            if not list_frame_files(folder):
                continue
            records.append(ClipRecord(clip=load_clip(folder), prompt=read_prompt(folder)))
        if not records:
            raise ClipNotFoundError(f"no clip folders in {root}")
        logger.info("dataset_loaded", root=str(root), clips=len(records))
        return cls(records)

    def save(self, root: Path) -> None:
        """Write each clip as a frame folder with its prompt file."""
        root = Path(root)
        for record in self.records:
            folder = root / record.clip.source_id
            save_clip(record.clip, folder)
            try:
                (folder / PROMPT_FILE).write_text(record.prompt + "\n", encoding="utf-8")
            except OSError as e:
                raise ClipIOError(f"cannot write the prompt for {folder}: {e}") from e
        logger.info("dataset_saved", root=str(root), clips=len(self.records))


def read_prompt(folder: Path) -> str:
    """Prompt for a clip folder: prompt.txt or the folder name."""
    prompt_path = folder / PROMPT_FILE
    if prompt_path.is_file():
        try:
            return prompt_path.read_text(encoding="utf-8").strip()
        except OSError as e:
            raise ClipIOError(f"cannot read {prompt_path}: {e}") from e
    return folder.name.replace("_", " ").replace("-", " ")
