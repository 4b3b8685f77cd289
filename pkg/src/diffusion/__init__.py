from .objectives import DiffusionObjective, LatentBatch
from .sampling import GuidedDenoiser, SamplerTrace, cfg_combine, sample_euler_edm
from .schedules import NoiseSchedule, add_noise, karras_sigmas, make_schedule

__all__ = [
    "DiffusionObjective",
    "LatentBatch",
    "GuidedDenoiser",
    "SamplerTrace",
    "cfg_combine",
    "sample_euler_edm",
    "NoiseSchedule",
    "add_noise",
    "karras_sigmas",
    "make_schedule",
]
