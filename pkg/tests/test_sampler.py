"""Test the Euler sampler and classifier-free guidance."""

import csv

import pytest
import torch

from src.core.config import DiffusionSettings, SamplerSettings
from src.core.exceptions import ConfigurationError, ContractError, SamplingError
from src.diffusion.sampling import GuidedDenoiser, SamplerTrace, cfg_combine, sample_euler_edm
from src.diffusion.schedules import make_schedule

MU = 1.0
STD = 0.5
SIGMA_MAX = 80.0


def gaussian_eps(x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Exact noise prediction for data distributed as N(MU, STD²)."""
    return sigma * (x - MU) / (STD**2 + sigma**2)


def exact_flow(x_start: torch.Tensor) -> torch.Tensor:
    return MU + (x_start - MU) * STD / (STD**2 + SIGMA_MAX**2) ** 0.5


def _sample(steps: int, seed: int = 0, size: int = 10_000) -> tuple[torch.Tensor, torch.Tensor]:
    schedule = make_schedule(DiffusionSettings())
    settings = SamplerSettings(steps=steps)
    result = sample_euler_edm(
        gaussian_eps,
        (size,),
        settings,
        schedule,
        torch.Generator().manual_seed(seed),
        dtype=torch.float64,
    )
    start = torch.randn(size, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return result, exact_flow(start * SIGMA_MAX)


def test_gaussian_data_is_recovered():
    """Sampling with the exact denoiser reproduces the data mean and spread."""
    samples, _ = _sample(50)
    assert float(samples.mean()) == pytest.approx(MU, rel=0.05)
    assert float(samples.std()) == pytest.approx(STD, rel=0.05)


def test_error_shrinks_with_more_steps():
    errors = []
    for steps in (12, 25, 50):
        samples, exact = _sample(steps, size=1000)
        errors.append(float((samples - exact).abs().mean()))
    assert errors[0] > errors[1] > errors[2]


def test_only_deterministic_sampling():
    settings = SamplerSettings(steps=3, stochasticity=0.5)
    with pytest.raises(ConfigurationError):
        sample_euler_edm(
            gaussian_eps, (2,), settings, make_schedule(DiffusionSettings()), torch.Generator()
        )


def test_non_finite_state():
    def broken(x, sigma):
        return torch.full_like(x, float("inf"))

    with pytest.raises(SamplingError) as info:
        sample_euler_edm(
            broken,
            (2,),
            SamplerSettings(steps=3),
            make_schedule(DiffusionSettings()),
            torch.Generator(),
        )
    assert info.value.step == 0


def test_trace_records_every_step(tmp_path):
    trace = SamplerTrace()
    sample_euler_edm(
        gaussian_eps,
        (4,),
        SamplerSettings(steps=5),
        make_schedule(DiffusionSettings()),
        torch.Generator().manual_seed(0),
        trace=trace,
    )
    assert [row[0] for row in trace.rows] == [0, 1, 2, 3, 4]
    assert trace.rows[-1][1] == 0.0

    path = trace.to_csv(tmp_path / "trace" / "sampler.csv")
    with path.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "sigma", "latent_norm"]
    assert len(rows) == 6


def test_cfg_combine():
    cond = torch.full((2, 3), 2.0)
    uncond = torch.ones(2, 3)
    assert torch.equal(cfg_combine(cond, uncond, 1.0), cond)
    assert torch.equal(cfg_combine(cond, uncond, 0.0), uncond)
    assert torch.equal(cfg_combine(cond, uncond, 7.5), torch.full((2, 3), 8.5))
    with pytest.raises(ContractError):
        cfg_combine(cond, uncond[:1], 2.0)


class CountingModel(torch.nn.Module):
    """Returns 1 for rows whose text is non-zero and 0 for the null rows."""

    def __init__(self):
        super().__init__()
        self.batch_sizes = []
        self.globals = []

    def forward(self, x, t, text, z_m, m_down, global_tokens):
        self.batch_sizes.append(x.shape[0])
        self.globals.append(global_tokens)
        flag = (text.abs().sum(dim=(1, 2)) > 0).to(x.dtype)
        return flag.view(-1, 1, 1, 1, 1).expand_as(x).clone()


def _guided(model, scale, global_tokens=None):
    return GuidedDenoiser(
        model,
        make_schedule(DiffusionSettings()),
        text=torch.ones(2, 3, 4),
        z_m=torch.zeros(2, 4, 2, 2, 2),
        m_down=torch.ones(2, 1, 2, 2, 2),
        global_tokens=global_tokens,
        text_null=torch.zeros(3, 4),
        global_null=torch.full((5, 4), -1.0),
        scale=scale,
    )


def test_guidance_runs_one_doubled_batch():
    """Both branches go through the network together; the unconditional half gets null tokens."""
    model = CountingModel()
    guided = _guided(model, 3.0, global_tokens=torch.ones(2, 5, 4))
    eps = guided(torch.randn(2, 4, 2, 2, 2), torch.tensor(10.0))

    assert model.batch_sizes == [4]
    assert torch.allclose(eps, torch.full_like(eps, 3.0))
    assert model.globals[0][:2].eq(1).all()
    assert model.globals[0][2:].eq(-1).all()


def test_guidance_scale_one_skips_unconditional_branch():
    model = CountingModel()
    eps = _guided(model, 1.0)(torch.randn(2, 4, 2, 2, 2), torch.tensor(10.0))
    assert model.batch_sizes == [2]
    assert eps.eq(1).all()


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_missing_global_tokens_fall_back_to_null(scale):
    model = CountingModel()
    _guided(model, scale)(torch.randn(2, 4, 2, 2, 2), torch.tensor(1.0))
    assert model.globals[0] is not None
    assert model.globals[0].shape == (model.batch_sizes[0], 5, 4)
    assert model.globals[0].eq(-1).all()
