import numpy as np
import pytest

from mfglab.coefficients import build_coefficients
from mfglab.measures import EmpiricalMeasure
from mfglab.models import CoefficientSpec, PicardSpec, ProbeSpec, SamplerSpec, ScenarioConfig
from mfglab.solver import picard_solve


def make_scenario(family: str = "lq", params: dict | None = None, **overrides) -> ScenarioConfig:
    """Small deterministic scenario; sizes are kept low so the suite stays fast."""
    data = dict(
        name="test",
        T=0.2,
        dt=0.02,
        N=200,
        M=1,
        sigma_x=0.0,
        stencil_size=9,
        seed=3,
        coefficients=CoefficientSpec(family=family, params=params or {}),
        picard=PicardSpec(tol=1e-9, max_iter=60),
        probe=ProbeSpec(n_pairs=40, n_growth_samples=40),
    )
    data.update(overrides)
    return ScenarioConfig(**data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gaussian_sampler():
    return SamplerSpec(n_atoms=32)


@pytest.fixture(scope="module")
def lq_params():
    return {"p": 1.0, "p_bar": 0.25, "q": 1.0, "q_bar": 0.25}


@pytest.fixture(scope="module")
def lq_scenario(lq_params):
    return make_scenario("lq", lq_params)


@pytest.fixture(scope="module")
def lq_field(lq_scenario):
    cs = build_coefficients(lq_scenario.coefficients)
    return picard_solve(cs, lq_scenario)


def uniform(points) -> EmpiricalMeasure:
    return EmpiricalMeasure.uniform(points)
