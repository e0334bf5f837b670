"""Pytest fixtures: app clients, small discrete models, output dir."""
import numpy as np
import pytest
from fastapi.testclient import TestClient
from httpx import ASGITransport, AsyncClient

from app.config import settings
from app.main import app
from app.models import build_gaussian_t_model
from app.services.discrete_model import load_discrete_model, pi_equals_q_model, two_state_model
from app.services.transition_service import transition_stack


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240521)


@pytest.fixture
def normal_t():
    """N(0, 1) target, Student-t(3) proposal."""
    return build_gaussian_t_model()


@pytest.fixture
def two_state():
    return two_state_model()


@pytest.fixture
def pi_eq_q():
    return pi_equals_q_model([1.0, 2.0, 3.0, 4.0], [0.1, 0.2, 0.3, 0.4])


@pytest.fixture(scope="session")
def exp1_model():
    model, _ = load_discrete_model("experiment1")
    return model


@pytest.fixture(scope="session")
def exp1_stack(exp1_model):
    """Integral stack N = 1..31 for experiment1."""
    return transition_stack(exp1_model, 30, "integral", workers=1)


@pytest.fixture
def two_state_stack(two_state):
    return transition_stack(two_state, 20, "enumerate", workers=1)


@pytest.fixture
def pi_eq_q_stack(pi_eq_q):
    return transition_stack(pi_eq_q, 12, "enumerate", workers=1)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "output_dir", str(tmp_path))
    return tmp_path


@pytest.fixture
def client() -> TestClient:
    with TestClient(app) as c:
        yield c


@pytest.fixture
async def async_client():
    async with AsyncClient(
        transport=ASGITransport(app=app),
        base_url="http://test",
    ) as ac:
        yield ac
