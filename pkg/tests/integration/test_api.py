"""
HTTP tests of the FastAPI service.
"""
import sys
import os

# Add repository root to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

import pytest
from fastapi.testclient import TestClient

from api.main import app
from deepteam.presets import example2_model

client = TestClient(app)


def test_root_and_health():
    assert client.get("/").json()["service"] == "deepteam"
    assert client.get("/health").json()["status"] == "healthy"


def test_presets_listing():
    body = client.get("/api/presets").json()
    assert set(body) == {"example1", "example2"}
    assert body["example2"]["defaults"]["mode"] == "zo-pg"
    assert body["example1"]["risk_factor"] == pytest.approx(0.1)
    assert body["example1"]["agents"] == 10


def test_riccati_for_preset():
    response = client.post("/api/riccati", json={"preset": "example2"})
    assert response.status_code == 200
    body = response.json()
    assert body["policy"]["theta"][0][0][0] == pytest.approx(-0.5)
    assert body["policy"]["theta_bar"][0][0] == pytest.approx(-0.6180339887)
    assert body["P"][0][0][0] == pytest.approx(2.0)


def test_riccati_for_inline_model():
    model = example2_model().model_dump()
    response = client.post("/api/riccati", json={"model": model, "risk_factor": 0.0})
    assert response.status_code == 200
    assert response.json()["risk_factor"] == 0.0


def test_invalid_model_is_422():
    model = example2_model().model_dump()
    model["subs"][0]["alpha"] = [[2.0]] * 10
    response = client.post("/api/riccati", json={"model": model})
    assert response.status_code == 422
    assert "ALPHA" in response.json()["detail"] or "alpha" in response.json()["detail"]


def test_infeasible_risk_is_409():
    response = client.post("/api/riccati", json={"preset": "example1", "risk_factor": 100.0})
    assert response.status_code == 409
    assert response.json()["detail"].startswith("FeasibilityLost")


def test_experiment_endpoint():
    response = client.post("/api/experiment", json={"preset": "example2", "mode": "riccati"})
    assert response.status_code == 200
    body = response.json()
    assert body["exit_code"] == 0
    assert body["mode"] == "riccati"
    assert body["oracle_cost"] > 0


def test_experiment_config_errors_are_422():
    assert client.post("/api/experiment", json={"preset": "example2", "colour": "red"}).status_code == 422
    assert client.post("/api/experiment", json={"preset": "example1", "mode": "zo-pg"}).status_code == 422
