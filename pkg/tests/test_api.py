import pytest
from fastapi.testclient import TestClient

from app.core.config import get_settings
from app.main import app

API = get_settings().API_PREFIX


@pytest.fixture
def client():
    return TestClient(app)


def test_root_and_health(client):
    assert client.get("/health").json() == {"status": "healthy"}
    body = client.get("/").json()
    assert body["endpoints"]["run"] == f"{API}/experiments/run"


def test_presets(client):
    body = client.get(f"{API}/experiments/presets").json()
    assert body["algorithms"] == ["MDSL", "MultiDSL", "VanillaDSL", "FedAvg"]
    assert [g["count"] for g in body["cases"]["case2"]] == [20, 15, 10, 5]
    assert body["degree"]["mnist"]["beta2"] == 0.127


def test_partition_run_analyze(client, tmp_path, config_factory):
    config = config_factory(rounds=3).model_dump(mode="json")

    resp = client.post(f"{API}/experiments/partition", json={"config": config, "out_dir": str(tmp_path / "p")})
    assert resp.status_code == 200
    assert resp.json()["command"] == "partition"

    resp = client.post(f"{API}/experiments/run", json={"config": config, "out_dir": str(tmp_path / "r")})
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["rounds"]) == 3
    assert body["comm_upload_total"] == sum(r["comm_upload"] for r in body["rounds"])

    resp = client.post(f"{API}/experiments/analyze", json={"trace_path": str(tmp_path / "r"), "num_probes": 3})
    assert resp.status_code == 200
    assert resp.json()["L_hat"] > 0
    assert (tmp_path / "r" / "diagnostics.json").exists()


def test_invalid_config_is_rejected(client, config_factory):
    config = config_factory().model_dump(mode="json")
    config["tau"] = 2.0
    assert client.post(f"{API}/experiments/run", json={"config": config}).status_code == 422


def test_missing_trace_maps_to_400(client, tmp_path):
    resp = client.post(f"{API}/experiments/analyze", json={"trace_path": str(tmp_path / "none.json")})
    assert resp.status_code == 400
    assert "cannot read" in resp.json()["detail"]


def test_unwritable_output_maps_to_400(client, tmp_path, config_factory):
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    config = config_factory(rounds=1).model_dump(mode="json")
    resp = client.post(f"{API}/experiments/run", json={"config": config, "out_dir": str(blocker / "run")})
    assert resp.status_code == 400
