from fastapi.testclient import TestClient

from nikodym.main import app
from nikodym.services import run_catalog

client = TestClient(app)


def test_health():
    res = client.get("/health")
    assert res.status_code == 200
    assert res.json() == {"ok": True}


def test_presets_filter():
    res = client.get("/presets", params={"q": "suite"})
    assert res.status_code == 200
    names = [p["name"] for p in res.json()]
    assert names == ["curve-suite", "cutoff-suite", "rescaling-suite"]
    assert client.get("/presets", params={"q": "zzz"}).json() == []


def test_unknown_run_is_404():
    assert client.get("/runs/999999").status_code == 404
    assert client.get("/runs/999999/report.html").status_code == 404


def test_catalogued_run_without_artifacts(tmp_path):
    row = run_catalog.record_run(
        config_hash="0123456789abcdef", preset="cutoff-suite", curve="circle2d", status="ok",
        output_path=str(tmp_path / "gone"), library_version="test", wall_time=0.1,
    )
    assert row is not None
    listed = client.get("/runs", params={"preset": "cutoff-suite"}).json()
    assert any(r["id"] == row.id for r in listed)
    detail = client.get(f"/runs/{row.id}").json()
    assert detail["run"]["config_hash"] == "0123456789abcdef"
    assert detail["manifest"] is None and detail["report"] is None
    assert client.get(f"/runs/{row.id}/report.html").status_code == 404
