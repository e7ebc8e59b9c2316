import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

from patchbench.main import app
from patchbench.routers.corpus import get_corpus_dir
from patchbench.routers.results import get_detail, get_results_dir
from patchbench.services.tasks import ApRecord, summarize
from patchbench.store.results import write_results


@pytest.fixture
def results_dir(tmp_path):
    records = [
        ApRecord("matching", "easy", "viewpoint", "v_a:1", 0.5),
        ApRecord("matching", "easy", "illumination", "i_b:1", 1.0),
        ApRecord("retrieval", "easy", "", "v_a:0", 0.25),
    ]
    write_results(summarize({"sift": records}, ["easy"]), tmp_path / "results")
    return tmp_path / "results"


@pytest.fixture
def client(results_dir, stored_corpus):
    app.dependency_overrides[get_results_dir] = lambda: results_dir
    app.dependency_overrides[get_corpus_dir] = lambda: stored_corpus
    yield TestClient(app)
    app.dependency_overrides.clear()


@pytest.fixture
def empty_client(tmp_path):
    app.dependency_overrides[get_results_dir] = lambda: tmp_path / "no-results"
    app.dependency_overrides[get_corpus_dir] = lambda: tmp_path / "no-corpus"
    yield TestClient(app)
    app.dependency_overrides.clear()


def test_health(client):
    assert client.get("/health").json() == {"ok": True}


def test_summary(client):
    body = client.get("/results/summary").json()
    assert body["rows"] == [
        {"descriptor": "sift", "task": "matching", "map": 0.75},
        {"descriptor": "sift", "task": "retrieval", "map": 0.25},
    ]


def test_plot_data(client):
    points = client.get("/results/plot-data").json()["points"]
    assert [(p["task"], p["subvariant"]) for p in points] == [
        ("matching", "illumination"),
        ("matching", "viewpoint"),
        ("retrieval", ""),
    ]


def test_detail(client):
    body = client.get("/results/sift/matching").json()
    assert body["count"] == 2
    assert body["records"][0] == {
        "task": "matching",
        "variant": "easy",
        "subvariant": "viewpoint",
        "id": "v_a:1",
        "ap": 0.5,
    }


def test_detail_not_found(client):
    assert client.get("/results/sift/verification").status_code == 404
    assert client.get("/results/brief/matching").status_code == 404
    assert client.get("/results/sift/ranking").status_code == 404


def test_detail_stays_inside_the_results_directory(results_dir):
    with pytest.raises(HTTPException) as info:
        get_detail("..", "matching", results_dir=results_dir)
    assert info.value.status_code == 404


def test_missing_results_are_404(empty_client):
    assert empty_client.get("/results/summary").status_code == 404
    assert empty_client.get("/results/plot-data").status_code == 404
    assert empty_client.get("/corpus/manifest").status_code == 404


def test_corpus_manifest(client):
    body = client.get("/corpus/manifest").json()
    assert body["master_seed"] == 7
    assert body["variants"] == ["easy"]
    assert body["noise_profiles"]["easy"]["theta_max"] == 10.0
    assert len(body["sequences"]) == 4


def test_corpus_sequence(client):
    seq_id = client.get("/corpus/manifest").json()["sequences"][0]["id"]
    body = client.get(f"/corpus/sequences/{seq_id}").json()
    assert body["id"] == seq_id
    assert len(body["homographies"]) == 5
    assert all(len(h) == 9 for h in body["homographies"])
    assert body["files"] and all(f["path"].startswith(f"{seq_id}/") for f in body["files"])
    assert client.get("/corpus/sequences/v_nowhere").status_code == 404
