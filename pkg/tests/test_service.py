import json
import time

import pytest
from fastapi.testclient import TestClient

from plateflow.service import create_app


@pytest.fixture()
def client(synth_stream, tmp_path):
    app = create_app(tmp_path / "data")
    with TestClient(app) as c:
        c.stream_dir = str(synth_stream)
        c.data_dir = tmp_path / "data"
        yield c


def submit_and_wait(client, config=None, timeout=60.0):
    resp = client.post(
        "/api/v1/jobs", json={"stream_path": client.stream_dir, "config": config or {}}
    )
    assert resp.status_code == 201
    job_id = resp.json()["job_id"]
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/api/v1/jobs/{job_id}").json()
        if doc["status"] in ("done", "failed"):
            return job_id, doc
        time.sleep(0.05)
    raise AssertionError("job did not finish in time")


class TestJobLifecycle:
    def test_submit_poll_done(self, client):
        job_id, doc = submit_and_wait(client)
        assert doc["status"] == "done"
        assert doc["stream_id"] == "stream-fix"
        assert doc["progress"]["frames_processed"] == doc["progress"]["frames_total"]

    def test_invalid_stream_rejected(self, client, tmp_path):
        resp = client.post("/api/v1/jobs", json={"stream_path": str(tmp_path / "nope")})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "invalid_stream"

    def test_missing_stream_path_rejected(self, client):
        resp = client.post("/api/v1/jobs", json={})
        assert resp.status_code == 400

    def test_unknown_job_404(self, client):
        resp = client.get("/api/v1/jobs/deadbeef")
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "not_found"

    def test_bad_backbone_fails_job(self, client):
        job_id, doc = submit_and_wait(client, config={"backbone": "quantum"})
        assert doc["status"] == "failed"
        assert doc["error"]


class TestInstancesAndCandidates:
    def test_lists_three_instances(self, client):
        job_id, _ = submit_and_wait(client)
        doc = client.get(f"/api/v1/jobs/{job_id}/instances").json()
        assert doc["v"] == 1
        assert len(doc["instances"]) == 3
        for inst in doc["instances"]:
            assert inst["decision"] is None
            assert inst["chosen_rank"] == 1
            assert 1 <= len(inst["candidates"]) <= 3

    def test_candidate_png_served(self, client):
        job_id, _ = submit_and_wait(client)
        inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
        resp = client.get(f"/api/v1/instances/{job_id}/{inst['id']}/candidates/1.png")
        assert resp.status_code == 200
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_candidate_404(self, client):
        job_id, _ = submit_and_wait(client)
        resp = client.get(f"/api/v1/instances/{job_id}/0/candidates/9.png")
        assert resp.status_code == 404


class TestReviewFlow:
    def truth(self, client):
        import pathlib

        manifest = json.loads(
            (pathlib.Path(client.stream_dir) / "ocr_manifest.json").read_text(encoding="utf-8")
        )
        return manifest["streams"]["stream-fix"]

    def test_select_rank_triggers_ocr(self, client):
        job_id, _ = submit_and_wait(client)
        inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
        rank = min(2, len(inst["candidates"]))
        resp = client.post(
            f"/api/v1/instances/{job_id}/{inst['id']}/select", json={"rank": rank}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["chosen_rank"] == rank
        # built-in OCR decodes the synthetic crop back to the true plate text
        assert body["ocr_text"] == self.truth(client)[str(inst["id"])]

    def test_invalid_rank_rejected(self, client):
        job_id, _ = submit_and_wait(client)
        inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
        resp = client.post(f"/api/v1/instances/{job_id}/{inst['id']}/select", json={"rank": 99})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "invalid_rank"

    def test_save_is_idempotent_and_persisted(self, client):
        job_id, _ = submit_and_wait(client)
        inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
        first = client.post(f"/api/v1/instances/{job_id}/{inst['id']}/save")
        assert first.status_code == 200
        rec = first.json()
        assert rec["decision"] == "saved"
        assert rec["chosen_rank"] == 1
        assert rec["ocr_text"] == self.truth(client)[str(inst["id"])]
        assert rec["ocr_text_normalized"]
        again = client.post(f"/api/v1/instances/{job_id}/{inst['id']}/save")
        assert again.json() == rec
        results = client.get("/api/v1/results").json()["results"]
        assert [r for r in results if r["decision"] == "saved"] == [rec]
        # append-only log on disk holds exactly one line
        log = (client.data_dir / "results.jsonl").read_text(encoding="utf-8").strip().splitlines()
        assert len(log) == 1

    def test_saved_record_is_immutable(self, client):
        job_id, _ = submit_and_wait(client)
        inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
        client.post(f"/api/v1/instances/{job_id}/{inst['id']}/save")
        resp = client.post(f"/api/v1/instances/{job_id}/{inst['id']}/select", json={"rank": 1})
        assert resp.status_code == 409

    def test_delete_hides_instance_and_blocks_save(self, client):
        job_id, _ = submit_and_wait(client)
        instances = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"]
        target = instances[1]["id"]
        resp = client.delete(f"/api/v1/instances/{job_id}/{target}")
        assert resp.status_code == 200
        remaining = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"]
        assert len(remaining) == len(instances) - 1
        assert all(i["id"] != target for i in remaining)
        conflict = client.post(f"/api/v1/instances/{job_id}/{target}/save")
        assert conflict.status_code == 409
        # repeated delete is a no-op, not an error
        again = client.delete(f"/api/v1/instances/{job_id}/{target}")
        assert again.status_code == 200

    def test_results_log_replay_order(self, client):
        job_id, _ = submit_and_wait(client)
        instances = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"]
        client.post(f"/api/v1/instances/{job_id}/{instances[0]['id']}/save")
        client.delete(f"/api/v1/instances/{job_id}/{instances[1]['id']}")
        client.post(f"/api/v1/instances/{job_id}/{instances[2]['id']}/save")
        results = client.get("/api/v1/results").json()["results"]
        assert [r["decision"] for r in results] == ["saved", "deleted", "saved"]
        stamps = [r["timestamp"] for r in results]
        assert stamps == sorted(stamps)


class TestHttpOcrPath:
    def test_service_uses_external_ocr_when_configured(self, synth_stream, tmp_path):
        from plateflow.ocr import MockOcrServer

        with MockOcrServer(fixed_text="ঘ০০০") as server:
            app = create_app(tmp_path / "data2", ocr_url=server.url)
            with TestClient(app) as client:
                client.stream_dir = str(synth_stream)
                job_id, _ = submit_and_wait(client)
                inst = client.get(f"/api/v1/jobs/{job_id}/instances").json()["instances"][0]
                rec = client.post(f"/api/v1/instances/{job_id}/{inst['id']}/save").json()
                assert rec["ocr_text"] == "ঘ০০০"
