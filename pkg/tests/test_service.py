"""Vote-collection service: durability, concurrency, and the HTTP surface."""

from __future__ import annotations

import threading

import pytest
from fastapi.testclient import TestClient

from util import (
    load_predicate_vectors,
    make_image,
    make_object,
    task_queue_bundle,
    two_image_bundle,
    within_pair,
)
from vrd25.dataio import DatasetBundle, votes_csv_text
from vrd25.depthmaps import write_png_gray
from vrd25.model import Box, Depth, Occlusion, Setting, Split, ValidationError
from vrd25.service import (
    AnnotationStore,
    VoteConflictError,
    create_app,
)

import numpy as np


def _store(tmp_path, bundle=None, required_eval_votes=5, **kwargs):
    bundle = bundle or two_image_bundle()
    return AnnotationStore(
        bundle, tmp_path / "journal.csv", required_eval_votes=required_eval_votes, **kwargs
    )


def test_required_votes_split_rule(tmp_path):
    im_train = make_image("tr", split=Split.TRAIN)
    im_val = make_image("va", split=Split.VALIDATION)
    a = make_object("tr/a", "tr", Box(0.1, 0.1, 0.4, 0.4))
    b = make_object("tr/b", "tr", Box(0.5, 0.5, 0.9, 0.9))
    c = make_object("va/c", "va", Box(0.1, 0.1, 0.4, 0.4))
    d = make_object("va/d", "va", Box(0.5, 0.5, 0.9, 0.9))
    bundle = DatasetBundle(
        images=[im_train, im_val], objects=[a, b, c, d],
        pairs=[within_pair(a, b), within_pair(c, d)],
    )
    store = _store(tmp_path, bundle)
    train_task = store.tasks[bundle.pairs[0].pair_id]
    eval_task = store.tasks[bundle.pairs[1].pair_id]
    assert train_task.required_votes == 1
    assert eval_task.required_votes == 5

    store.submit_vote(train_task.task_id, "r0", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    assert train_task.closed
    with pytest.raises(VoteConflictError, match="every vote"):
        store.submit_vote(train_task.task_id, "r1", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    store.submit_vote(eval_task.task_id, "r0", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    assert not eval_task.closed


def test_store_rejects_zero_required_votes(tmp_path):
    with pytest.raises(ValidationError):
        _store(tmp_path, required_eval_votes=0)


def test_next_task_prefers_nearest_completion(tmp_path):
    store = _store(tmp_path, task_queue_bundle(3), required_eval_votes=2)
    ids = sorted(store.tasks)
    store.submit_vote(ids[1], "r0", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)

    assert store.next_task("r9").task_id == ids[1]  # one vote in, closest to done
    assert store.next_task("r0").task_id == ids[0]  # r0 already voted on ids[1]
    assert store.next_task("r9", Setting.ACROSS) is None

    store.submit_vote(ids[1], "r1", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    assert store.tasks[ids[1]].closed
    assert store.next_task("r9").task_id == ids[0]


def test_predicate_vectors_match_http_responses(tmp_path):
    store = _store(tmp_path, required_eval_votes=50)
    client = TestClient(create_app(store))
    task_of = {
        "within": "w#im1/a#im1/b",
        "across": "x#im1/a#im2/c",
    }
    accepted = {"within": 0, "across": 0}
    for i, (setting, depth, occlusion, ok) in enumerate(load_predicate_vectors()):
        payload = {"rater_id": f"v{i}", "depth": depth}
        if occlusion is not None:
            payload["occlusion"] = occlusion
        url = f"/api/tasks/{task_of[setting].replace('#', '%23').replace('/', '%2F')}/vote"
        response = client.post(url, json=payload)
        if ok:
            assert response.status_code == 200, (setting, depth, occlusion, response.text)
            assert response.json()["status"] == "accepted"
            accepted[setting] += 1
        else:
            assert response.status_code == 422, (setting, depth, occlusion)
    assert store.tasks[task_of["within"]].collected_votes == accepted["within"]
    assert store.tasks[task_of["across"]].collected_votes == accepted["across"]
    assert accepted["within"] > 0 and accepted["across"] > 0


def test_vote_url_round_trip_over_http(tmp_path):
    store = _store(tmp_path)
    client = TestClient(create_app(store))
    task = client.get("/api/tasks/next", params={"rater_id": "r0"}).json()
    assert "#" not in task["vote_url"]
    assert task["setting"] in ("within", "across")
    assert task["image_a"]["url"] == f"/static/images/{task['image_a']['image_id']}"
    assert task["image_a"]["width"] == 64
    assert set(task["box_a"]) == {"xmin", "ymin", "xmax", "ymax"}

    payload = {"rater_id": "r0", "depth": 0}
    if task["setting"] == "within":
        payload["occlusion"] = 0
    response = client.post(task["vote_url"], json=payload)
    assert response.status_code == 200
    assert response.json()["task_id"] == task["task_id"]
    assert store.tasks[task["task_id"]].collected_votes == 1


def test_http_error_codes(tmp_path):
    store = _store(tmp_path)
    client = TestClient(create_app(store))
    ok_task = next(iter(sorted(store.tasks)))
    url = f"/api/tasks/{ok_task.replace('#', '%23').replace('/', '%2F')}/vote"

    assert client.post("/api/tasks/nope/vote", json={"rater_id": "r", "depth": 0}).status_code == 404
    assert client.post(url, json={"depth": 0}).status_code == 422  # missing rater
    assert client.post(url, json={"rater_id": "bad rater!", "depth": 0}).status_code == 422
    assert client.post(url, json={"rater_id": "r", "depth": "x"}).status_code == 422
    assert client.post(url, json={"rater_id": "r", "depth": 9}).status_code == 422
    assert client.get("/api/tasks/next", params={"rater_id": "bad rater!"}).status_code == 422
    assert client.get("/api/tasks/next", params={"rater_id": "r", "setting": "sideways"}).status_code == 422


def test_duplicate_votes_one_success_under_hammering(tmp_path):
    store = _store(tmp_path)
    app = create_app(store)
    task_id = sorted(store.tasks)[0]
    url = f"/api/tasks/{task_id.replace('#', '%23').replace('/', '%2F')}/vote"
    payload = {"rater_id": "dup", "depth": 0, "occlusion": 0}
    codes = []
    lock = threading.Lock()

    def hammer():
        client = TestClient(app)
        code = client.post(url, json=payload).status_code
        with lock:
            codes.append(code)

    threads = [threading.Thread(target=hammer) for _ in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(codes) == [200] + [409] * 11
    assert store.tasks[task_id].collected_votes == 1


def test_concurrent_raters_fill_queue_exactly(tmp_path):
    bundle = task_queue_bundle(60)
    store = _store(tmp_path, bundle, required_eval_votes=5)

    def run_rater(rater_id: str) -> None:
        while True:
            task = store.next_task(rater_id)
            if task is None:
                return
            try:
                store.submit_vote(task.task_id, rater_id, Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
            except VoteConflictError:
                continue  # raced another rater; pick a new task

    threads = [threading.Thread(target=run_rater, args=(f"r{i:02d}",)) for i in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    for task in store.tasks.values():
        assert task.closed
        assert task.collected_votes == 5
        assert len(set(task.votes)) == 5  # five distinct raters
    progress = store.progress()
    assert progress == {"open": 0, "closed": 60, "total_votes": 300}
    journal_lines = (tmp_path / "journal.csv").read_text().splitlines()
    assert len(journal_lines) == 1 + 300


def test_restart_replays_journal(tmp_path):
    store = _store(tmp_path, required_eval_votes=2)
    ids = sorted(store.tasks)
    store.submit_vote(ids[0], "r0", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    store.submit_vote(ids[0], "r1", Depth.B_CLOSER, Occlusion.MUTUAL)
    store.submit_vote(ids[1], "r0", Depth.SAME_DEPTH, Occlusion.NO_OCCLUSION)
    before_export = votes_csv_text(store.export_votes())
    before_progress = store.progress()
    store.close()

    revived = _store(tmp_path, required_eval_votes=2)
    assert votes_csv_text(revived.export_votes()) == before_export
    assert revived.progress() == before_progress
    assert revived.tasks[ids[0]].closed
    with pytest.raises(VoteConflictError):
        revived.submit_vote(ids[0], "r2", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    revived.submit_vote(ids[1], "r1", Depth.SAME_DEPTH, Occlusion.NO_OCCLUSION)
    assert revived.tasks[ids[1]].closed


def test_replay_keeps_first_vote_per_rater(tmp_path):
    bundle = task_queue_bundle(1)
    pair_id = bundle.pairs[0].pair_id
    journal = tmp_path / "journal.csv"
    journal.write_text(
        "pair_id,rater_id,depth_vote,occlusion_vote,timestamp_unix_ms\n"
        f"{pair_id},r0,0,0,1000\n"
        f"{pair_id},r0,1,3,2000\n"
    )
    store = AnnotationStore(bundle, journal, required_eval_votes=5)
    vote = store.tasks[pair_id].votes["r0"]
    assert vote.depth_vote == Depth.A_CLOSER
    assert vote.timestamp_ms == 1000


def test_replay_rejects_votes_for_unknown_tasks(tmp_path):
    journal = tmp_path / "journal.csv"
    journal.write_text(
        "pair_id,rater_id,depth_vote,occlusion_vote,timestamp_unix_ms\n"
        "w#ghost/a#ghost/b,r0,0,0,1000\n"
    )
    with pytest.raises(ValidationError, match="unknown task"):
        AnnotationStore(task_queue_bundle(1), journal, required_eval_votes=5)


def test_export_endpoint_is_votes_csv(tmp_path):
    store = _store(tmp_path)
    client = TestClient(create_app(store))
    empty = client.get("/api/export/votes")
    assert empty.status_code == 200
    assert empty.headers["content-type"].startswith("text/csv")
    assert empty.text == votes_csv_text([])

    ids = sorted(store.tasks)
    store.submit_vote(ids[1], "r1", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    store.submit_vote(ids[0], "r0", Depth.B_CLOSER, Occlusion.NO_OCCLUSION)
    text = client.get("/api/export/votes").text
    assert text == votes_csv_text(store.export_votes())
    lines = text.splitlines()
    assert lines[1].startswith(ids[0]) and lines[2].startswith(ids[1])  # sorted


def test_queue_exhaustion_returns_null(tmp_path):
    store = _store(tmp_path, task_queue_bundle(1), required_eval_votes=1)
    client = TestClient(create_app(store))
    task = client.get("/api/tasks/next", params={"rater_id": "r0"}).json()
    client.post(task["vote_url"], json={"rater_id": "r0", "depth": 0, "occlusion": 0})
    assert client.get("/api/tasks/next", params={"rater_id": "r1"}).json() is None


def test_compact_rewrites_journal_as_sorted_export(tmp_path):
    store = _store(tmp_path, task_queue_bundle(3), clock=lambda: 1.5)
    ids = sorted(store.tasks)
    store.submit_vote(ids[2], "r1", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    store.submit_vote(ids[0], "r1", Depth.B_CLOSER, Occlusion.NO_OCCLUSION)
    store.submit_vote(ids[2], "r0", Depth.UNSURE, Occlusion.MUTUAL)
    store.compact()
    journal = tmp_path / "journal.csv"
    assert journal.read_text() == votes_csv_text(store.export_votes())
    assert not journal.with_suffix(".tmp").exists()

    store.submit_vote(ids[1], "r0", Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    store.close()
    revived = _store(tmp_path, task_queue_bundle(3))
    assert len(revived.export_votes()) == 4
    assert all(v.timestamp_ms == 1500 for v in revived.export_votes())


def test_static_image_serving_and_guards(tmp_path):
    images_dir = tmp_path / "images"
    images_dir.mkdir()
    write_png_gray(images_dir / "im1.png", np.full((8, 8), 80, dtype=np.uint8))
    secret = tmp_path / "secret.png"
    secret.write_bytes(b"secret")

    store = _store(tmp_path)
    client = TestClient(create_app(store, images_dir=images_dir))
    good = client.get("/static/images/im1")
    assert good.status_code == 200
    assert good.content == (images_dir / "im1.png").read_bytes()
    assert client.get("/static/images/im9").status_code == 404
    assert client.get("/static/images/%2e%2e%2fsecret").status_code == 404

    (tmp_path / "bare").mkdir()
    bare = TestClient(create_app(AnnotationStore(two_image_bundle(), tmp_path / "bare" / "j.csv")))
    assert bare.get("/static/images/im1").status_code == 404


def test_ui_mount_serves_static_frontend(tmp_path):
    ui_dir = tmp_path / "ui"
    ui_dir.mkdir()
    (ui_dir / "index.html").write_text("<html><body>annotate</body></html>")
    store = _store(tmp_path)
    client = TestClient(create_app(store, ui_dir=ui_dir))
    response = client.get("/")
    assert response.status_code == 200
    assert "annotate" in response.text
    # API routes still win over the static mount
    assert client.get("/api/progress").json() == {"open": 8, "closed": 0, "total_votes": 0}
