"""Vote-collection service: a task queue over a bundle's pairs behind HTTP.

Every pair is one task. A vote is acknowledged only after it has been
appended to an on-disk journal (votes.csv schema) and fsynced, so a restart
replays the journal and loses nothing. Duplicate submissions by the same
rater are rejected idempotently: the stored vote never changes.
"""

from __future__ import annotations

import csv
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import quote

from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .dataio import DatasetBundle, VOTES_HEADER, read_votes_csv, vote_row, votes_csv_text
from .model import (
    Depth,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    ValidationError,
    VoteRecord,
    validate_pair_predicates,
)

RATER_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]{1,64}$")
IMAGE_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]+$")


class UnknownTaskError(KeyError):
    """No task with the requested id."""


class VoteConflictError(Exception):
    """Duplicate rater on a task, or the task already has every vote."""


class InvalidVoteError(ValidationError):
    """Vote payload violates the setting's predicate rules."""


@dataclass
class AnnotationTask:
    """One pair awaiting votes."""

    task_id: str
    pair: PairLabel
    required_votes: int
    votes: dict[str, VoteRecord] = field(default_factory=dict)

    @property
    def setting(self) -> Setting:
        return self.pair.setting

    @property
    def collected_votes(self) -> int:
        return len(self.votes)

    @property
    def closed(self) -> bool:
        return len(self.votes) >= self.required_votes


class AnnotationStore:
    """Tasks, votes, and the durable journal behind the HTTP endpoints.

    Train-split pairs need one vote, evaluation pairs `required_eval_votes`.
    Submission is serialized by a lock; the journal append (flush + fsync)
    happens before the vote becomes visible, so an acknowledged vote survives
    any restart. Replay trusts the journal and keeps the first vote per
    (task, rater).
    """

    def __init__(
        self,
        bundle: DatasetBundle,
        journal_path: Path | str,
        required_eval_votes: int = 5,
        clock: Callable[[], float] = time.time,
    ):
        if required_eval_votes < 1:
            raise ValidationError("required_eval_votes must be at least 1")
        self.bundle = bundle
        self.journal_path = Path(journal_path)
        self.required_eval_votes = int(required_eval_votes)
        self._clock = clock
        self._lock = threading.Lock()
        split_of = {im.image_id: im.split for im in bundle.images}
        self.tasks: dict[str, AnnotationTask] = {}
        for pair in bundle.pairs:
            required = 1 if split_of[pair.image_id_a] == Split.TRAIN else self.required_eval_votes
            self.tasks[pair.pair_id] = AnnotationTask(pair.pair_id, pair, required)
        self._replay()
        self._journal = open(self.journal_path, "a", encoding="utf-8", newline="")
        if self._journal.tell() == 0:
            csv.writer(self._journal, lineterminator="\n").writerow(VOTES_HEADER)
            self._journal.flush()
            os.fsync(self._journal.fileno())

    def _replay(self) -> None:
        if not self.journal_path.exists():
            return
        for vote in read_votes_csv(self.journal_path):
            task = self.tasks.get(vote.pair_id)
            if task is None:
                raise ValidationError(f"journal vote for unknown task {vote.pair_id!r}")
            task.votes.setdefault(vote.rater_id, vote)

    def close(self) -> None:
        self._journal.close()

    def _append(self, vote: VoteRecord) -> None:
        csv.writer(self._journal, lineterminator="\n").writerow(vote_row(vote))
        self._journal.flush()
        os.fsync(self._journal.fileno())

    def submit_vote(
        self,
        task_id: str,
        rater_id: str,
        depth: Depth,
        occlusion: Optional[Occlusion] = None,
    ) -> VoteRecord:
        task = self.tasks.get(task_id)
        if task is None:
            raise UnknownTaskError(task_id)
        if not RATER_ID_PATTERN.match(rater_id):
            raise InvalidVoteError(f"malformed rater_id {rater_id!r}")
        if depth is None:
            raise InvalidVoteError(f"{task_id}: a depth vote is required")
        try:
            validate_pair_predicates(task.setting, depth, occlusion)
        except ValidationError as e:
            raise InvalidVoteError(str(e)) from None
        with self._lock:
            if rater_id in task.votes:
                raise VoteConflictError(f"rater {rater_id!r} already voted on {task_id}")
            if task.closed:
                raise VoteConflictError(f"task {task_id} already has every vote")
            vote = VoteRecord(
                pair_id=task_id,
                rater_id=rater_id,
                depth_vote=depth,
                occlusion_vote=occlusion,
                timestamp_ms=int(self._clock() * 1000),
            )
            self._append(vote)
            task.votes[rater_id] = vote
        return vote

    def next_task(self, rater_id: str, setting: Optional[Setting] = None) -> Optional[AnnotationTask]:
        """The open task nearest completion that this rater has not voted on."""
        if not RATER_ID_PATTERN.match(rater_id):
            raise InvalidVoteError(f"malformed rater_id {rater_id!r}")
        best: Optional[AnnotationTask] = None
        for task in self.tasks.values():
            if task.closed or rater_id in task.votes:
                continue
            if setting is not None and task.setting != setting:
                continue
            if best is None or (-task.collected_votes, task.task_id) < (-best.collected_votes, best.task_id):
                best = task
        return best

    def progress(self) -> dict[str, int]:
        with self._lock:
            closed = sum(1 for t in self.tasks.values() if t.closed)
            total = sum(t.collected_votes for t in self.tasks.values())
        return {"open": len(self.tasks) - closed, "closed": closed, "total_votes": total}

    def export_votes(self) -> list[VoteRecord]:
        with self._lock:
            votes = [v for t in self.tasks.values() for v in t.votes.values()]
        return sorted(votes, key=lambda v: (v.pair_id, v.rater_id))

    def compact(self) -> None:
        """Rewrite the journal as the sorted export, atomically."""
        with self._lock:
            votes = sorted(
                (v for t in self.tasks.values() for v in t.votes.values()),
                key=lambda v: (v.pair_id, v.rater_id),
            )
            tmp = self.journal_path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8", newline="") as f:
                f.write(votes_csv_text(votes))
                f.flush()
                os.fsync(f.fileno())
            self._journal.close()
            os.replace(tmp, self.journal_path)
            self._journal = open(self.journal_path, "a", encoding="utf-8", newline="")


def _task_payload(store: AnnotationStore, task: AnnotationTask) -> dict:
    objects = store.bundle.object_by_id()
    images = store.bundle.image_by_id()
    pair = task.pair

    def image_block(image_id: str) -> dict:
        im = images[image_id]
        return {
            "image_id": im.image_id,
            "url": f"/static/images/{im.image_id}",
            "width": im.width_px,
            "height": im.height_px,
        }

    def box_block(object_id: str) -> dict:
        box = objects[object_id].box
        return {"xmin": box.xmin, "ymin": box.ymin, "xmax": box.xmax, "ymax": box.ymax}

    return {
        "task_id": task.task_id,
        "vote_url": f"/api/tasks/{quote(task.task_id, safe='')}/vote",
        "setting": pair.setting.value,
        "required_votes": task.required_votes,
        "collected_votes": task.collected_votes,
        "image_a": image_block(pair.image_id_a),
        "image_b": image_block(pair.image_id_b),
        "box_a": box_block(pair.object_id_a),
        "box_b": box_block(pair.object_id_b),
    }


def _parse_code(raw: object, enum_type: type, name: str) -> object:
    try:
        return enum_type(int(raw))  # type: ignore[call-arg]
    except (TypeError, ValueError):
        raise HTTPException(422, f"{name} must be an integer code 0..3") from None


def create_app(
    store: AnnotationStore,
    images_dir: Optional[Path | str] = None,
    ui_dir: Optional[Path | str] = None,
) -> FastAPI:
    app = FastAPI(title="2.5D pair annotation")
    images_root = None if images_dir is None else Path(images_dir)

    @app.get("/api/tasks/next")
    def get_next_task(rater_id: str, setting: Optional[str] = None) -> JSONResponse:
        parsed = None
        if setting is not None:
            try:
                parsed = Setting(setting)
            except ValueError:
                raise HTTPException(422, f"unknown setting {setting!r}") from None
        try:
            task = store.next_task(rater_id, parsed)
        except InvalidVoteError as e:
            raise HTTPException(422, str(e)) from None
        return JSONResponse(None if task is None else _task_payload(store, task))

    @app.post("/api/tasks/{task_id:path}/vote")
    def post_vote(task_id: str, payload: dict = Body(...)) -> dict:
        rater_id = payload.get("rater_id")
        if not isinstance(rater_id, str):
            raise HTTPException(422, "rater_id must be a string")
        depth = _parse_code(payload.get("depth"), Depth, "depth")
        occlusion_raw = payload.get("occlusion")
        occlusion = None if occlusion_raw is None else _parse_code(occlusion_raw, Occlusion, "occlusion")
        try:
            store.submit_vote(task_id, rater_id, depth, occlusion)
        except UnknownTaskError:
            raise HTTPException(404, f"no task {task_id!r}") from None
        except VoteConflictError as e:
            raise HTTPException(409, str(e)) from None
        except InvalidVoteError as e:
            raise HTTPException(422, str(e)) from None
        task = store.tasks[task_id]
        return {
            "status": "accepted",
            "task_id": task_id,
            "collected_votes": task.collected_votes,
            "closed": task.closed,
        }

    @app.get("/api/progress")
    def get_progress() -> dict:
        return store.progress()

    @app.get("/api/export/votes")
    def export_votes() -> PlainTextResponse:
        return PlainTextResponse(votes_csv_text(store.export_votes()), media_type="text/csv")

    @app.get("/static/images/{image_id}")
    def get_image(image_id: str) -> FileResponse:
        if images_root is None or not IMAGE_ID_PATTERN.match(image_id):
            raise HTTPException(404, f"no image {image_id!r}")
        path = images_root / f"{image_id}.png"
        if not path.exists():
            raise HTTPException(404, f"no image {image_id!r}")
        return FileResponse(path, media_type="image/png")

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
