"""HTTP campaign service: hand out question assignments, collect answers.

A campaign lives in a directory:

    campaign.cfg    flat key=value config (see campaign.save_campaign_config)
    classes.csv     class dictionary (id, display name)
    labelmaps/      <image_id>.pgm ground truth (synthetic campaigns)
    scoremaps/      <image_id>_m<k>.scm model scores (m0 drives questions)
    images/         <image_id>.png opaque bytes for the annotation UI
    answers.log     append-only JSONL answer log (created on demand)

Answers are appended to the log *before* the HTTP ack, and the in-memory
state is a replay of that log, so killing the process at any point and
restarting yields identical progress counters.

Assignment rules: a question replica is handed to at most k distinct
annotators; an annotator never sees the same question twice; taking a new
assignment releases any assignment the annotator still holds; leases
expire after config.lease_seconds on the injected monotonic clock, after
which the replica returns to the pool for other annotators.  A late answer
on an expired lease is still accepted while the replica slot remains free.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

import numpy as np

from pointlab.campaign import (
    Answer,
    CampaignConfig,
    CampaignState,
    Question,
    aggregate,
    load_campaign_config,
)
from pointlab.domain import ImageRecord, Resolution, Verdict
from pointlab.formats import (
    AnswerLogWriter,
    AnswerRecord,
    read_answer_log,
    read_class_dictionary,
    read_label_map,
    read_score_map,
    rfc3339_now,
)

_ANNOTATOR_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
_CONTENT_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".bmp": "image/bmp",
    ".pgm": "image/x-portable-graymap",
}


class ServiceError(Exception):
    """Request rejected; status carries the HTTP code to surface."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class Assignment:
    question: Question
    class_name: str
    image_url: str
    lease_seconds: float

    def to_json(self) -> dict:
        return {
            "status": "OK",
            "question_id": self.question.question_id,
            "image_id": self.question.image_id,
            "image_url": self.image_url,
            "x": self.question.point.x,
            "y": self.question.point.y,
            "class_id": self.question.class_id,
            "class_name": self.class_name,
            "round": self.question.round,
            "lease_seconds": self.lease_seconds,
        }


def load_campaign_dir(root: str | Path) -> tuple[CampaignConfig, list[ImageRecord], dict, list[str]]:
    """Build (config, records, scoremaps, class names) from a campaign dir."""
    root = Path(root)
    cfg_path = root / "campaign.cfg"
    if not cfg_path.exists():
        raise FileNotFoundError(f"no campaign.cfg under {root}")
    config = load_campaign_config(cfg_path)
    class_names = read_class_dictionary(root / "classes.csv")

    label_dir = root / "labelmaps"
    score_dir = root / "scoremaps"
    records: list[ImageRecord] = []
    scoremaps: dict[str, object] = {}
    for pgm in sorted(label_dir.glob("*.pgm")):
        image_id = pgm.stem
        gt = read_label_map(pgm, classes=len(class_names))
        score_paths = sorted(score_dir.glob(f"{image_id}_m*.scm"))
        if not score_paths:
            raise FileNotFoundError(f"no score maps for image {image_id!r}")
        scoremaps[image_id] = read_score_map(score_paths[0])
        records.append(
            ImageRecord(
                image_id=image_id,
                label_map_path=pgm,
                score_map_paths=tuple(score_paths),
                image_level_labels=gt.labels_present(),
            )
        )
    if not records:
        raise FileNotFoundError(f"no label maps under {label_dir}")
    return config, records, scoremaps, class_names


class CampaignService:
    """Thread-safe campaign core shared by the HTTP layer and tests."""

    def __init__(
        self,
        root: str | Path,
        clock: Callable[[], float] = time.monotonic,
        fsync: bool = False,
    ):
        self.root = Path(root)
        self.clock = clock
        config, records, scoremaps, class_names = load_campaign_dir(self.root)
        self.config = config
        self.class_names = class_names
        self.state = CampaignState(records, scoremaps, config)
        self._lock = threading.Lock()
        # qid -> {annotator: lease expiry on the monotonic clock}
        self._leases: dict[str, dict[str, float]] = {}
        # qid -> annotators that ever held or answered a replica
        self._history: dict[str, set[str]] = {}
        self._current: dict[str, str] = {}  # annotator -> qid currently leased

        log_path = self.root / "answers.log"
        for rec in read_answer_log(log_path):
            self.state.record_answer(
                Answer(
                    question_id=rec.question_id,
                    annotator_id=rec.annotator_id,
                    verdict=rec.verdict,
                    latency_ms=rec.latency_ms,
                )
            )
            self._history.setdefault(rec.question_id, set()).add(rec.annotator_id)
        self._writer = AnswerLogWriter(log_path, fsync=fsync)

    def close(self) -> None:
        self._writer.close()

    # -- internals, caller holds the lock --

    def _expire_leases(self, now: float) -> None:
        for qid, leases in list(self._leases.items()):
            for ann, expiry in list(leases.items()):
                if expiry <= now:
                    del leases[ann]
                    if self._current.get(ann) == qid:
                        del self._current[ann]
            if not leases:
                del self._leases[qid]

    def _active_leases(self, qid: str) -> int:
        return len(self._leases.get(qid, {}))

    def _release_current(self, annotator: str) -> None:
        qid = self._current.pop(annotator, None)
        if qid is not None:
            leases = self._leases.get(qid, {})
            leases.pop(annotator, None)
            if not leases:
                self._leases.pop(qid, None)

    # -- public API --

    def next_assignment(self, annotator: str) -> Assignment | None:
        if not _ANNOTATOR_RE.match(annotator):
            raise ServiceError(400, f"malformed annotator id {annotator!r}")
        with self._lock:
            now = self.clock()
            self._expire_leases(now)
            k = self.config.replication
            for q in self.state.open_questions():
                qid = q.question_id
                if annotator in self._history.get(qid, ()):  # never twice
                    continue
                taken = len(self.state.answers_for(qid)) + self._active_leases(qid)
                if taken >= k:
                    continue
                self._release_current(annotator)
                self._leases.setdefault(qid, {})[annotator] = now + self.config.lease_seconds
                self._history.setdefault(qid, set()).add(annotator)
                self._current[annotator] = qid
                return Assignment(
                    question=q,
                    class_name=self.class_names[q.class_id],
                    image_url=f"/images/{q.image_id}",
                    lease_seconds=self.config.lease_seconds,
                )
            return None

    def submit_answer(self, question_id: str, annotator: str, verdict: str, latency_ms) -> None:
        if not _ANNOTATOR_RE.match(annotator or ""):
            raise ServiceError(400, f"malformed annotator id {annotator!r}")
        try:
            v = Verdict(verdict)
        except ValueError:
            raise ServiceError(400, f"bad verdict {verdict!r}") from None
        try:
            latency = int(latency_ms)
        except (TypeError, ValueError):
            raise ServiceError(400, f"bad latency {latency_ms!r}") from None
        if latency < 0:
            raise ServiceError(400, "negative latency")

        with self._lock:
            if question_id not in self.state.questions:
                raise ServiceError(404, f"unknown question {question_id!r}")
            answers = self.state.answers_for(question_id)
            if annotator in answers:
                raise ServiceError(409, f"duplicate answer on {question_id!r}")
            if annotator not in self._history.get(question_id, ()):
                raise ServiceError(409, f"{annotator!r} holds no assignment for {question_id!r}")
            now = self.clock()
            lease = self._leases.get(question_id, {}).get(annotator)
            if lease is None or lease <= now:
                # lease lapsed: accept only while a replica slot is still free
                others = sum(
                    1
                    for a, exp in self._leases.get(question_id, {}).items()
                    if a != annotator and exp > now
                )
                if len(answers) + others >= self.config.replication:
                    raise ServiceError(409, f"lease expired on {question_id!r}")
            if len(answers) >= self.config.replication:
                raise ServiceError(409, f"question {question_id!r} already fully answered")

            # durable before acked
            self._writer.append(
                AnswerRecord(
                    question_id=question_id,
                    annotator_id=annotator,
                    verdict=v,
                    latency_ms=latency,
                    timestamp=rfc3339_now(),
                )
            )
            self.state.record_answer(
                Answer(
                    question_id=question_id,
                    annotator_id=annotator,
                    verdict=v,
                    latency_ms=latency,
                )
            )
            leases = self._leases.get(question_id)
            if leases:
                leases.pop(annotator, None)
                if not leases:
                    del self._leases[question_id]
            if self._current.get(annotator) == question_id:
                del self._current[annotator]

    def progress(self) -> dict:
        with self._lock:
            rows = aggregate(self.state)
            latencies = [
                a.latency_ms for got in self.state.answers.values() for a in got.values()
            ]
            return {
                "questions_total": len(self.state.questions),
                "answered": len(latencies),
                "points_resolved": {
                    "yes": sum(1 for r in rows if r.verdict is Resolution.YES),
                    "no": sum(1 for r in rows if r.verdict is Resolution.NO),
                    "unresolved": sum(1 for r in rows if r.verdict is Resolution.UNRESOLVED),
                },
                "mean_latency_ms": float(np.mean(latencies)) if latencies else None,
            }

    def image_bytes(self, image_id: str) -> tuple[bytes, str]:
        if not _ANNOTATOR_RE.match(image_id):
            raise ServiceError(400, f"malformed image id {image_id!r}")
        img_dir = self.root / "images"
        for ext, ctype in _CONTENT_TYPES.items():
            p = img_dir / f"{image_id}{ext}"
            if p.exists():
                return p.read_bytes(), ctype
        raise ServiceError(404, f"no image {image_id!r}")


class CampaignHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: CampaignService):
        super().__init__(address, _Handler)
        self.service = service


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"  # keep-alive matters under 16 polling clients
    server: CampaignHTTPServer

    def log_message(self, fmt: str, *args) -> None:
        pass  # route access noise away from stderr

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def do_OPTIONS(self) -> None:  # CORS preflight for the browser UI
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self) -> None:
        from urllib.parse import parse_qs, urlparse

        svc = self.server.service
        url = urlparse(self.path)
        try:
            if url.path == "/api/next":
                qs = parse_qs(url.query)
                annotator = qs.get("annotator", [""])[0]
                assignment = svc.next_assignment(annotator)
                if assignment is None:
                    self._send_json(200, {"status": "NO_WORK"})
                else:
                    self._send_json(200, assignment.to_json())
            elif url.path == "/api/progress":
                self._send_json(200, svc.progress())
            elif url.path.startswith("/images/"):
                image_id = url.path[len("/images/") :]
                data, ctype = svc.image_bytes(image_id)
                self.send_response(200)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(data)
            else:
                self._send_error(404, f"unknown path {url.path!r}")
        except ServiceError as e:
            self._send_error(e.status, str(e))

    def do_POST(self) -> None:
        svc = self.server.service
        try:
            if self.path != "/api/answer":
                raise ServiceError(404, f"unknown path {self.path!r}")
            length = int(self.headers.get("Content-Length", "0"))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                raise ServiceError(400, "request body is not valid JSON") from None
            if not isinstance(body, dict):
                raise ServiceError(400, "request body must be a JSON object")
            missing = {"question_id", "annotator", "verdict", "latency_ms"} - set(body)
            if missing:
                raise ServiceError(400, f"missing fields: {sorted(missing)}")
            svc.submit_answer(
                question_id=body["question_id"],
                annotator=body["annotator"],
                verdict=body["verdict"],
                latency_ms=body["latency_ms"],
            )
            self._send_json(200, {"status": "OK"})
        except ServiceError as e:
            self._send_error(e.status, str(e))


def serve(root: str | Path, host: str = "127.0.0.1", port: int = 8731, fsync: bool = False) -> None:
    """Blocking entry point used by the CLI."""
    service = CampaignService(root, fsync=fsync)
    server = CampaignHTTPServer((host, port), service)
    try:
        print(f"serving campaign {Path(root).resolve()} on http://{host}:{server.server_address[1]}")
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.close()
