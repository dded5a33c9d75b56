"""HTTP API for the reader-study review workflow.

Task dispensing with soft leases, review submission with optimistic
concurrency, live diff and consistency statistics, and the taxonomy served
verbatim for the browser tree picker. All JSON responses are key-sorted so
the CLI and the API produce byte-identical statistics over the same store.
"""

from __future__ import annotations

import json
import signal
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .store import CorpusStore, ReviewRecord, Split, UnknownStudy, UnparsableEdit, VersionConflict
from .taxonomy import Taxonomy, bundled_taxonomy_bytes, label_set_from_json
from .textdiff import diff_stats, label_consistency, review_summary

API_VERSION = "1"
DEFAULT_LEASE_SECONDS = 30 * 60


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message

    def payload(self) -> dict:
        return {"error": {"status": self.status, "code": self.code, "message": self.message}}


def diff_payload(store: CorpusStore, study_id: str) -> dict:
    """Diff of the stored structured text against the latest reviewed edit."""
    study = store.studies.get(study_id)
    if study is None:
        raise ApiError(404, "UnknownStudy", f"no study {study_id!r}")
    review = store.latest_review(study_id)
    if review is None:
        raise ApiError(404, "NotReviewed", f"study {study_id!r} has no review")
    stats = diff_stats(study.structured_text or "", review.edited_text)
    return {"study_id": study_id, "version": review.version, **stats.to_json()}


def summary_payload(store: CorpusStore) -> dict:
    """Aggregate review statistics plus label-consistency metrics."""
    latest = [store.latest_review(sid) for sid in sorted(store.reviews)]
    latest = [r for r in latest if r is not None]
    if not latest:
        raise ApiError(404, "NoReviews", "no reviews stored yet")
    pairs = [(store.studies[r.study_id].structured_text or "", r.edited_text) for r in latest]
    payload: dict = {"review_summary": review_summary(pairs).to_json()}
    consistency_pairs = []
    for record in latest:
        for key, corrected in record.label_corrections:
            stored = store.utterances.get(key)
            if stored is not None and stored.labels is not None:
                consistency_pairs.append((stored.labels, corrected))
    payload["label_consistency"] = (
        label_consistency(consistency_pairs).to_json() if consistency_pairs else None
    )
    return payload


@dataclass
class Lease:
    reviewer: str
    expires_at: float


class ReviewService:
    """Store-backed service logic, independent of the HTTP plumbing."""

    def __init__(
        self,
        store: CorpusStore,
        taxonomy: Taxonomy,
        taxonomy_bytes: Optional[bytes] = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        tokens: Optional[dict[str, str]] = None,
    ):
        self.store = store
        self.taxonomy = taxonomy
        self.taxonomy_bytes = taxonomy_bytes if taxonomy_bytes is not None else bundled_taxonomy_bytes()
        self.lease_seconds = lease_seconds
        self.tokens = tokens  # token -> reviewer id; None disables auth
        self._leases: dict[str, Lease] = {}
        self._lease_lock = threading.Lock()

    def authenticate(self, header: Optional[str]) -> Optional[str]:
        """Map a bearer token to a reviewer id; None when auth is disabled."""
        if self.tokens is None:
            return None
        if not header or not header.startswith("Bearer "):
            raise ApiError(401, "Unauthorized", "missing bearer token")
        reviewer = self.tokens.get(header[len("Bearer ") :].strip())
        if reviewer is None:
            raise ApiError(401, "Unauthorized", "unknown token")
        return reviewer

    def _lease_live(self, study_id: str, now: float) -> bool:
        lease = self._leases.get(study_id)
        return lease is not None and lease.expires_at > now

    def next_task(self, reviewer: str) -> dict:
        """Next unreviewed test-reviewed study without a live lease, in stable
        study-id order; grants a soft lease to the caller."""
        now = time.time()
        with self._lease_lock:
            for sid in sorted(self.store.studies):
                study = self.store.studies[sid]
                if study.split is not Split.TEST_REVIEWED:
                    continue
                if self.store.current_version(sid) > 0:
                    continue
                if self._lease_live(sid, now):
                    continue
                self._leases[sid] = Lease(reviewer, now + self.lease_seconds)
                return self._task_payload(study)
        raise ApiError(404, "NoTasks", "no unreviewed studies available")

    def _task_payload(self, study) -> dict:
        utterances = []
        for key in sorted(self.store.utterances):
            record = self.store.utterances[key]
            if record.study_id != study.study_id:
                continue
            utterances.append(
                {
                    "key": record.key,
                    "origin": record.origin,
                    "text": record.text,
                    "labels": [lab.to_json() for lab in sorted(record.labels or frozenset(), key=lambda l: l.disease)],
                    "provenance": record.provenance.value if record.provenance else None,
                }
            )
        return {
            "study_id": study.study_id,
            "original_text": study.original_text,
            "structured_text": study.structured_text or "",
            "utterances": utterances,
            "version": self.store.current_version(study.study_id),
        }

    def submit_review(self, study_id: str, body: dict, reviewer: Optional[str]) -> dict:
        edited = body.get("edited_text")
        if not isinstance(edited, str):
            raise ApiError(400, "BadRequest", "edited_text must be a string")
        try:
            expected = int(body.get("expected_version", 0))
        except (TypeError, ValueError):
            raise ApiError(400, "BadRequest", "expected_version must be an integer") from None
        corrections = []
        for item in body.get("label_corrections", []):
            try:
                key, rows = item
                labels = label_set_from_json(rows)
            except (ValueError, TypeError, KeyError) as exc:
                raise ApiError(400, "BadRequest", f"malformed label correction: {exc}") from exc
            for lab in labels:
                if lab.disease not in self.taxonomy:
                    raise ApiError(422, "UnknownDisease", f"label {lab.disease!r} is not in the taxonomy")
            corrections.append((key, labels))
        record = ReviewRecord(
            study_id=study_id,
            reviewer=reviewer or str(body.get("reviewer", "anonymous")),
            edited_text=edited,
            label_corrections=corrections,
        )
        try:
            version = self.store.save_review(record, expected)
        except UnknownStudy:
            raise ApiError(404, "UnknownStudy", f"no study {study_id!r}") from None
        except VersionConflict as exc:
            raise ApiError(409, "VersionConflict", str(exc)) from None
        except UnparsableEdit as exc:
            raise ApiError(422, "UnparsableEdit", str(exc)) from None
        with self._lease_lock:
            self._leases.pop(study_id, None)
        study = self.store.studies[study_id]
        stats = diff_stats(study.structured_text or "", edited)
        return {"study_id": study_id, "version": version, "diff": stats.to_json()}


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService  # injected by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass  # keep stdout clean; errors surface in responses

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("X-SRRG-Api", API_VERSION)
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload) -> None:
        self._send(status, _json_bytes(payload))

    def _reviewer(self) -> Optional[str]:
        return self.service.authenticate(self.headers.get("Authorization"))

    def do_GET(self) -> None:  # noqa: N802 - stdlib naming
        try:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            if url.path == "/healthz":
                self._send_json(200, {"status": "ok"})
                return
            reviewer = self._reviewer()
            if url.path == "/tasks/next":
                query = parse_qs(url.query)
                reviewer = reviewer or (query.get("reviewer") or ["anonymous"])[0]
                self._send_json(200, self.service.next_task(reviewer))
            elif url.path == "/taxonomy":
                self._send(200, self.service.taxonomy_bytes)
            elif url.path == "/summary":
                self._send_json(200, summary_payload(self.service.store))
            elif len(parts) == 3 and parts[0] == "studies" and parts[2] == "diff":
                self._send_json(200, diff_payload(self.service.store, parts[1]))
            else:
                raise ApiError(404, "NotFound", f"no route for {url.path}")
        except ApiError as err:
            self._send_json(err.status, err.payload())
        except Exception as exc:  # noqa: BLE001 - last-resort barrier
            self._send_json(500, ApiError(500, "Internal", str(exc)).payload())

    def do_POST(self) -> None:  # noqa: N802 - stdlib naming
        try:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            reviewer = self._reviewer()
            if len(parts) == 3 and parts[0] == "studies" and parts[2] == "review":
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw.decode("utf-8")) if raw else {}
                except json.JSONDecodeError as exc:
                    raise ApiError(400, "BadRequest", f"body is not JSON: {exc}") from None
                self._send_json(200, self.service.submit_review(parts[1], body, reviewer))
            else:
                raise ApiError(404, "NotFound", f"no route for {url.path}")
        except ApiError as err:
            self._send_json(err.status, err.payload())
        except Exception as exc:  # noqa: BLE001
            self._send_json(500, ApiError(500, "Internal", str(exc)).payload())


def make_server(service: ReviewService, host: str, port: int) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    return server


def serve_forever(service: ReviewService, host: str, port: int) -> None:
    """Run until SIGTERM/SIGINT; pending writes are already fsynced per-write,
    so shutdown only needs to stop accepting requests."""
    server = make_server(service, host, port)

    def _stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def load_tokens(path: Path | str) -> dict[str, str]:
    """Static token file: {"<token>": "<reviewer id>"}."""
    return {str(k): str(v) for k, v in json.loads(Path(path).read_text("utf-8")).items()}
