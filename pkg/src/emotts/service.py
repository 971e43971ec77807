"""Listening-test service: serves blinded clips over HTTP and collects ratings.

The system tag of a clip is never present in any payload before export; the
browser only ever sees opaque clip ids and neutral display names.
"""

import json
import threading
import time
import zlib
import random
from dataclasses import dataclass, field, asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlparse, parse_qs

from .errors import (
    EmptyClipSet,
    MissingFile,
    RatingOutOfRange,
    StoreUnavailable,
    UnknownClip,
    UnknownSession,
)


@dataclass
class ClipEntry:
    clip_id: str
    audio_path: str
    system: str  # recorded | baseline | proposed
    emotion: str


@dataclass
class RatingRecord:
    session_id: str
    rater_id: str
    clip_id: str
    system: str
    emotion: str
    score: int
    timestamp: float
    replaces_prior: bool = False


@dataclass
class MosSession:
    session_id: str
    rater_id: str
    order_seed: int
    playlist: list[str]
    rated: set = field(default_factory=set)

    def payload(self) -> dict:
        """What the rater's browser sees; deliberately free of system/emotion tags."""
        return {
            "session_id": self.session_id,
            "rater_id": self.rater_id,
            "order_seed": self.order_seed,
            "playlist": [
                {"clip_id": cid, "name": f"Clip {i + 1}", "url": f"/api/clip/{cid}"}
                for i, cid in enumerate(self.playlist)
            ],
            "rated": sorted(self.rated),
        }


def load_clip_manifest(path) -> list[ClipEntry]:
    """JSON-lines rows with clip_id, audio_path, system, emotion."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such clip manifest: {path}")
    clips = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                clips.append(ClipEntry(**json.loads(line)))
    return clips


def save_clip_manifest(clips, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(json.dumps(asdict(clip), sort_keys=True) + "\n")


class RatingStore:
    """Append-only JSON-lines store; every accepted submission is one row."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
        except OSError as exc:
            raise StoreUnavailable(f"cannot open rating store {path}: {exc}") from exc

    def append(self, record: RatingRecord) -> None:
        line = json.dumps(asdict(record), sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()

    def export(self) -> list[RatingRecord]:
        try:
            with self._lock:
                text = self.path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreUnavailable(f"cannot read rating store {self.path}: {exc}") from exc
        return [RatingRecord(**json.loads(line))
                for line in text.splitlines() if line.strip()]


def export_ratings(store: RatingStore) -> list[RatingRecord]:
    """Full ordered dump of the accepted submissions."""
    return store.export()


class MosService:
    """Session registry plus rating intake on top of a RatingStore."""

    def __init__(self, clips, store: RatingStore, base_seed: int = 0):
        clips = list(clips)
        if not clips:
            raise EmptyClipSet("the listening test needs at least one clip")
        self.clips = {c.clip_id: c for c in clips}
        self.store = store
        self.base_seed = base_seed
        self._sessions: dict[str, MosSession] = {}
        self._by_rater: dict[str, str] = {}
        self._lock = threading.Lock()

    def create_session(self, rater_id: str) -> MosSession:
        """New shuffled playlist for a rater; the order seed is recorded."""
        order_seed = self.base_seed ^ zlib.crc32(rater_id.encode("utf-8"))
        playlist = sorted(self.clips)
        random.Random(order_seed).shuffle(playlist)
        with self._lock:
            session_id = f"s{len(self._sessions):06d}"
            session = MosSession(session_id=session_id, rater_id=rater_id,
                                 order_seed=order_seed, playlist=playlist)
            self._sessions[session_id] = session
            self._by_rater[rater_id] = session_id
        return session

    def session_for(self, rater_id: str) -> MosSession:
        """Resume the rater's open session if one exists, else create one."""
        with self._lock:
            sid = self._by_rater.get(rater_id)
            if sid is not None and len(self._sessions[sid].rated) < len(self.clips):
                return self._sessions[sid]
        return self.create_session(rater_id)

    def submit_rating(self, session_id: str, clip_id: str, score) -> RatingRecord:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no such session: {session_id}")
        if clip_id not in session.playlist:
            raise UnknownClip(f"clip {clip_id} is not in session {session_id}")
        if not isinstance(score, int) or isinstance(score, bool) or score not in (1, 2, 3, 4, 5):
            raise RatingOutOfRange(f"score must be an integer 1..5, got {score!r}")
        clip = self.clips[clip_id]
        with self._lock:
            replaced = clip_id in session.rated
            session.rated.add(clip_id)
        record = RatingRecord(
            session_id=session_id,
            rater_id=session.rater_id,
            clip_id=clip_id,
            system=clip.system,
            emotion=clip.emotion,
            score=score,
            timestamp=time.time(),
            replaces_prior=replaced,
        )
        self.store.append(record)
        return record


class _Handler(BaseHTTPRequestHandler):
    service: MosService = None
    static_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, payload, status=200):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, exc, status):
        self._send_json({"error": type(exc).__name__, "message": str(exc)}, status)

    def do_GET(self):
        parsed = urlparse(self.path)
        if parsed.path == "/api/session":
            rater = parse_qs(parsed.query).get("rater", [""])[0]
            if not rater:
                self._send_json({"error": "BadRequest", "message": "rater is required"}, 400)
                return
            self._send_json(self.service.session_for(rater).payload())
        elif parsed.path.startswith("/api/clip/"):
            clip_id = parsed.path[len("/api/clip/"):]
            clip = self.service.clips.get(clip_id)
            if clip is None or not Path(clip.audio_path).exists():
                self._send_error_json(UnknownClip(f"no such clip: {clip_id}"), 404)
                return
            body = Path(clip.audio_path).read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", "audio/wav")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        elif parsed.path == "/api/export":
            lines = "".join(json.dumps(asdict(r), sort_keys=True) + "\n"
                            for r in export_ratings(self.service.store))
            body = lines.encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/jsonl")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        else:
            self._serve_static(parsed.path)

    def _serve_static(self, path):
        if self.static_dir is None:
            self._send_json({"error": "NotFound", "message": path}, 404)
            return
        name = "index.html" if path in ("", "/") else path.lstrip("/")
        target = (self.static_dir / name).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            self._send_json({"error": "NotFound", "message": path}, 404)
            return
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css"}
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        parsed = urlparse(self.path)
        if parsed.path != "/api/rating":
            self._send_json({"error": "NotFound", "message": parsed.path}, 404)
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json({"error": "BadRequest", "message": str(exc)}, 400)
            return
        try:
            record = self.service.submit_rating(
                payload.get("session_id"), payload.get("clip_id"), payload.get("score"))
        except (UnknownSession, UnknownClip) as exc:
            self._send_error_json(exc, 404)
            return
        except RatingOutOfRange as exc:
            self._send_error_json(exc, 400)
            return
        self._send_json({"ok": True, "replaced": record.replaces_prior})


def make_server(clips, store_path, port: int = 0, static_dir=None,
                base_seed: int = 0) -> ThreadingHTTPServer:
    """Build (but do not start) the listening-test HTTP server."""
    service = MosService(clips, RatingStore(store_path), base_seed=base_seed)
    handler = type("BoundHandler", (_Handler,), {
        "service": service,
        "static_dir": Path(static_dir) if static_dir else None,
    })
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(clips_manifest, store_path, port: int, static_dir=None,
                  base_seed: int = 0) -> None:
    clips = load_clip_manifest(clips_manifest)
    server = make_server(clips, store_path, port=port, static_dir=static_dir,
                         base_seed=base_seed)
    host, bound_port = server.server_address
    print(f"listening test at http://{host}:{bound_port}/ "
          f"({len(clips)} clips, store {store_path})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
