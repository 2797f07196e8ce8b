"""Local HTTP server that replays scripted transcripts over the chat-completion wire format.

Used to check that the remote client and the scripted mock are interchangeable.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping

from .backends import _lookup


class _Handler(BaseHTTPRequestHandler):
    server: "TranscriptReplayServer"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
        pass

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length))
            meta = body["metadata"]
            entry = _lookup(self.server.transcripts, meta["case_id"], meta["role"])
        except (ValueError, KeyError):
            self._send(404, b'{"error": "no transcript"}')
            return
        self.server.record(body)
        if isinstance(entry, Mapping):
            if entry.get("delay"):
                time.sleep(float(entry["delay"]))
            error = entry.get("error")
            if error == "transport":
                self._send(503, b'{"error": "unavailable"}')
                return
            if error == "malformed":
                self._send(200, str(entry.get("raw", "")).encode(), "text/plain")
                return
            if error == "timeout":
                time.sleep(self.server.hang_seconds)
                self._send(504, b"{}")
                return
            entry = entry.get("response", "")
        payload = {
            "id": f"stub-{meta['case_id']}-{meta['role']}",
            "object": "chat.completion",
            "model": body.get("model", ""),
            "choices": [{"index": 0, "message": {"role": "assistant", "content": entry}, "finish_reason": "stop"}],
        }
        self._send(200, json.dumps(payload).encode())


class TranscriptReplayServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, transcripts: Mapping[str, Mapping[str, Any]], host: str = "127.0.0.1", port: int = 0,
                 hang_seconds: float = 5.0) -> None:
        super().__init__((host, port), _Handler)
        self.transcripts = transcripts
        self.hang_seconds = hang_seconds
        self.requests: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None

    def record(self, body: dict[str, Any]) -> None:
        with self._lock:
            self.requests.append(body)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self) -> "TranscriptReplayServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()
        self.server_close()
