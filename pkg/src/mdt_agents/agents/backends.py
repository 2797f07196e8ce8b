"""Chat-completion backends: a remote HTTP client and a scripted mock.

Both implement ``complete(request, timeout) -> str``. Everything downstream
of the raw text (claim extraction, lab flags) happens in the runtime, so the
two are interchangeable.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

from ..errors import BackendTimeout, ConfigError, MalformedResponse, TransportError

# Role used when no role-specific transcript entry exists for a core re-generation.
FINAL_PASS_SUFFIX = ".final"


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    images: tuple[str, ...] = ()
    case_id: str = ""
    role: str = ""
    temperature: float = 0.0

    def to_wire(self, model: str) -> dict[str, Any]:
        if self.images:
            content: Any = [{"type": "text", "text": self.user}] + [
                {"type": "image_url", "image_url": {"url": ref}} for ref in self.images
            ]
        else:
            content = self.user
        return {
            "model": model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": content},
            ],
            "metadata": {"case_id": self.case_id, "role": self.role},
        }


class Backend(Protocol):
    def complete(self, request: ChatRequest, timeout: float | None = None) -> str: ...

    def describe(self) -> dict[str, Any]: ...


# ---------------------------------------------------------------------------
# Scripted mock
# ---------------------------------------------------------------------------

Transcripts = dict[str, dict[str, Any]]
DelayFn = Callable[[str, str], float]


def _lookup(transcripts: Mapping[str, Mapping[str, Any]], case_id: str, role: str) -> Any:
    roles = transcripts.get(case_id)
    if roles is None:
        raise KeyError(case_id)
    if role in roles:
        return roles[role]
    if role.endswith(FINAL_PASS_SUFFIX) and role[: -len(FINAL_PASS_SUFFIX)] in roles:
        return roles[role[: -len(FINAL_PASS_SUFFIX)]]
    raise KeyError(f"{case_id}/{role}")


class ScriptedBackend:
    """Replays canned responses keyed by ``(case_id, role)``.

    A transcript entry is either the response text or an object:
    ``{"response": str, "delay": seconds}`` or ``{"error": "transport" |
    "timeout" | "malformed"}`` to simulate failures.
    """

    def __init__(
        self,
        transcripts: Mapping[str, Mapping[str, Any]],
        delays: DelayFn | None = None,
        model_name: str = "scripted-mock",
    ) -> None:
        self.transcripts = transcripts
        self.delays = delays
        self.model_name = model_name
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def covers(self, case_ids, roles) -> list[str]:
        """Return ``case_id/role`` keys the script cannot serve."""
        missing = []
        for cid in case_ids:
            for role in roles:
                try:
                    _lookup(self.transcripts, cid, role)
                except KeyError:
                    missing.append(f"{cid}/{role}")
        return missing

    def complete(self, request: ChatRequest, timeout: float | None = None) -> str:
        with self._lock:
            self._calls += 1
        try:
            entry = _lookup(self.transcripts, request.case_id, request.role)
        except KeyError as exc:
            raise MalformedResponse(f"no scripted response for {exc.args[0]}") from None

        delay = self.delays(request.case_id, request.role) if self.delays else 0.0
        if isinstance(entry, Mapping):
            delay += float(entry.get("delay", 0.0))
        if delay > 0:
            if timeout is not None and delay > timeout:
                time.sleep(max(timeout, 0.0))
                raise BackendTimeout(f"scripted delay {delay:.3f}s exceeds deadline")
            time.sleep(delay)

        if isinstance(entry, str):
            return entry
        if isinstance(entry, Mapping):
            error = entry.get("error")
            if error == "transport":
                raise TransportError("scripted transport failure")
            if error == "timeout":
                raise BackendTimeout("scripted timeout")
            if error == "malformed":
                raise MalformedResponse("scripted malformed response", raw=str(entry.get("raw", "")))
            if isinstance(entry.get("response"), str):
                return entry["response"]
        raise MalformedResponse(f"unusable scripted entry for {request.case_id}/{request.role}", raw=repr(entry))

    def describe(self) -> dict[str, Any]:
        return {"kind": BackendKind.SCRIPTED_MOCK.value, "model_name": self.model_name}


class CallableBackend:
    """Backend driven by a Python function; handy for judges and tests."""

    def __init__(self, fn: Callable[[ChatRequest], str], model_name: str = "callable") -> None:
        self.fn = fn
        self.model_name = model_name

    def complete(self, request: ChatRequest, timeout: float | None = None) -> str:
        return self.fn(request)

    def describe(self) -> dict[str, Any]:
        return {"kind": "callable", "model_name": self.model_name}


def load_transcripts(path: str | Path) -> Transcripts:
    """Read transcripts from a JSON file ``{case_id: {role: entry}}`` or a
    directory of ``<case_id>.json`` files each holding ``{role: entry}``."""
    path = Path(path)
    if path.is_dir():
        out: Transcripts = {}
        for f in sorted(path.glob("*.json")):
            doc = json.loads(f.read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise ConfigError(f"{f}: transcript must be an object")
            out[f.stem] = doc
        return out
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: transcripts must be an object")
    return doc


def save_transcripts(directory: str | Path, transcripts: Mapping[str, Mapping[str, Any]]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for case_id, roles in transcripts.items():
        (directory / f"{case_id}.json").write_text(
            json.dumps(roles, indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# Remote chat completion
# ---------------------------------------------------------------------------


class RemoteChatBackend:
    """OpenAI-style chat-completion client (temperature fixed at 0).

    Connection errors, 429 and 5xx responses are transport errors; other
    non-2xx statuses and unparseable bodies are malformed responses.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        auth_env: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        if not endpoint or not model_name:
            raise ConfigError("remote backend needs endpoint and model_name")
        self.endpoint = endpoint
        self.model_name = model_name
        self.auth_env = auth_env
        self._client = client or httpx.Client()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if not token:
                raise ConfigError(f"environment variable {self.auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: ChatRequest, timeout: float | None = None) -> str:
        body = request.to_wire(self.model_name)
        try:
            resp = self._client.post(self.endpoint, json=body, headers=self._headers(), timeout=timeout)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(str(exc) or "request timed out") from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc) or type(exc).__name__) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedResponse(f"HTTP {resp.status_code}", raw=resp.text)
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedResponse("response is not a chat completion", raw=resp.text) from None
        if not isinstance(content, str):
            raise MalformedResponse("message content is not text", raw=resp.text)
        return content

    def close(self) -> None:
        self._client.close()

    def describe(self) -> dict[str, Any]:
        return {"kind": BackendKind.REMOTE_CHAT.value, "model_name": self.model_name, "endpoint": self.endpoint}


# ---------------------------------------------------------------------------
# Configuration reference
# ---------------------------------------------------------------------------


class BackendKind(str, Enum):
    REMOTE_CHAT = "remote_chat"
    SCRIPTED_MOCK = "scripted_mock"


@dataclass(frozen=True)
class BackendRef:
    kind: BackendKind
    model_name: str = ""
    endpoint: str | None = None
    auth_env: str | None = None
    transcripts: str | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE_CHAT and (not self.endpoint or not self.model_name):
            raise ConfigError("remote_chat backend requires endpoint and model_name")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "BackendRef":
        try:
            kind = BackendKind(doc.get("kind", ""))
        except ValueError:
            raise ConfigError(f"unknown backend kind: {doc.get('kind')!r}") from None
        return cls(
            kind=kind,
            model_name=doc.get("model_name", ""),
            endpoint=doc.get("endpoint"),
            auth_env=doc.get("auth_env"),
            transcripts=doc.get("transcripts"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "model_name": self.model_name,
            "endpoint": self.endpoint,
            "auth_env": self.auth_env,
            "transcripts": self.transcripts,
        }

    def build(self, transcripts: Transcripts | None = None) -> Backend:
        if self.kind is BackendKind.REMOTE_CHAT:
            return RemoteChatBackend(self.endpoint or "", self.model_name, self.auth_env)
        if transcripts is None:
            if not self.transcripts:
                raise ConfigError("scripted_mock backend needs transcripts")
            transcripts = load_transcripts(self.transcripts)
        return ScriptedBackend(transcripts, model_name=self.model_name or "scripted-mock")
