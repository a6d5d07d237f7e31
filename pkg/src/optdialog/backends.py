"""Chat backends: the HTTP chat-completion client and the scripted mock.

Both speak the same interface, so dialogues can run against a live
vision-language model or a deterministic script interchangeably.
"""

import base64
import hashlib
import io
import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import requests

from .errors import BackendUnavailable, MalformedScript

log = logging.getLogger(__name__)

API_KEY_ENV_VAR = "OPTDIALOG_API_KEY"

_VALID_SCRIPT_ROLES = ("generalist", "food_scientist", "vision_analyst", "decision_maker")


@dataclass(frozen=True)
class ImageAttachment:
    """An image to send with a request, as raw bytes or a remote URI."""

    uri: str | None = None
    data: bytes | None = None
    media_type: str = "image/png"

    def __post_init__(self):
        if (self.uri is None) == (self.data is None):
            raise ValueError("exactly one of uri or data must be set")

    @classmethod
    def from_file(cls, path) -> "ImageAttachment":
        suffix = str(path).lower().rsplit(".", 1)[-1]
        media = {"jpg": "image/jpeg", "jpeg": "image/jpeg"}.get(suffix, "image/png")
        with open(path, "rb") as fh:
            return cls(data=fh.read(), media_type=media)

    def digest_key(self) -> str:
        if self.uri is not None:
            return self.uri
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class RequestMeta:
    """Identifies where in a dialogue a request originates.

    attempt counts from 0: the first request for a turn is attempt 0 and
    each retry after a parse failure increments it.
    """

    image_id: str
    role: str
    round: int
    attempt: int


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple  # of (role, text) pairs, role in {"system", "user", "assistant"}
    image: ImageAttachment | None = None
    temperature: float = 0.2
    max_new_tokens: int = 512
    meta: RequestMeta | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")

    def prompt_text(self) -> str:
        """All message text concatenated, for substring-conditioned mocks."""
        return "\n".join(text for _, text in self.messages)


class ChatBackend(ABC):
    """One chat completion per call; implementations must be thread-safe."""

    @property
    @abstractmethod
    def backend_id(self) -> str: ...

    @abstractmethod
    def chat(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class ScriptEntry:
    image_id: str
    role: str
    round: int
    attempt: int
    response: str
    prompt_contains: str | None = None


@dataclass(frozen=True)
class MockScript:
    default_response: str
    entries: tuple = ()

    def lookup(self, meta: RequestMeta, prompt_text: str) -> str:
        """Most specific match wins: conditional entries in file order,
        then the unconditional entry for the key, then the default."""
        key = (meta.image_id, meta.role, meta.round, meta.attempt)
        unconditional = None
        for entry in self.entries:
            if (entry.image_id, entry.role, entry.round, entry.attempt) != key:
                continue
            if entry.prompt_contains is not None:
                if entry.prompt_contains in prompt_text:
                    return entry.response
            elif unconditional is None:
                unconditional = entry
        if unconditional is not None:
            return unconditional.response
        return self.default_response


def load_mock_script(path) -> MockScript:
    """Parse a mock script JSON file, validating the schema strictly."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise MalformedScript(f"{path}: cannot read script: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedScript(f"{path}: invalid JSON: {exc}") from exc

    if not isinstance(doc, dict):
        raise MalformedScript(f"{path}: top level must be an object")
    if "default_response" not in doc:
        raise MalformedScript(f"{path}: missing required key 'default_response'")
    default = doc["default_response"]
    if not isinstance(default, str):
        raise MalformedScript(f"{path}: default_response must be a string")

    raw_entries = doc.get("entries", [])
    if not isinstance(raw_entries, list):
        raise MalformedScript(f"{path}: entries must be a list")

    entries = []
    seen_keys = set()
    for i, raw in enumerate(raw_entries):
        where = f"{path}: entries[{i}]"
        if not isinstance(raw, dict):
            raise MalformedScript(f"{where}: must be an object")
        for req in ("image_id", "role", "round", "attempt", "response"):
            if req not in raw:
                raise MalformedScript(f"{where}: missing required key {req!r}")
        image_id = raw["image_id"]
        role = raw["role"]
        rnd = raw["round"]
        attempt = raw["attempt"]
        response = raw["response"]
        contains = raw.get("prompt_contains")
        if not isinstance(image_id, str) or not image_id:
            raise MalformedScript(f"{where}: image_id must be a non-empty string")
        if role not in _VALID_SCRIPT_ROLES:
            raise MalformedScript(
                f"{where}: unknown role {role!r}, expected one of {_VALID_SCRIPT_ROLES}"
            )
        if not isinstance(rnd, int) or isinstance(rnd, bool) or rnd < 1:
            raise MalformedScript(f"{where}: round must be an integer >= 1")
        if not isinstance(attempt, int) or isinstance(attempt, bool) or attempt < 0:
            raise MalformedScript(f"{where}: attempt must be an integer >= 0")
        if not isinstance(response, str):
            raise MalformedScript(f"{where}: response must be a string")
        if contains is not None and not isinstance(contains, str):
            raise MalformedScript(f"{where}: prompt_contains must be a string")
        key = (image_id, role, rnd, attempt, contains)
        if key in seen_keys:
            raise MalformedScript(f"{where}: duplicate entry for key {key}")
        seen_keys.add(key)
        entries.append(
            ScriptEntry(
                image_id=image_id,
                role=role,
                round=rnd,
                attempt=attempt,
                response=response,
                prompt_contains=contains,
            )
        )
    return MockScript(default_response=default, entries=tuple(entries))


class MockBackend(ChatBackend):
    """Deterministic backend answering purely from a script.

    Keeps a call log for tests; lookup itself has no side effects on the
    returned responses, so repeated identical requests repeat answers.
    """

    def __init__(self, script: MockScript):
        self._script = script
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    @property
    def backend_id(self) -> str:
        return "mock"

    def chat(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
        if request.meta is None:
            return self._script.default_response
        return self._script.lookup(request.meta, request.prompt_text())


@dataclass
class HttpChatBackend(ChatBackend):
    """Client for an OpenAI-style chat-completions endpoint.

    Transient failures (connection errors, HTTP 429 and 5xx) are retried
    up to 3 times with exponential backoff; other HTTP errors fail fast.
    """

    base_url: str
    model: str = "default"
    timeout: float = 120.0
    resize_longest_side: int | None = 640
    backoff_base: float = 0.5
    max_transport_retries: int = 3
    api_key: str | None = field(default=None, repr=False)

    def __post_init__(self):
        url = self.base_url.rstrip("/")
        if not url.endswith("/chat/completions"):
            url = url + "/v1/chat/completions"
        self._endpoint = url
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV_VAR)

    @property
    def backend_id(self) -> str:
        return self._endpoint

    def _prepare_image_part(self, image: ImageAttachment) -> dict:
        if image.uri is not None:
            return {"type": "image_url", "image_url": {"url": image.uri}}
        data = image.data
        media_type = image.media_type
        if self.resize_longest_side is not None:
            data, media_type = _resize_image_bytes(data, media_type, self.resize_longest_side)
        encoded = base64.b64encode(data).decode("ascii")
        return {
            "type": "image_url",
            "image_url": {"url": f"data:{media_type};base64,{encoded}"},
        }

    def _build_payload(self, request: ChatRequest) -> dict:
        messages = []
        image_pending = request.image is not None
        for role, text in request.messages:
            if role == "user" and image_pending:
                content = [
                    {"type": "text", "text": text},
                    self._prepare_image_part(request.image),
                ]
                messages.append({"role": "user", "content": content})
                image_pending = False
            else:
                messages.append({"role": role, "content": text})
        if image_pending:
            messages.append(
                {"role": "user", "content": [self._prepare_image_part(request.image)]}
            )
        return {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }

    def chat(self, request: ChatRequest) -> str:
        payload = self._build_payload(request)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error = None
        attempts = self.max_transport_retries + 1
        for i in range(attempts):
            if i > 0:
                time.sleep(self.backoff_base * (2 ** (i - 1)))
            try:
                resp = requests.post(
                    self._endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = f"connection error: {exc}"
                log.warning("request to %s failed (%s), attempt %d/%d",
                            self._endpoint, last_error, i + 1, attempts)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("request to %s failed (%s), attempt %d/%d",
                            self._endpoint, last_error, i + 1, attempts)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(
                    f"{self._endpoint}: HTTP {resp.status_code}: {resp.text[:200]}"
                )
            return self._extract_text(resp)
        raise BackendUnavailable(
            f"{self._endpoint}: gave up after {attempts} attempts ({last_error})"
        )

    def _extract_text(self, resp) -> str:
        try:
            doc = resp.json()
            choice = doc["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(
                f"{self._endpoint}: malformed completion payload: {exc}"
            ) from exc
        if not isinstance(text, str):
            raise BackendUnavailable(
                f"{self._endpoint}: completion content is not text"
            )
        if choice.get("finish_reason") == "length":
            log.warning(
                "completion for %s hit the max_tokens limit; output may be truncated",
                self._endpoint,
            )
        return text


def _resize_image_bytes(data: bytes, media_type: str, longest_side: int) -> tuple:
    """Downscale so the longest side is at most longest_side. Returns the
    original bytes untouched when already small enough or undecodable."""
    try:
        from PIL import Image
    except ImportError:
        log.warning("Pillow not available, sending image at original size")
        return data, media_type
    try:
        with Image.open(io.BytesIO(data)) as img:
            w, h = img.size
            if max(w, h) <= longest_side:
                return data, media_type
            scale = longest_side / max(w, h)
            new_size = (max(1, round(w * scale)), max(1, round(h * scale)))
            resized = img.convert("RGB").resize(new_size, Image.LANCZOS)
            buf = io.BytesIO()
            resized.save(buf, format="PNG")
            return buf.getvalue(), "image/png"
    except OSError:
        log.warning("could not decode image for resizing, sending as-is")
        return data, media_type
