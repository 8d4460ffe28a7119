"""Single chokepoint for every model call.

All judge, quiz, and relevance traffic goes through one chat-completions
wire dialect (OpenAI-style JSON over HTTPS). Each request reduces to a
canonical digest; a replay store keyed by that digest makes entire runs
reproducible offline. Replay mode never opens a connection: a stored
response is returned or ReplayMissError is raised, never a silent live
call.

API keys come exclusively from environment variables named by the
provider profile. Proxy environment variables are honored through the
HTTP client's platform conventions.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import httpx

from .clock import SYSTEM_CLOCK
from .errors import (
    AuthError,
    GatewayError,
    ReplayMissError,
    SchemaFailureError,
    TransportError,
)

_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})
_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".webp": "image/webp",
    ".gif": "image/gif",
}


@dataclass(frozen=True)
class ProviderProfile:
    """Connection and pricing parameters for one model endpoint."""

    name: str
    endpoint: str
    model: str
    auth_env: str = ""  # env var holding the API key; empty means none needed
    price_in: float = 0.0  # currency per input token
    price_out: float = 0.0  # currency per output token
    rpm_limit: int = 60
    tpm_limit: int = 200_000
    supports_vision: bool = True
    max_images_per_request: int = 8

    def __post_init__(self):
        if self.price_in < 0 or self.price_out < 0:
            raise ValueError("prices must be >= 0")
        if self.rpm_limit < 1 or self.tpm_limit < 1:
            raise ValueError("rate limits must be >= 1")
        if self.max_images_per_request < 1:
            raise ValueError("max_images_per_request must be >= 1")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    path: str

    def read_bytes(self) -> bytes:
        return Path(self.path).read_bytes()

    def media_type(self) -> str:
        return _MEDIA_TYPES.get(Path(self.path).suffix.lower(), "image/png")


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple
    temperature: float = 0.0
    max_tokens: int = 2048
    schema_tag: str = ""  # names the expected reply structure; part of the digest

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request needs at least one message")

    def image_count(self) -> int:
        return sum(
            1 for m in self.messages for p in m.parts if isinstance(p, ImagePart)
        )

    def with_repair(self, previous_reply: str, complaint: str) -> "ChatRequest":
        extra = (
            Message(role="assistant", parts=(TextPart(previous_reply),)),
            Message(role="user", parts=(TextPart(
                "Your previous reply could not be used: " + complaint
                + ". Reply again with ONLY the corrected JSON, nothing else."),)),
        )
        return replace(self, messages=self.messages + extra)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model: str
    tokens_in: int
    tokens_out: int
    cost: float
    latency: float
    digest: str


def _image_digest(part: ImagePart) -> str:
    return hashlib.sha256(part.read_bytes()).hexdigest()


def canonical_request(req: ChatRequest, profile: ProviderProfile) -> dict:
    """Digest-stable view of a request. Image parts are represented by a
    content hash so renaming a screenshot file does not change identity."""
    messages = []
    for m in req.messages:
        parts = []
        for p in m.parts:
            if isinstance(p, TextPart):
                parts.append({"text": p.text})
            elif isinstance(p, ImagePart):
                parts.append({"image_sha256": _image_digest(p)})
            else:
                raise GatewayError(f"unknown message part type {type(p).__name__}")
        messages.append({"role": m.role, "parts": parts})
    return {
        "model": profile.model,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "schema_tag": req.schema_tag,
        "messages": messages,
    }


def request_digest(req: ChatRequest, profile: ProviderProfile) -> str:
    canon = json.dumps(canonical_request(req, profile),
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class ReplayStore:
    """Digest-keyed directory of recorded responses, one JSON file each."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        p = self.path_for(digest)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, digest: str, request_canon: dict, response: dict):
        self.root.mkdir(parents=True, exist_ok=True)
        payload = json.dumps({"request": request_canon, "response": response},
                             sort_keys=True, indent=2)
        tmp = self.path_for(digest).with_suffix(".tmp")
        tmp.write_text(payload, encoding="utf-8")
        tmp.replace(self.path_for(digest))

    def __len__(self):
        return len(list(self.root.glob("*.json"))) if self.root.exists() else 0


def _estimate_tokens(req: ChatRequest) -> int:
    chars = sum(len(p.text) for m in req.messages for p in m.parts
                if isinstance(p, TextPart))
    images = req.image_count()
    return max(1, chars // 4) + images * 1000


class _RateLimiter:
    """Sliding 60s window over request count and token throughput."""

    def __init__(self, profile: ProviderProfile, clock):
        self._rpm = profile.rpm_limit
        self._tpm = profile.tpm_limit
        self._clock = clock
        self._calls = deque()
        self._tokens = deque()
        self._lock = threading.Lock()

    def acquire(self, token_estimate: int):
        while True:
            with self._lock:
                now = self._clock.monotonic()
                while self._calls and now - self._calls[0] >= 60.0:
                    self._calls.popleft()
                while self._tokens and now - self._tokens[0][0] >= 60.0:
                    self._tokens.popleft()
                spent = sum(t for _, t in self._tokens)
                if len(self._calls) < self._rpm and spent + token_estimate <= self._tpm:
                    self._calls.append(now)
                    self._tokens.append((now, token_estimate))
                    return now
                horizon = []
                if len(self._calls) >= self._rpm:
                    horizon.append(self._calls[0] + 60.0)
                if spent + token_estimate > self._tpm and self._tokens:
                    horizon.append(self._tokens[0][0] + 60.0)
                wait = max(0.01, min(horizon) - now) if horizon else 0.01
            self._clock.sleep(wait)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_structured(text: str):
    """Pull a JSON value out of a model reply that may wrap it in fences
    or prose. Raises ValueError when nothing parsable is found."""
    candidates = [text.strip()]
    fence = _FENCE_RE.search(text)
    if fence:
        candidates.insert(0, fence.group(1).strip())
    for candidate in list(candidates):
        for opener, closer in (("{", "}"), ("[", "]")):
            start = candidate.find(opener)
            end = candidate.rfind(closer)
            if start != -1 and end > start:
                candidates.append(candidate[start:end + 1])
    for candidate in candidates:
        if not candidate:
            continue
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    raise ValueError("reply contains no parsable JSON")


class Gateway:
    """Dispatches chat requests in live, record, or replay mode.

    Record mode reuses an already-stored response for the same digest,
    so interrupted recording sessions resume instead of re-spending.
    """

    def __init__(self, mode: str = "live", store: ReplayStore | None = None,
                 *, transport=None, clock=None, max_attempts: int = 3,
                 backoff_base: float = 0.5):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode requires a replay store")
        self.mode = mode
        self.store = store
        self.network_calls = 0
        self._transport = transport
        self._clock = clock or SYSTEM_CLOCK
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._limiters = {}
        self._ledger = []
        self._lock = threading.Lock()
        self._client = None

    # -- plumbing -----------------------------------------------------

    def _limiter(self, profile: ProviderProfile) -> _RateLimiter:
        with self._lock:
            limiter = self._limiters.get(profile.name)
            if limiter is None:
                limiter = _RateLimiter(profile, self._clock)
                self._limiters[profile.name] = limiter
            return limiter

    def _http(self) -> httpx.Client:
        with self._lock:
            if self._client is None:
                self._client = httpx.Client(timeout=httpx.Timeout(120.0),
                                            transport=self._transport)
            return self._client

    def close(self):
        with self._lock:
            if self._client is not None:
                self._client.close()
                self._client = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _record_cost(self, profile, family, tag, resp: ChatResponse):
        with self._lock:
            self._ledger.append((profile.name, family, tag,
                                 resp.tokens_in, resp.tokens_out, resp.cost))

    @staticmethod
    def _priced(profile: ProviderProfile, tokens_in: int, tokens_out: int) -> float:
        return tokens_in * profile.price_in + tokens_out * profile.price_out

    # -- wire format ---------------------------------------------------

    @staticmethod
    def _wire_messages(req: ChatRequest) -> list:
        out = []
        for m in req.messages:
            if all(isinstance(p, TextPart) for p in m.parts):
                out.append({"role": m.role,
                            "content": "\n".join(p.text for p in m.parts)})
                continue
            content = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    content.append({"type": "text", "text": p.text})
                else:
                    data = base64.b64encode(p.read_bytes()).decode("ascii")
                    content.append({
                        "type": "image_url",
                        "image_url": {"url": f"data:{p.media_type()};base64,{data}"},
                    })
            out.append({"role": m.role, "content": content})
        return out

    def _headers(self, profile: ProviderProfile) -> dict:
        headers = {"Content-Type": "application/json"}
        if profile.auth_env:
            key = os.environ.get(profile.auth_env, "")
            if not key:
                raise AuthError(
                    f"environment variable {profile.auth_env} is not set "
                    f"(required by profile {profile.name!r})")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _dispatch(self, req: ChatRequest, profile: ProviderProfile) -> dict:
        payload = {
            "model": profile.model,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": self._wire_messages(req),
        }
        headers = self._headers(profile)
        self._limiter(profile).acquire(_estimate_tokens(req))
        last_error = None
        for attempt in range(self._max_attempts):
            if attempt:
                self._clock.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                with self._lock:
                    self.network_calls += 1
                resp = self._http().post(profile.endpoint, json=payload,
                                         headers=headers)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code in _RETRY_STATUSES:
                last_error = f"http {resp.status_code}"
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials (http {resp.status_code})")
            if resp.status_code >= 400:
                raise GatewayError(f"provider error http {resp.status_code}: "
                                   f"{resp.text[:200]}")
            try:
                return resp.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise GatewayError(f"provider returned unparsable body: {exc}") from exc
        raise TransportError(f"request failed after {self._max_attempts} attempts: "
                             f"{last_error}")

    # -- public API ----------------------------------------------------

    def complete(self, req: ChatRequest, profile: ProviderProfile, *,
                 family: str = "general", tag: str = "") -> ChatResponse:
        n_images = req.image_count()
        if n_images and not profile.supports_vision:
            raise GatewayError(f"profile {profile.name!r} does not accept images")
        if n_images > profile.max_images_per_request:
            raise GatewayError(
                f"request carries {n_images} images, profile {profile.name!r} "
                f"accepts at most {profile.max_images_per_request}")

        digest = request_digest(req, profile)

        if self.mode in ("replay", "record") and self.store is not None:
            stored = self.store.get(digest)
            if stored is not None:
                r = stored["response"]
                resp = ChatResponse(
                    text=r["text"], model=r.get("model", profile.model),
                    tokens_in=int(r.get("tokens_in", 0)),
                    tokens_out=int(r.get("tokens_out", 0)),
                    cost=self._priced(profile, int(r.get("tokens_in", 0)),
                                      int(r.get("tokens_out", 0))),
                    latency=float(r.get("latency", 0.0)),
                    digest=digest,
                )
                self._record_cost(profile, family, tag, resp)
                return resp
            if self.mode == "replay":
                raise ReplayMissError(digest)

        t0 = self._clock.monotonic()
        data = self._dispatch(req, profile)
        latency = self._clock.monotonic() - t0
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed provider response: {exc}") from exc
        if not isinstance(text, str):
            raise GatewayError("provider response content is not text")
        usage = data.get("usage") or {}
        tokens_in = int(usage.get("prompt_tokens", _estimate_tokens(req)))
        tokens_out = int(usage.get("completion_tokens", max(1, len(text) // 4)))
        resp = ChatResponse(
            text=text,
            model=str(data.get("model", profile.model)),
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost=self._priced(profile, tokens_in, tokens_out),
            latency=latency,
            digest=digest,
        )
        if self.mode == "record":
            self.store.put(digest, canonical_request(req, profile), {
                "text": resp.text, "model": resp.model,
                "tokens_in": resp.tokens_in, "tokens_out": resp.tokens_out,
                "latency": resp.latency,
            })
        self._record_cost(profile, family, tag, resp)
        return resp

    def complete_structured(self, req: ChatRequest, validator, profile:
                            ProviderProfile, *, family: str = "general",
                            tag: str = "", repair_rounds: int = 3):
        """Run a request whose reply must satisfy `validator` (a callable
        taking the parsed JSON and returning a value or raising
        ValueError). Malformed replies trigger up to `repair_rounds`
        follow-up requests; exhausting them raises SchemaFailureError.
        """
        violations = []
        current = req
        last_text = ""
        for _ in range(1 + repair_rounds):
            resp = self.complete(current, profile, family=family, tag=tag)
            last_text = resp.text
            try:
                data = extract_structured(resp.text)
                return validator(data), resp
            except ValueError as exc:
                violations.append(str(exc))
                current = current.with_repair(resp.text, str(exc))
        raise SchemaFailureError(
            f"{1 + repair_rounds} consecutive malformed replies for "
            f"schema {req.schema_tag or 'unspecified'}",
            raw_text=last_text, violations=tuple(violations))

    def cost_report(self) -> "CostReport":
        with self._lock:
            lines = list(self._ledger)
        return CostReport.from_lines(lines)


@dataclass(frozen=True)
class CostReport:
    total_calls: int
    total_tokens_in: int
    total_tokens_out: int
    total_cost: float
    by_profile: tuple = ()  # (name, calls, tokens_in, tokens_out, cost)
    by_family: tuple = ()
    by_tag: tuple = ()

    @staticmethod
    def from_lines(lines) -> "CostReport":
        # Sorted so float accumulation never depends on completion order;
        # threaded runs must produce identical reports.
        lines = sorted(lines)

        def rollup(index):
            acc = {}
            for line in lines:
                key = line[index]
                calls, tin, tout, cost = acc.get(key, (0, 0, 0, 0.0))
                acc[key] = (calls + 1, tin + line[3], tout + line[4], cost + line[5])
            return tuple(sorted((k, *v) for k, v in acc.items()))

        return CostReport(
            total_calls=len(lines),
            total_tokens_in=sum(l[3] for l in lines),
            total_tokens_out=sum(l[4] for l in lines),
            total_cost=sum(l[5] for l in lines),
            by_profile=rollup(0),
            by_family=rollup(1),
            by_tag=rollup(2),
        )

    def for_tag(self, tag: str) -> dict:
        for name, calls, tin, tout, cost in self.by_tag:
            if name == tag:
                return {"calls": calls, "tokens_in": tin,
                        "tokens_out": tout, "cost": cost}
        return {"calls": 0, "tokens_in": 0, "tokens_out": 0, "cost": 0.0}

    def to_dict(self) -> dict:
        def table(rows):
            return {name: {"calls": c, "tokens_in": ti, "tokens_out": to,
                           "cost": cost} for name, c, ti, to, cost in rows}
        return {
            "total_calls": self.total_calls,
            "total_tokens_in": self.total_tokens_in,
            "total_tokens_out": self.total_tokens_out,
            "total_cost": self.total_cost,
            "by_profile": table(self.by_profile),
            "by_family": table(self.by_family),
            "by_tag": table(self.by_tag),
        }
