"""Client for the JSON-over-HTTP conditional-scoring protocol.

Wire format (all integers as JSON numbers; content type application/json):

    POST /v1/score   ScoreRequest -> ScoreResponse
    GET  /v1/info    -> {"model_id": str, "max_len": int, "styles": [...]}

Encoder tokens carry slot markers as negative integers, strictly decreasing
from -1 in order of appearance; the decoder prefix interleaves each filled
slot's marker before its fill tokens.  Token ids live in the server's
tokenizer space; this client never interprets them.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import httpx

from .core import MaskedQuery, TokenSeq, ValidationError, validate
from .providers import Capability, Provider

DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 3
DEFAULT_MAX_IN_FLIGHT = 4


class RemoteError(RuntimeError):
    """Base class for remote-scoring failures; never converted to a score."""


class TransportError(RemoteError):
    """Connection failure or timeout (retried with backoff)."""


class ServerFault(RemoteError):
    """5xx from the server (retried with backoff)."""

    def __init__(self, status: int, body: str):
        self.status = status
        super().__init__(f"server fault {status}: {body[:200]}")


class SchemaRejection(RemoteError):
    """4xx from the server (never retried)."""

    def __init__(self, status: int, body: str):
        self.status = status
        super().__init__(f"request rejected {status}: {body[:200]}")


class ResponseSchemaError(RemoteError):
    """The response body does not match the protocol schema."""


@dataclass(frozen=True)
class ScoreRequest:
    prompt_prefix: str
    encoder_tokens: tuple[int, ...]
    decoder_prefix: tuple[int, ...]
    candidates: tuple[tuple[int, ...], ...]
    normalize: bool = False
    request_id: str | None = None

    def __post_init__(self) -> None:
        problems = []
        markers = [t for t in self.encoder_tokens if t < 0]
        if markers != [-(i + 1) for i in range(len(markers))]:
            problems.append("sentinel markers strictly decreasing from -1")
        if not self.candidates or any(not c for c in self.candidates):
            problems.append("candidates nonempty")
        if problems:
            raise ValidationError(problems)

    def to_json(self) -> dict[str, Any]:
        # Field order is fixed; fixtures compare serialized bytes.
        data: dict[str, Any] = {
            "prompt_prefix": self.prompt_prefix,
            "encoder_tokens": list(self.encoder_tokens),
            "decoder_prefix": list(self.decoder_prefix),
            "candidates": [list(c) for c in self.candidates],
            "normalize": self.normalize,
        }
        if self.request_id is not None:
            data["request_id"] = self.request_id
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ScoreRequest":
        return cls(
            prompt_prefix=str(data["prompt_prefix"]),
            encoder_tokens=tuple(int(t) for t in data["encoder_tokens"]),
            decoder_prefix=tuple(int(t) for t in data.get("decoder_prefix", ())),
            candidates=tuple(tuple(int(t) for t in c) for c in data["candidates"]),
            normalize=bool(data.get("normalize", False)),
            request_id=data.get("request_id"),
        )


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class ScoreResponse:
    log_probs: tuple[float, ...]
    model_id: str
    usage: Usage = field(default_factory=Usage)
    request_id: str | None = None

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "log_probs": list(self.log_probs),
            "model_id": self.model_id,
            "usage": {
                "input_tokens": self.usage.input_tokens,
                "output_tokens": self.usage.output_tokens,
            },
        }
        if self.request_id is not None:
            data["request_id"] = self.request_id
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ScoreResponse":
        usage = data.get("usage", {})
        return cls(
            log_probs=tuple(float(x) for x in data["log_probs"]),
            model_id=str(data["model_id"]),
            usage=Usage(
                input_tokens=int(usage.get("input_tokens", 0)),
                output_tokens=int(usage.get("output_tokens", 0)),
            ),
            request_id=data.get("request_id"),
        )


@dataclass(frozen=True)
class ServerInfo:
    model_id: str
    max_len: int
    styles: tuple[str, ...]


def _validated_response(request: ScoreRequest, data: Any) -> ScoreResponse:
    try:
        response = ScoreResponse.from_json(data)
    except (KeyError, TypeError, ValueError) as err:
        raise ResponseSchemaError(f"malformed response body: {err}") from err
    if len(response.log_probs) != len(request.candidates):
        raise ResponseSchemaError(
            f"{len(response.log_probs)} log_probs for {len(request.candidates)} candidates"
        )
    if any(x != x or x in (float("inf"), float("-inf")) for x in response.log_probs):
        raise ResponseSchemaError("log_probs must be finite")
    return response


def remote_score(
    endpoint: str,
    request: ScoreRequest,
    timeout: float = DEFAULT_TIMEOUT,
    retries: int = DEFAULT_RETRIES,
    backoff: float = 0.5,
    client: httpx.Client | None = None,
) -> ScoreResponse:
    """POST /v1/score with retry on transient failures; 4xx never retries."""
    owned = client is None
    client = client or httpx.Client()
    try:
        last: RemoteError | None = None
        for attempt in range(retries + 1):
            if attempt > 0:
                time.sleep(backoff * 2 ** (attempt - 1))
            try:
                resp = client.post(
                    endpoint.rstrip("/") + "/v1/score",
                    json=request.to_json(),
                    timeout=timeout,
                )
            except httpx.TimeoutException as err:
                last = TransportError(f"timeout after {timeout}s: {err}")
                continue
            except httpx.HTTPError as err:
                last = TransportError(str(err))
                continue
            if 400 <= resp.status_code < 500:
                raise SchemaRejection(resp.status_code, resp.text)
            if resp.status_code >= 500:
                last = ServerFault(resp.status_code, resp.text)
                continue
            return _validated_response(request, resp.json())
        assert last is not None
        raise last
    finally:
        if owned:
            client.close()


def fetch_info(
    endpoint: str,
    timeout: float = DEFAULT_TIMEOUT,
    client: httpx.Client | None = None,
) -> ServerInfo:
    owned = client is None
    client = client or httpx.Client()
    try:
        try:
            resp = client.get(endpoint.rstrip("/") + "/v1/info", timeout=timeout)
        except httpx.HTTPError as err:
            raise TransportError(str(err)) from err
        if resp.status_code != 200:
            raise ServerFault(resp.status_code, resp.text)
        data = resp.json()
        try:
            return ServerInfo(
                model_id=str(data["model_id"]),
                max_len=int(data["max_len"]),
                styles=tuple(str(s) for s in data["styles"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ResponseSchemaError(f"malformed info body: {err}") from err
    finally:
        if owned:
            client.close()


def query_to_request(
    query: MaskedQuery,
    candidates: Sequence[TokenSeq],
    prompt_prefix: str = "",
    normalize: bool = False,
    request_id: str | None = None,
) -> ScoreRequest:
    """A wire request from a masked query; conventions match one-to-one."""
    return ScoreRequest(
        prompt_prefix=prompt_prefix,
        encoder_tokens=query.encoder_tokens,
        decoder_prefix=query.decoder_prefix,
        candidates=tuple(tuple(c.ids) for c in candidates),
        normalize=normalize,
        request_id=request_id,
    )


class RemoteProvider(Provider):
    """Provider backed by a scoring server; safe for concurrent use.

    In-flight requests are bounded by a semaphore; the capability descriptor
    comes from GET /v1/info on first use.  Servers may batch
    nondeterministically, so the deterministic flag is false.
    """

    def __init__(
        self,
        endpoint: str,
        prompt_prefix: str = "",
        normalize: bool = False,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.prompt_prefix = prompt_prefix
        self.normalize = normalize
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._semaphore = threading.Semaphore(max_in_flight)
        self._client = client or httpx.Client()
        self._info: ServerInfo | None = None
        self._info_lock = threading.Lock()
        self._counter = 0
        self._counter_lock = threading.Lock()

    def info(self) -> ServerInfo:
        with self._info_lock:
            if self._info is None:
                self._info = fetch_info(self.endpoint, self.timeout, client=self._client)
            return self._info

    @property
    def capabilities(self) -> Capability:
        return Capability(max_context_len=self.info().max_len, deterministic=False)

    def _next_id(self) -> str:
        with self._counter_lock:
            self._counter += 1
            return f"req-{self._counter:08d}"

    def score_candidates(
        self, query: MaskedQuery, candidates: Sequence[TokenSeq]
    ) -> list[float]:
        request = query_to_request(
            query,
            candidates,
            prompt_prefix=self.prompt_prefix,
            normalize=self.normalize,
            request_id=self._next_id(),
        )
        with self._semaphore:
            response = remote_score(
                self.endpoint,
                request,
                timeout=self.timeout,
                retries=self.retries,
                backoff=self.backoff,
                client=self._client,
            )
        if response.request_id is not None and response.request_id != request.request_id:
            raise ResponseSchemaError(
                f"response id {response.request_id!r} does not match {request.request_id!r}"
            )
        return list(response.log_probs)
