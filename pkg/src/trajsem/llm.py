"""trajsem.llm

LLM gateway: dispatches prompts to a chat-completions HTTP endpoint or to
a replay backend that serves stored responses keyed by request digest.
Responses can be cached on disk in the same layout as replay fixtures.
"""

import asyncio
import logging
import os
import random
import time
from abc import ABC, abstractmethod
from argparse import ArgumentParser
from collections import defaultdict
from configparser import ConfigParser
from enum import StrEnum
from pathlib import Path
from types import TracebackType
from typing import Any, Optional, Self, Sequence, Tuple, Type
from uuid import uuid4

import aiofiles
from aiohttp import ClientError, ClientTimeout
from pydantic import Field, ValidationError, root_validator, validator

from pyutils import JSONExportable, ThrottledClientSession

from .errors import (
    BackendError,
    BackendUnavailable,
    ConfigError,
    FixtureMissing,
    TransientBackendError,
    TrajsemError,
)
from .utils import sha256_obj

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

DEFAULT_MODEL: str = "gpt-4"
DEFAULT_TEMPERATURE: float = 0.1
DEFAULT_MAX_TOKENS: int = 2048


class BackendKind(StrEnum):
    http_chat = "http_chat"
    replay = "replay"

    def __str__(self) -> str:
        return self.value


###########################################
#
# LlmRequest() & LlmResponse()
#
###########################################


class LlmRequest(JSONExportable):
    # fmt: off
    model_id    : str   = Field(default=DEFAULT_MODEL)
    temperature : float = Field(default=DEFAULT_TEMPERATURE)
    max_tokens  : int   = Field(default=DEFAULT_MAX_TOKENS)
    prompt      : str   = Field(default=...)
    request_key : str   = Field(default="")
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("temperature")
    def check_temperature(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"temperature must be >= 0: {v}")
        return v

    @validator("max_tokens")
    def check_max_tokens(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"max_tokens must be positive: {v}")
        return v

    @root_validator(skip_on_failure=True)
    def _request_key(cls, values: dict[str, Any]) -> dict[str, Any]:
        key: str = cls.mk_key(
            values["model_id"], values["temperature"], values["prompt"]
        )
        if values["request_key"] == "":
            values["request_key"] = key
        elif values["request_key"] != key:
            raise ValueError("request_key does not match the request")
        return values

    @classmethod
    def mk_key(cls, model_id: str, temperature: float, prompt: str) -> str:
        """sha256 of the canonical JSON of (model_id, temperature, prompt)"""
        return sha256_obj(
            {"model_id": model_id, "temperature": temperature, "prompt": prompt}
        )

    def payload(self) -> dict[str, Any]:
        """Chat-completions request body, prompt as the only user message"""
        return {
            "model": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": self.prompt}],
        }


class TokenUsage(JSONExportable):
    prompt: int = Field(default=0)
    completion: int = Field(default=0)

    _exclude_defaults = False


class LlmResponse(JSONExportable):
    # fmt: off
    text        : str               = Field(default=...)
    latency_ms  : int               = Field(default=0)
    token_usage : TokenUsage | None = Field(default=None)
    backend_id  : str               = Field(default="")
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = True
        validate_assignment = True


###########################################
#
# BackendConfig()
#
###########################################


class BackendConfig(JSONExportable):
    # fmt: off
    kind            : BackendKind   = Field(default=BackendKind.replay)
    endpoint_url    : str | None    = Field(default=None)
    auth_token_env  : str | None    = Field(default=None)
    timeout_s       : float         = Field(default=60)
    max_retries     : int           = Field(default=3)
    backoff_base_ms : int           = Field(default=500)
    parallelism     : int           = Field(default=4)
    cache_dir       : Path | None   = Field(default=None)
    fixture_dir     : Path | None   = Field(default=None)
    rate_limit      : float         = Field(default=0)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("timeout_s")
    def check_timeout(cls, v: float) -> float:
        if v <= 0:
            raise ValueError(f"timeout_s must be positive: {v}")
        return v

    @validator("max_retries", "backoff_base_ms")
    def check_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"must be >= 0: {v}")
        return v

    @validator("parallelism")
    def check_parallelism(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"parallelism must be a positive integer: {v}")
        return v

    @root_validator(skip_on_failure=True)
    def check_kind(cls, values: dict[str, Any]) -> dict[str, Any]:
        if values["kind"] == BackendKind.http_chat:
            if not values["endpoint_url"] or not values["auth_token_env"]:
                raise ValueError("http_chat backend needs endpoint_url and auth_token_env")
        elif values["fixture_dir"] is None:
            raise ValueError("replay backend needs fixture_dir")
        return values


###########################################
#
# Transports
#
###########################################


class Transport(ABC):
    """Sends one request. Implementations are shared by concurrent calls"""

    backend_id: str = ""

    @abstractmethod
    async def send(self, request: LlmRequest) -> LlmResponse:
        raise NotImplementedError

    async def close(self) -> None:
        return None

    def stats(self) -> str | None:
        return None


class HttpChatTransport(Transport):
    """Chat-completions client over aiohttp"""

    def __init__(self, config: BackendConfig):
        assert config.endpoint_url is not None, "endpoint_url must be set"
        assert config.auth_token_env is not None, "auth_token_env must be set"
        token: str | None = os.environ.get(config.auth_token_env)
        if token is None or token == "":
            raise ConfigError(
                f"environment variable {config.auth_token_env} for the API token is not set"
            )
        self.url: str = config.endpoint_url
        self.backend_id = f"{BackendKind.http_chat}:{config.endpoint_url}"
        self._headers: dict[str, str] = {
            "Authorization": f"Bearer {token}",
            "Content-Type": "application/json",
        }
        self._timeout: float = config.timeout_s
        self._rate_limit: float = config.rate_limit
        self._session: ThrottledClientSession | None = None

    def _get_session(self) -> ThrottledClientSession:
        # created lazily inside the running event loop
        if self._session is None:
            self._session = ThrottledClientSession(
                rate_limit=self._rate_limit,
                headers=self._headers,
                timeout=ClientTimeout(total=self._timeout),
            )
            debug("LLM aiohttp session initiated")
        return self._session

    async def send(self, request: LlmRequest) -> LlmResponse:
        start: float = time.monotonic()
        try:
            async with self._get_session().post(
                self.url, json=request.payload()
            ) as resp:
                if resp.status == 429 or resp.status >= 500:
                    raise TransientBackendError(f"HTTP {resp.status} from {self.url}")
                if resp.status != 200:
                    raise BackendError(
                        f"HTTP {resp.status} from {self.url}: {(await resp.text())[:200]}"
                    )
                data: dict[str, Any] = await resp.json()
        except asyncio.TimeoutError as err:
            raise TransientBackendError(f"timeout calling {self.url}") from err
        except ClientError as err:
            raise TransientBackendError(f"{type(err).__name__}: {err}") from err
        try:
            choice: dict[str, Any] = data["choices"][0]
            text: Any = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise BackendError(f"unexpected response from {self.url}: {err}") from err
        if not isinstance(text, str):
            # content filter and tool-call finishes carry no text
            raise BackendError(
                f"no text content from {self.url} (finish_reason={choice.get('finish_reason')})"
            )
        usage: TokenUsage | None = None
        if isinstance(u := data.get("usage"), dict):
            usage = TokenUsage(
                prompt=u.get("prompt_tokens", 0), completion=u.get("completion_tokens", 0)
            )
        return LlmResponse(
            text=text,
            latency_ms=int((time.monotonic() - start) * 1000),
            token_usage=usage,
            backend_id=self.backend_id,
        )

    async def close(self) -> None:
        if self._session is not None:
            await self._session.close()
            self._session = None
            debug("LLM aiohttp session closed")

    def stats(self) -> str | None:
        if self._session is not None and self._session.stats_dict["count"] > 0:
            return ThrottledClientSession.print_stats(self._session.stats_dict)
        return None


async def read_response_file(path: Path) -> LlmResponse:
    async with aiofiles.open(path, mode="r", encoding="utf8") as f:
        return LlmResponse.parse_raw(await f.read())


class ReplayTransport(Transport):
    """Serves <fixture_dir>/<request_key>.json files"""

    backend_id = str(BackendKind.replay)

    def __init__(self, fixture_dir: Path):
        self.fixture_dir: Path = Path(fixture_dir)
        if not self.fixture_dir.is_dir():
            raise ConfigError(f"fixture directory not found: {self.fixture_dir}")

    def path(self, request_key: str) -> Path:
        return self.fixture_dir / f"{request_key}.json"

    async def send(self, request: LlmRequest) -> LlmResponse:
        path: Path = self.path(request.request_key)
        if not path.is_file():
            raise FixtureMissing(request.request_key)
        try:
            resp: LlmResponse = await read_response_file(path)
        except ValueError as err:
            raise BackendError(f"invalid replay fixture {path.name}: {err}") from err
        resp.backend_id = self.backend_id
        return resp


def make_transport(config: BackendConfig) -> Transport:
    if config.kind == BackendKind.http_chat:
        return HttpChatTransport(config)
    assert config.fixture_dir is not None, "fixture_dir must be set"
    return ReplayTransport(config.fixture_dir)


###########################################
#
# ResponseCache()
#
###########################################


class ResponseCache:
    """One <request_key>.json file per response"""

    def __init__(self, cache_dir: Path):
        self.cache_dir: Path = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def path(self, request_key: str) -> Path:
        return self.cache_dir / f"{request_key}.json"

    async def get(self, request_key: str) -> LlmResponse | None:
        path: Path = self.path(request_key)
        if not path.is_file():
            return None
        try:
            return await read_response_file(path)
        except ValueError as err:
            message(f"ignoring corrupt cache entry {path.name}: {err}")
        return None

    async def put(self, request_key: str, response: LlmResponse) -> bool:
        """Write the entry atomically. A failed write only costs a cache miss"""
        # unique temp name: identical requests may finish concurrently
        tmp: Path = self.cache_dir / f"{request_key}.{uuid4().hex}.tmp"
        try:
            async with aiofiles.open(tmp, mode="w", encoding="utf8") as f:
                await f.write(response.json())
            tmp.replace(self.path(request_key))
            return True
        except OSError as err:
            message(f"could not cache {request_key}: {err}")
            tmp.unlink(missing_ok=True)
        return False


###########################################
#
# LlmGateway()
#
###########################################


class LlmGateway:
    def __init__(self, config: BackendConfig, transport: Transport | None = None):
        self.config: BackendConfig = config
        self.transport: Transport = (
            make_transport(config) if transport is None else transport
        )
        self.cache: ResponseCache | None = None
        if config.cache_dir is not None:
            self.cache = ResponseCache(config.cache_dir)
        self._stats: defaultdict[str, int] = defaultdict(int)

    async def __aenter__(self) -> Self:
        return self

    async def __aexit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        await self.close()

    async def close(self) -> None:
        try:
            await self.transport.close()
        except Exception as err:
            error(f"{err}")

    def _backoff(self, attempt: int) -> float:
        """Seconds to wait before retry number attempt + 1"""
        base: float = self.config.backoff_base_ms * (2**attempt) / 1000
        return base * (1 + random.random())

    async def infer(self, request: LlmRequest) -> LlmResponse:
        """Cached response or a fresh one, retrying transient failures"""
        key: str = request.request_key
        if self.cache is not None and (cached := await self.cache.get(key)) is not None:
            debug(f"cache hit: {key}")
            self._stats["cache_hits"] += 1
            return cached

        response: LlmResponse | None = None
        for attempt in range(self.config.max_retries + 1):
            self._stats["attempts"] += 1
            try:
                response = await self.transport.send(request)
                break
            except TransientBackendError as err:
                if attempt == self.config.max_retries:
                    self._stats["failures"] += 1
                    raise BackendUnavailable(
                        f"{key}: giving up after {attempt + 1} attempts: {err}"
                    ) from err
                self._stats["retries"] += 1
                delay: float = self._backoff(attempt)
                verbose(f"{key}: {err}, retrying in {delay:.2f}s")
                await asyncio.sleep(delay)
            except BackendError:
                self._stats["failures"] += 1
                raise
            except ValidationError as err:
                self._stats["failures"] += 1
                raise BackendError(f"{key}: invalid response: {err}") from err
        assert response is not None
        self._stats["responses"] += 1
        if self.cache is not None:
            await self.cache.put(key, response)
        return response

    async def batch_infer(
        self, requests: Sequence[LlmRequest]
    ) -> list[Tuple[str, LlmResponse | TrajsemError]]:
        """At most parallelism requests in flight. Results follow the input
        order; a failed request yields its error instead of a response"""
        semaphore = asyncio.Semaphore(self.config.parallelism)

        async def _one(req: LlmRequest) -> Tuple[str, LlmResponse | TrajsemError]:
            async with semaphore:
                try:
                    return req.request_key, await self.infer(req)
                except TrajsemError as err:
                    error(f"{err}")
                    return req.request_key, err

        return list(await asyncio.gather(*[_one(r) for r in requests]))

    def stats(self) -> dict[str, int]:
        res: dict[str, int] = {
            k: self._stats[k]
            for k in ["attempts", "retries", "cache_hits", "responses", "failures"]
        }
        return res

    def print(self) -> None:
        """Log gateway stats"""
        message(f"LLM backend stats ({self.transport.backend_id}):")
        for stat, value in self.stats().items():
            message(f"{stat.replace('_', ' ').capitalize():11s}: {value}")
        if (session_stats := self.transport.stats()) is not None:
            message(f"{'Session':11s}: {session_stats}")


def add_args_llm(parser: ArgumentParser, config: Optional[ConfigParser] = None) -> bool:
    """Helper to add argparse for the LLM backend"""
    try:
        debug("starting")
        LLM_BACKEND: str = BackendKind.replay.value
        LLM_MODEL: str = DEFAULT_MODEL
        LLM_TEMPERATURE: float = DEFAULT_TEMPERATURE
        LLM_MAX_TOKENS: int = DEFAULT_MAX_TOKENS
        LLM_ENDPOINT: str | None = None
        LLM_AUTH_TOKEN_ENV: str = "TRAJSEM_API_TOKEN"
        LLM_TIMEOUT: float = 60
        LLM_MAX_RETRIES: int = 3
        LLM_BACKOFF_BASE_MS: int = 500
        LLM_PARALLELISM: int = 4
        LLM_CACHE_DIR: str | None = None
        LLM_FIXTURE_DIR: str | None = None
        LLM_RATE_LIMIT: float = 0

        if config is not None and "LLM" in config.sections():
            configLLM = config["LLM"]
            LLM_BACKEND = configLLM.get("backend", LLM_BACKEND)
            LLM_MODEL = configLLM.get("model", LLM_MODEL)
            LLM_TEMPERATURE = configLLM.getfloat("temperature", LLM_TEMPERATURE)
            LLM_MAX_TOKENS = configLLM.getint("max_tokens", LLM_MAX_TOKENS)
            LLM_ENDPOINT = configLLM.get("endpoint", LLM_ENDPOINT)
            LLM_AUTH_TOKEN_ENV = configLLM.get("auth_token_env", LLM_AUTH_TOKEN_ENV)
            LLM_TIMEOUT = configLLM.getfloat("timeout", LLM_TIMEOUT)
            LLM_MAX_RETRIES = configLLM.getint("max_retries", LLM_MAX_RETRIES)
            LLM_BACKOFF_BASE_MS = configLLM.getint("backoff_base_ms", LLM_BACKOFF_BASE_MS)
            LLM_PARALLELISM = configLLM.getint("parallelism", LLM_PARALLELISM)
            LLM_CACHE_DIR = configLLM.get("cache_dir", LLM_CACHE_DIR)
            LLM_FIXTURE_DIR = configLLM.get("fixture_dir", LLM_FIXTURE_DIR)
            LLM_RATE_LIMIT = configLLM.getfloat("rate_limit", LLM_RATE_LIMIT)

        parser.add_argument(
            "--backend",
            type=str,
            choices=[b.value for b in BackendKind],
            default=LLM_BACKEND,
            help=f"LLM backend (default: {LLM_BACKEND})",
        )
        parser.add_argument(
            "--model", type=str, default=LLM_MODEL, metavar="MODEL", help="model id"
        )
        parser.add_argument(
            "--temperature",
            type=float,
            default=LLM_TEMPERATURE,
            metavar="TEMPERATURE",
            help=f"sampling temperature (default: {LLM_TEMPERATURE})",
        )
        parser.add_argument(
            "--max-tokens",
            type=int,
            default=LLM_MAX_TOKENS,
            metavar="TOKENS",
            help="completion token limit",
        )
        parser.add_argument(
            "--endpoint",
            type=str,
            default=LLM_ENDPOINT,
            metavar="URL",
            help="chat-completions endpoint URL",
        )
        parser.add_argument(
            "--auth-token-env",
            type=str,
            default=LLM_AUTH_TOKEN_ENV,
            metavar="ENV_VAR",
            help=f"environment variable holding the API token (default: {LLM_AUTH_TOKEN_ENV})",
        )
        parser.add_argument(
            "--timeout",
            type=float,
            default=LLM_TIMEOUT,
            metavar="SECONDS",
            help="request timeout",
        )
        parser.add_argument(
            "--max-retries",
            type=int,
            default=LLM_MAX_RETRIES,
            metavar="N",
            help="retries on timeouts, HTTP 429 and 5xx",
        )
        parser.add_argument(
            "--backoff-base-ms",
            type=int,
            default=LLM_BACKOFF_BASE_MS,
            metavar="MS",
            help="base delay of the exponential backoff",
        )
        parser.add_argument(
            "--parallelism",
            type=int,
            default=LLM_PARALLELISM,
            metavar="N",
            help="max requests in flight",
        )
        parser.add_argument(
            "--cache-dir",
            type=str,
            default=LLM_CACHE_DIR,
            metavar="DIR",
            help="response cache directory",
        )
        parser.add_argument(
            "--fixture-dir",
            type=str,
            default=LLM_FIXTURE_DIR,
            metavar="DIR",
            help="replay fixture directory",
        )
        parser.add_argument(
            "--rate-limit",
            type=float,
            default=LLM_RATE_LIMIT,
            metavar="RATE_LIMIT",
            help="requests per second, 0 for no limit",
        )
        return True
    except Exception as err:
        error(f"{err}")
    return False
