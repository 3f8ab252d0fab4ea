import fnmatch
import json
import threading
from abc import ABC, abstractmethod
from enum import Enum
from time import monotonic, sleep
from typing import Any, Dict, List, Optional

import numpy as np
import requests
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from persona_bench.config import settings
from persona_bench.utils.errors import BackendError, ConfigError
from persona_bench.utils.logger import logger
from persona_bench.utils.main import load_key_values, resolve_path
from persona_bench.workers.persona import read_persona_tag, strip_persona_tag


class Role(Enum):
    system = "system"
    donor = "donor"
    agent = "agent"


# wire roles of the chat-completion API
WIRE_ROLES = {Role.system: "system", Role.donor: "user", Role.agent: "assistant"}

DEFAULT_FILLER = [
    "the", "a", "an", "of", "and", "to", "in", "on", "at", "by",
    "with", "from", "as", "or", "into", "over", "under", "about",
    "between", "through",
]


class ChatMessage(BaseModel):
    role: Role
    content: str
    turn_index: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _content_not_empty(self) -> "ChatMessage":
        if self.role != Role.system and not self.content.strip():
            raise ValueError(f"{self.role.value} message must not be empty")
        return self


class BackendKind(Enum):
    http = "http"
    mock = "mock"


class BackendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    kind: BackendKind
    model: str
    model_id: str = ""
    endpoint: str = ""
    temperature: float = Field(1.0, ge=0)
    max_tokens: int = Field(150, ge=1)
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    backoff_base: float = Field(1.0, ge=0)
    min_interval: float = Field(0.0, ge=0)
    fixture_path: str = ""
    seed: int = 0
    send_seed: bool = False

    @model_validator(mode="after")
    def _kind_fields(self) -> "BackendConfig":
        if not self.model_id:
            self.model_id = self.model
        if self.kind == BackendKind.http and not self.endpoint:
            raise ValueError("http backend needs an endpoint")
        if self.kind == BackendKind.mock and not self.fixture_path:
            raise ValueError("mock backend needs a fixture_path")
        return self


class PersonaFixture(BaseModel):
    lines: List[str]
    rates: Dict[str, float] = {}
    length: int = Field(50, ge=1)

    @field_validator("lines")
    @classmethod
    def _lines_not_empty(cls, value: List[str]) -> List[str]:
        if not value or not all(line.strip() for line in value):
            raise ValueError("fixture needs at least one non-empty canned line")
        return value

    @field_validator("rates")
    @classmethod
    def _rates_valid(cls, value: Dict[str, float]) -> Dict[str, float]:
        if any(rate < 0 or rate > 1 for rate in value.values()):
            raise ValueError("planted rates must lie in [0, 1]")
        if sum(value.values()) > 1 + 1e-12:
            raise ValueError("planted rates must sum to at most 1")
        return value


class MockFixture(BaseModel):
    """Canned responses per persona id pattern (glob, first match wins)."""

    personas: Dict[str, PersonaFixture]
    words: Dict[str, List[str]] = {}
    filler: List[str] = DEFAULT_FILLER

    @model_validator(mode="after")
    def _planted_words_exist(self) -> "MockFixture":
        for pattern, entry in self.personas.items():
            for category, rate in entry.rates.items():
                if rate > 0 and not self.words.get(category):
                    raise ValueError(
                        f"{pattern} plants {category} but the fixture lists no words for it"
                    )
        if not self.filler:
            raise ValueError("filler word list must not be empty")
        return self

    def entry_for(self, persona_id: str) -> PersonaFixture:
        if persona_id in self.personas:
            return self.personas[persona_id]
        for pattern, entry in self.personas.items():
            if fnmatch.fnmatchcase(persona_id, pattern):
                return entry
        raise ConfigError(f"persona {persona_id} not covered by the mock fixture")


def load_fixture(path: str) -> MockFixture:
    try:
        with open(path, encoding="utf-8") as f:
            return MockFixture.model_validate(json.load(f))
    except OSError as e:
        raise ConfigError(f"cannot read mock fixture {path}: {e}") from e
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"invalid mock fixture {path}: {e}") from e


def load_backend_config(path: str) -> BackendConfig:
    values: Dict[str, Any] = dict(load_key_values(path))
    if "fixture_path" in values:
        values["fixture_path"] = resolve_path(path, values["fixture_path"])
    try:
        return BackendConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid backend config: {e}") from e


def mock_respond(history: List[ChatMessage], fixture: MockFixture, seed: int) -> str:
    """
    Deterministic response for (history, fixture, seed).

    The persona id comes from the tag in the system prompt and the turn from
    the latest donor message, so a context reset per turn still varies the
    response.
    """
    persona_id = None
    for message in history:
        if message.role == Role.system:
            persona_id = read_persona_tag(message.content)
            if persona_id:
                break
    if persona_id is None:
        raise ConfigError("mock backend found no persona tag in the system prompt")
    entry = fixture.entry_for(persona_id)
    turn = max(
        (message.turn_index for message in history if message.role == Role.donor),
        default=0,
    )
    rng = np.random.default_rng([seed & 0xFFFFFFFF, turn])
    line = entry.lines[int(rng.integers(len(entry.lines)))]
    planted = sorted((name, rate) for name, rate in entry.rates.items() if rate > 0)
    if not planted:
        return line
    thresholds = np.cumsum([rate for _, rate in planted])
    draws = rng.random(entry.length)
    slots = np.searchsorted(thresholds, draws, side="right")
    tokens = []
    for slot in slots:
        pool = fixture.words[planted[slot][0]] if slot < len(planted) else fixture.filler
        tokens.append(pool[int(rng.integers(len(pool)))])
    return " ".join(tokens) + "."


class ChatBackend(ABC):
    def __init__(self, config: BackendConfig):
        self.config = config

    @property
    def model_id(self) -> str:
        return self.config.model_id

    @abstractmethod
    def respond(self, history: List[ChatMessage], seed: int) -> str:
        pass


class MockBackend(ChatBackend):
    """Stateless between calls, so sessions may share one instance."""

    def __init__(self, config: BackendConfig, fixture: Optional[MockFixture] = None):
        super().__init__(config)
        self.fixture = fixture or load_fixture(config.fixture_path)
        logger.debug(f"mock backend {config.model_id} loaded {config.fixture_path}")

    def respond(self, history: List[ChatMessage], seed: int) -> str:
        # the fixture seed shifts every session seed of this backend
        return mock_respond(history, self.fixture, (seed + self.config.seed) & 0xFFFFFFFF)


class HttpChatBackend(ChatBackend):
    def __init__(self, config: BackendConfig, api_key: str = ""):  # nosec
        super().__init__(config)
        self.api_key = api_key or settings.chat_api_key
        if not self.api_key:
            logger.warning(f"no API key set for backend {config.model_id}")
        self._lock = threading.Lock()
        self._last_request = 0.0
        logger.debug(f"http backend {config.model_id} -> {config.endpoint}")

    def _wait_for_slot(self) -> None:
        if self.config.min_interval <= 0:
            return
        with self._lock:
            delay = self._last_request + self.config.min_interval - monotonic()
            if delay > 0:
                sleep(delay)
            self._last_request = monotonic()

    def _payload(self, history: List[ChatMessage]) -> Dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": [
                {
                    "role": WIRE_ROLES[message.role],
                    "content": strip_persona_tag(message.content)
                    if message.role == Role.system
                    else message.content,
                }
                for message in history
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def respond(self, history: List[ChatMessage], seed: int) -> str:
        payload = self._payload(history)
        if self.config.send_seed:
            payload["seed"] = seed
        headers = {"Authorization": f"Bearer {self.api_key}"}
        retry_interval = self.config.backoff_base
        attempt = 0
        while True:
            self._wait_for_slot()
            try:
                response = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
                if response.status_code < 500:
                    break
                reason = f"status code {response.status_code}"
            except requests.RequestException as e:
                reason = f"{type(e).__name__}: {e}"
            if attempt >= self.config.max_retries:
                raise BackendError(
                    f"{self.config.model_id} failed after {attempt + 1} attempt(s): {reason}"
                )
            attempt += 1
            logger.warning(
                f"{self.config.model_id} request failed ({reason}), "
                f"retry {attempt}/{self.config.max_retries} in {retry_interval} seconds"
            )
            sleep(retry_interval)
            retry_interval *= 2
        if response.status_code >= 400:
            raise BackendError(
                f"{self.config.model_id} rejected the request, "
                f"status code {response.status_code}: {response.text[:200]}"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise BackendError(f"{self.config.model_id} returned an unreadable body") from e
        if not content or not content.strip():
            raise BackendError(f"{self.config.model_id} returned an empty response")
        return content.strip()


def make_backend(config: BackendConfig) -> ChatBackend:
    if config.kind == BackendKind.mock:
        return MockBackend(config)
    return HttpChatBackend(config)
