"""Cliente mínimo para un endpoint HTTP de tipo *chat completions*.

El cliente es opcional: si no hay endpoint configurado, ``chat`` lanza
``OfflineModeError`` sin tocar la red y los llamadores usan sus plantillas.

Configuración por entorno
-------------------------
LLM_BASE_URL   dirección base (p. ej. ``http://localhost:8000/v1``)
LLM_MODEL      nombre del modelo
LLM_API_KEY    clave (opcional; se envía como ``Authorization: Bearer``)
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Mapping, Optional, Sequence, Tuple, Union

import requests

from src.errors import LlmError, OfflineModeError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class LlmSettings:
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "LLM_API_KEY"
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 1.0
    max_concurrency: int = 4
    requests_per_minute: int = 60

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None, **overrides) -> "LlmSettings":
        env = os.environ if environ is None else environ
        values = {
            "base_url": env.get("LLM_BASE_URL") or None,
            "model": env.get("LLM_MODEL") or None,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def configured(self) -> bool:
        return bool(self.base_url and self.model)

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env) or None


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatExchange:
    """Mensajes + parámetros de generación de una llamada."""

    messages: Tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 256

    def validate(self) -> None:
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("La conversación necesita al menos un mensaje de usuario")
        bad = [m.role for m in self.messages if m.role not in ROLES]
        if bad:
            raise ValueError(f"Roles no válidos: {bad}")
        if self.temperature < 0:
            raise ValueError(f"temperature debe ser >= 0 (recibido {self.temperature})")

    def payload(self, model: str) -> dict:
        return {
            "model": model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def exchange(system: Optional[str], user: str, **params) -> ChatExchange:
    """Atajo: conversación de un turno con prompt de sistema opcional."""
    msgs = ([ChatMessage("system", system)] if system else []) + [ChatMessage("user", user)]
    return ChatExchange(tuple(msgs), **params)


class _RateLimiter:
    """Ventana deslizante de 60 s compartida por todos los hilos."""

    def __init__(self, per_minute: int, clock: Callable[[], float],
                 sleep: Callable[[float], None]) -> None:
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._stamps: Deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self.sleep(max(wait, 0.0))


class LlmClient:
    """Cliente sincronizado internamente; se puede usar desde varios hilos."""

    def __init__(
        self,
        settings: LlmSettings,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.settings = settings
        self.session = session if session is not None else requests.Session()
        self.sleep = sleep
        self.calls = 0
        self._slots = threading.BoundedSemaphore(max(1, settings.max_concurrency))
        self._limiter = _RateLimiter(max(1, settings.requests_per_minute), clock, sleep)
        self._count_lock = threading.Lock()

    @property
    def url(self) -> str:
        return self.settings.base_url.rstrip("/") + "/chat/completions"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = self.settings.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, ex: ChatExchange) -> str:
        """Texto del asistente de la primera respuesta.

        Raises
        ------
        OfflineModeError
            Endpoint o modelo sin configurar.
        LlmError
            Reintentos agotados o cuerpo de respuesta mal formado.
        """
        if not self.settings.configured:
            raise OfflineModeError("LLM sin configurar (LLM_BASE_URL / LLM_MODEL)")
        ex.validate()
        payload = ex.payload(self.settings.model)
        attempts = max(1, self.settings.max_attempts)
        last_error = ""

        with self._slots:
            for attempt in range(1, attempts + 1):
                self._limiter.acquire()
                with self._count_lock:
                    self.calls += 1
                logger.debug("Llamada LLM intento %d/%d a %s", attempt, attempts, self.url)
                try:
                    response = self.session.post(
                        self.url, json=payload, headers=self._headers(),
                        timeout=self.settings.timeout,
                    )
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = f"transporte: {exc}"
                else:
                    status = response.status_code
                    if status == 429 or status >= 500:
                        last_error = f"HTTP {status}"
                    elif status >= 400:
                        raise LlmError(f"El endpoint rechazó la petición (HTTP {status})")
                    else:
                        return _first_choice(response)

                if attempt < attempts:
                    delay = self.settings.backoff * 2 ** (attempt - 1)
                    logger.warning("Fallo LLM (%s); reintento en %.1f s", last_error, delay)
                    self.sleep(delay)

        raise LlmError(f"Reintentos agotados tras {attempts} intentos ({last_error})")


def _first_choice(response: requests.Response) -> str:
    try:
        body = response.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise LlmError(f"Respuesta LLM mal formada: {exc!r}") from None
    if not isinstance(content, str):
        raise LlmError("Respuesta LLM sin texto en choices[0].message.content")
    return content


@dataclass
class RecordedChatClient:
    """Doble de prueba: devuelve respuestas grabadas en orden.

    Un elemento ``Exception`` de ``responses`` se lanza en lugar de
    devolverse, para simular fallos.
    """

    responses: Sequence[Union[str, Exception]]
    calls: int = 0
    exchanges: List[ChatExchange] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def chat(self, ex: ChatExchange) -> str:
        ex.validate()
        with self._lock:
            if self.calls >= len(self.responses):
                raise LlmError("RecordedChatClient sin respuestas grabadas")
            item = self.responses[self.calls]
            self.calls += 1
            self.exchanges.append(ex)
        if isinstance(item, Exception):
            raise item
        return item
