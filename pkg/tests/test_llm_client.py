import logging

import pytest
import requests

from src.errors import LlmError, OfflineModeError
from src.tools.llm_client import ChatExchange, ChatMessage, LlmClient, LlmSettings, exchange

SETTINGS = LlmSettings(base_url="http://llm.local/v1", model="tiny", backoff=0.5)


class _Response:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self._body = body

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


def _ok(text):
    return _Response(200, {"choices": [{"message": {"role": "assistant", "content": text}}]})


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.outcomes.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def _client(outcomes, settings=SETTINGS):
    sleeps = []
    session = FakeSession(outcomes)
    client = LlmClient(settings, session=session, sleep=sleeps.append, clock=lambda: 0.0)
    return client, session, sleeps


def test_retries_until_success(caplog):
    """Dos fallos transitorios y un éxito: tres intentos registrados."""
    client, session, sleeps = _client([
        requests.ConnectionError("reset"),
        _Response(503),
        _ok("hola"),
    ])
    with caplog.at_level(logging.DEBUG, logger="src.tools.llm_client"):
        assert client.chat(exchange(None, "ping")) == "hola"
    assert client.calls == 3
    assert len(session.posts) == 3
    assert sleeps == [0.5, 1.0]
    attempts = [r for r in caplog.records if r.getMessage().startswith("Llamada LLM intento")]
    assert len(attempts) == 3


def test_retries_exhausted():
    """429 repetido agota los intentos."""
    client, session, _ = _client([_Response(429)] * 3)
    with pytest.raises(LlmError):
        client.chat(exchange(None, "ping"))
    assert len(session.posts) == 3


def test_client_error_is_not_retried():
    """Un 400 falla sin reintentar."""
    client, session, sleeps = _client([_Response(400), _ok("x")])
    with pytest.raises(LlmError):
        client.chat(exchange(None, "ping"))
    assert len(session.posts) == 1 and sleeps == []


def test_malformed_body():
    """Cuerpo sin choices → LlmError."""
    client, _, _ = _client([_Response(200, {"id": "x"})])
    with pytest.raises(LlmError):
        client.chat(exchange(None, "ping"))
    client, _, _ = _client([_Response(200, ValueError("no es JSON"))])
    with pytest.raises(LlmError):
        client.chat(exchange(None, "ping"))


def test_offline_mode_makes_no_requests():
    """Sin endpoint configurado no hay llamadas de red."""
    client, session, _ = _client([], settings=LlmSettings())
    with pytest.raises(OfflineModeError):
        client.chat(exchange(None, "ping"))
    assert session.posts == [] and client.calls == 0


def test_payload_and_auth_header(monkeypatch):
    """Cuerpo OpenAI-compatible y cabecera Bearer cuando hay clave."""
    monkeypatch.setenv("LLM_API_KEY", "secreto")
    client, session, _ = _client([_ok("ok")])
    client.chat(exchange("sys", "hola", temperature=0.2, max_tokens=32))
    post = session.posts[0]
    assert post["url"] == "http://llm.local/v1/chat/completions"
    assert post["headers"]["Authorization"] == "Bearer secreto"
    assert post["json"] == {
        "model": "tiny",
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "hola"}],
        "temperature": 0.2,
        "max_tokens": 32,
    }


def test_exchange_validation():
    """Sin mensaje de usuario, rol desconocido o temperatura negativa."""
    with pytest.raises(ValueError):
        ChatExchange((ChatMessage("system", "x"),)).validate()
    with pytest.raises(ValueError):
        ChatExchange((ChatMessage("user", "x"), ChatMessage("robot", "y"))).validate()
    with pytest.raises(ValueError):
        exchange(None, "x", temperature=-1).validate()


def test_settings_from_env():
    """LLM_BASE_URL y LLM_MODEL activan el cliente; los overrides ganan."""
    s = LlmSettings.from_env({"LLM_BASE_URL": "http://a", "LLM_MODEL": "m"}, timeout=5)
    assert s.configured and s.timeout == 5
    assert not LlmSettings.from_env({}).configured
