"""Traducción de consultas FOL a preguntas en lenguaje natural.

Dos modos:

- ``llm``: un único prompt con ejemplos por patrón; las relaciones se
  sustituyen por nombres de API y las anclas por etiquetas legibles.
- ``template``: plantilla fija por patrón sobre las frases de cada API;
  total y determinista, se usa sin conexión y como respaldo del LLM.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from src.errors import LlmError, OfflineModeError, UnknownPatternError
from src.models.fol_core import FolQuery
from src.models.fol_syntax import format_fol
from src.synthesis.prompting import load_prompt
from src.tools.api_gen import ApiCatalog
from src.tools.llm_client import exchange

logger = logging.getLogger(__name__)

MAX_QUESTION_CHARS = 400
LLM_RETRIES = 2

# {pK}: frase de la API del slot K-1 ("university of person"); {nK}: su sustantivo.
TEMPLATES: Dict[str, str] = {
    "1p": "What is the {p1} {A}?",
    "2p": "What is the {n2} of the {p1} {A}?",
    "3p": "What is the {n3} of the {n2} of the {p1} {A}?",
    "2i": "Which entities are both the {p1} {A} and the {p2} {B}?",
    "3i": "Which entities are the {p1} {A}, the {p2} {B} and the {p3} {C}?",
    "pi": "Which entities are both the {n2} of the {p1} {A} and the {p3} {B}?",
    "ip": "What is the {n3} of the entities that are both the {p1} {A} and the {p2} {B}?",
    "2u": "Which entities are the {p1} {A} or the {p2} {B}?",
    "up": "What is the {n3} of the entities that are the {p1} {A} or the {p2} {B}?",
    "2in": "Which entities are the {p1} {A} but not the {p2} {B}?",
    "3in": "Which entities are both the {p1} {A} and the {p2} {B} but not the {p3} {C}?",
    "inp": "What is the {n3} of the entities that are the {p1} {A} but not the {p2} {B}?",
    "pin": "Which entities are the {n2} of the {p1} {A} but not the {p3} {B}?",
    "pni": "Which entities are the {p3} {B} but not the {n2} of the {p1} {A}?",
}


@dataclass(frozen=True)
class ApiSlot:
    name: str
    description: str
    phrase: str
    noun: str


@dataclass(frozen=True)
class TranslationRequest:
    """FOL con nombres de API y etiquetas, más la API de cada slot de relación."""

    fol: str
    pattern: str
    apis: Tuple[ApiSlot, ...]
    anchors: Tuple[str, ...]


@dataclass(frozen=True)
class NlQuery:
    text: str
    mode: str
    flagged: bool = False


def build_request(q: FolQuery, catalog: ApiCatalog,
                  label: Optional[Callable[[str], str]] = None) -> TranslationRequest:
    label = label or (lambda raw: raw)
    slots = []
    for relation, direction in zip(q.relations, q.directions()):
        api = catalog.for_relation(relation, direction)
        slots.append(ApiSlot(api.name, api.description, api.phrase, api.noun))
    # Cada átomo lleva la API de su slot: la misma que se describe en ``apis``
    fol = format_fol(
        q,
        entity_label=label,
        api_label=lambda rel, direction: catalog.for_relation(rel, direction).name,
    )
    return TranslationRequest(fol=fol, pattern=q.pattern, apis=tuple(slots),
                              anchors=tuple(label(a) for a in q.anchors))


def is_valid_question(text: str, template: bool = False) -> bool:
    text = text.strip()
    if not text or len(text) > MAX_QUESTION_CHARS:
        return False
    return text.endswith("?") if template else True


def translate_template(req: TranslationRequest) -> NlQuery:
    try:
        template = TEMPLATES[req.pattern]
    except KeyError:
        raise UnknownPatternError(f"Sin plantilla para el patrón {req.pattern!r}") from None
    fields = {"A": "", "B": "", "C": ""}
    fields.update(zip("ABC", req.anchors))
    for i, slot in enumerate(req.apis, start=1):
        fields[f"p{i}"] = slot.phrase
        fields[f"n{i}"] = slot.noun
    text = " ".join(template.format(**fields).split())
    return NlQuery(text=text, mode="template")


def _clean_reply(reply: str) -> str:
    lines = [ln.strip() for ln in reply.strip().splitlines() if ln.strip()]
    return lines[0].strip('"').strip() if lines else ""


def translate_llm(req: TranslationRequest, client) -> NlQuery:
    """Pregunta generada por el LLM; cae a plantilla (marcada) si falla."""
    apis = "\n".join(f"- {s.name}: {s.description}" for s in dict.fromkeys(req.apis))
    prompt = load_prompt("fol_translation").substitute(apis=apis, pattern=req.pattern, fol=req.fol)

    for attempt in range(1 + LLM_RETRIES):
        try:
            reply = client.chat(exchange(None, prompt))
        except OfflineModeError:
            break
        except LlmError as exc:
            logger.warning("LLM falló al traducir %s: %s", req.pattern, exc)
            break
        text = _clean_reply(reply)
        if is_valid_question(text):
            return NlQuery(text=text, mode="llm")
        logger.info("Traducción descartada (intento %d, %d caracteres)", attempt + 1, len(text))

    fallback = translate_template(req)
    return NlQuery(text=fallback.text, mode="template", flagged=True)


def translate(req: TranslationRequest, mode: str = "template", client=None) -> NlQuery:
    if mode == "llm" and client is not None:
        return translate_llm(req, client)
    return translate_template(req)
