"""Derivación de APIs invocables a partir de los tipos de relación del grafo.

Cada relación da dos APIs de proyección (sentido directo e inverso); a
ellas se suman las tres APIs lógicas (intersección, unión y negación).

Nombres por plantilla
---------------------
directo : ``get_<cola>_of_<cabeza>``   p. ej. ``get_university_of_person``
inverso : ``get_<cabeza>_with_<cola>`` p. ej. ``get_person_with_university``

Los tokens de tipo salen de los dos últimos segmentos de la ruta de la
relación (``/people/person/nationality`` → ``person``, ``nationality``).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from src.data.kg_store import Direction, KnowledgeGraph
from src.errors import LlmError, MissingApiError, OfflineModeError, ToolsetError
from src.synthesis.prompting import load_prompt
from src.tools.llm_client import exchange

logger = logging.getLogger(__name__)

NAME_PATTERN = re.compile(r"^[a-z][a-z0-9_]*$")
ENTITY_LIST = "entity_list"

INTERSECTION_API = "get_intersection_of"
UNION_API = "get_union_of"
NEGATION_API = "get_negation_of"
LOGICAL_NAMES = (INTERSECTION_API, UNION_API, NEGATION_API)

LLM_RETRIES = 2


@dataclass(frozen=True)
class ApiParameter:
    name: str
    type: str
    description: str
    required: bool = True

    def to_dict(self) -> dict:
        return {"name": self.name, "type": self.type, "description": self.description}


@dataclass(frozen=True)
class ApiReturn:
    type: str
    description: str

    def to_dict(self) -> dict:
        return {"type": self.type, "description": self.description}


@dataclass(frozen=True)
class ApiDescriptor:
    """API invocable y su procedencia (relación + sentido, o ``logical``).

    ``phrase`` y ``noun`` son fragmentos en inglés usados por las plantillas
    de preguntas y de objetivos (``"university of person"``, ``"university"``).
    """

    name: str
    description: str
    parameters: Tuple[ApiParameter, ...]
    returns: ApiReturn
    operation: str = "projection"
    relation: Optional[str] = None
    direction: Optional[Direction] = None
    mode: str = "template"
    flagged: bool = False
    phrase: str = ""
    noun: str = ""

    @property
    def is_logical(self) -> bool:
        return self.relation is None

    @property
    def provenance(self) -> Union[str, Dict[str, str]]:
        if self.is_logical:
            return "logical"
        return {"relation": self.relation, "direction": self.direction.value}

    def to_dict(self) -> dict:
        """Forma publicada en el prompt de sistema (orden de claves estable)."""
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [p.to_dict() for p in self.parameters],
            "returns": self.returns.to_dict(),
        }

    def to_record(self) -> dict:
        """Forma completa, reconstruible con ``from_record``."""
        d = self.to_dict()
        for p, pd in zip(self.parameters, d["parameters"]):
            pd["required"] = p.required
        d.update({
            "provenance": self.provenance,
            "operation": self.operation,
            "mode": self.mode,
            "flagged": self.flagged,
            "phrase": self.phrase,
            "noun": self.noun,
        })
        return d

    @classmethod
    def from_record(cls, d: Mapping) -> "ApiDescriptor":
        prov = d.get("provenance", "logical")
        relation = direction = None
        if prov != "logical":
            relation, direction = prov["relation"], Direction(prov["direction"])
        return cls(
            name=d["name"],
            description=d["description"],
            parameters=tuple(
                ApiParameter(p["name"], p["type"], p["description"], p.get("required", True))
                for p in d["parameters"]
            ),
            returns=ApiReturn(d["returns"]["type"], d["returns"]["description"]),
            operation=d.get("operation", "projection"),
            relation=relation,
            direction=direction,
            mode=d.get("mode", "template"),
            flagged=bool(d.get("flagged", False)),
            phrase=d.get("phrase", ""),
            noun=d.get("noun", ""),
        )


def is_valid_name(name: str) -> bool:
    return bool(NAME_PATTERN.match(name))


def sanitize(token: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", token.lower()).strip("_")


def type_tokens(relation: str, head_type: Optional[str] = None,
                tail_type: Optional[str] = None) -> Tuple[str, str]:
    """Tokens (cabeza, cola) de una relación.

    Raises
    ------
    ValueError
        Si la relación no deja tokens utilizables.
    """
    segments = [sanitize(s) for s in relation.split("/")]
    segments = [s for s in segments if s]
    if not segments:
        raise ValueError(f"Relación sin tokens de tipo: {relation!r}")
    if len(segments) == 1:
        head, tail = "entity", segments[0]
    else:
        head, tail = segments[-2], segments[-1]
    if head_type:
        head = sanitize(head_type) or head
    if tail_type:
        tail = sanitize(tail_type) or tail
    return head, tail


def _param_name(token: str) -> str:
    return token if is_valid_name(token) else "entity"


def _words(token: str) -> str:
    return token.replace("_", " ")


def derive_api_template(
    relation: str,
    direction: Direction = Direction.FORWARD,
    head_type: Optional[str] = None,
    tail_type: Optional[str] = None,
) -> ApiDescriptor:
    """Descriptor por plantilla; función pura de sus argumentos."""
    direction = Direction(direction)
    try:
        head, tail = type_tokens(relation, head_type, tail_type)
    except ValueError:
        return _fallback(relation, direction)

    if direction is Direction.FORWARD:
        name, src, dst = f"get_{tail}_of_{head}", head, tail
        phrase = f"{_words(tail)} of {_words(head)}"
    else:
        name, src, dst = f"get_{head}_with_{tail}", tail, head
        phrase = f"{_words(head)} with {_words(tail)}"
    return ApiDescriptor(
        name=name,
        description=f"Return the {phrase} for each given entity ({relation}).",
        parameters=(ApiParameter(_param_name(src), ENTITY_LIST,
                                 f"One or more {_words(src)} entities."),),
        returns=ApiReturn(ENTITY_LIST, f"The {_words(dst)} entities reached through {relation}."),
        relation=relation,
        direction=direction,
        phrase=phrase,
        noun=_words(dst),
    )


def _fallback(relation: str, direction: Direction) -> ApiDescriptor:
    """Nombre saneado de la ruta completa; se marca como ``flagged``."""
    base = sanitize(relation) or "relation"
    suffix = "" if direction is Direction.FORWARD else "_inverse"
    name = f"get_{base}{suffix}"
    logger.warning("Relación no interpretable %r: se usa el nombre %s", relation, name)
    return ApiDescriptor(
        name=name,
        description=f"Follow the relation {relation} ({direction.value}).",
        parameters=(ApiParameter("entity", ENTITY_LIST, "One or more entities."),),
        returns=ApiReturn(ENTITY_LIST, "The related entities."),
        relation=relation,
        direction=direction,
        flagged=True,
        phrase=f"{_words(base)} of",
        noun=_words(base),
    )


_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def _parse_llm_reply(reply: str) -> Tuple[str, str]:
    match = _JSON_OBJECT.search(reply)
    if not match:
        raise ValueError("la respuesta no contiene un objeto JSON")
    data = json.loads(match.group(0))
    name, description = str(data.get("name", "")).strip(), str(data.get("description", "")).strip()
    if not is_valid_name(name):
        raise ValueError(f"nombre no válido: {name!r}")
    if not description:
        raise ValueError("descripción vacía")
    return name, description


def _phrase_from_name(name: str) -> Tuple[str, str]:
    body = name[4:] if name.startswith("get_") else name
    for joint in ("_of_", "_with_"):
        if joint in body:
            noun = body.split(joint, 1)[0]
            return _words(body), _words(noun)
    return _words(body), _words(body)


def derive_api_llm(
    relation: str,
    direction: Direction,
    client,
    head_type: Optional[str] = None,
    tail_type: Optional[str] = None,
) -> ApiDescriptor:
    """Descriptor propuesto por el LLM, con caída a plantilla.

    Se hacen hasta ``1 + LLM_RETRIES`` peticiones; si todas fallan (o el
    cliente está fuera de línea) se devuelve la plantilla marcada.
    """
    direction = Direction(direction)
    base = derive_api_template(relation, direction, head_type, tail_type)
    try:
        head, tail = type_tokens(relation, head_type, tail_type)
    except ValueError:
        head, tail = "entity", "entity"
    prompt = load_prompt("api_generation").substitute(
        relation=relation, direction=direction.value, head=head, tail=tail)

    for attempt in range(1 + LLM_RETRIES):
        try:
            reply = client.chat(exchange(None, prompt))
        except OfflineModeError:
            break
        except LlmError as exc:
            logger.warning("LLM falló al derivar %s (%s): %s", relation, direction.value, exc)
            break
        try:
            name, description = _parse_llm_reply(reply)
        except ValueError as exc:
            logger.info("Respuesta LLM descartada para %s (intento %d): %s",
                        relation, attempt + 1, exc)
            continue
        phrase, noun = _phrase_from_name(name)
        return dataclasses.replace(base, name=name, description=description,
                                   mode="llm", phrase=phrase, noun=noun)

    return dataclasses.replace(base, flagged=True)


def logical_apis() -> List[ApiDescriptor]:
    """Las tres APIs lógicas, en orden fijo."""
    set_a = ApiParameter("set_a", ENTITY_LIST, "First entity set.")
    set_b = ApiParameter("set_b", ENTITY_LIST, "Second entity set.")
    return [
        ApiDescriptor(
            name=INTERSECTION_API,
            description="Return the entities that belong to every given set.",
            parameters=(set_a, set_b,
                        ApiParameter("set_c", ENTITY_LIST, "Optional third entity set.",
                                     required=False)),
            returns=ApiReturn(ENTITY_LIST, "The common entities."),
            operation="intersection",
            phrase="intersection of", noun="common entities",
        ),
        ApiDescriptor(
            name=UNION_API,
            description="Return the entities that belong to either given set.",
            parameters=(set_a, set_b),
            returns=ApiReturn(ENTITY_LIST, "All entities of both sets."),
            operation="union",
            phrase="union of", noun="entities",
        ),
        ApiDescriptor(
            name=NEGATION_API,
            description="Return the candidate entities that are not in the excluded set.",
            parameters=(
                ApiParameter("candidates", ENTITY_LIST, "Candidate entities."),
                ApiParameter("exclude", ENTITY_LIST, "Entities to remove."),
                ApiParameter("candidates_b", ENTITY_LIST,
                             "Optional second candidate set intersected with the first.",
                             required=False),
            ),
            returns=ApiReturn(ENTITY_LIST, "The remaining candidates."),
            operation="negation",
            phrase="candidates without", noun="remaining entities",
        ),
    ]


class ApiCatalog:
    """Catálogo de APIs con nombres únicos, indexado por nombre y por relación."""

    def __init__(self, descriptors: Iterable[ApiDescriptor]) -> None:
        self._items: List[ApiDescriptor] = []
        self._by_name: Dict[str, ApiDescriptor] = {}
        self._by_relation: Dict[Tuple[str, Direction], ApiDescriptor] = {}
        for d in descriptors:
            self.add(d)

    def add(self, d: ApiDescriptor) -> None:
        if d.name in self._by_name:
            raise ValueError(f"Nombre de API repetido en el catálogo: {d.name}")
        if not is_valid_name(d.name):
            raise ValueError(f"Nombre de API no válido: {d.name!r}")
        self._items.append(d)
        self._by_name[d.name] = d
        if not d.is_logical:
            self._by_relation[(d.relation, d.direction)] = d

    def __iter__(self) -> Iterator[ApiDescriptor]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def names(self) -> List[str]:
        return [d.name for d in self._items]

    def by_name(self, name: str) -> ApiDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise MissingApiError(f"API desconocida: {name}") from None

    def for_relation(self, relation: str, direction: Direction = Direction.FORWARD) -> ApiDescriptor:
        try:
            return self._by_relation[(relation, Direction(direction))]
        except KeyError:
            raise MissingApiError(
                f"Sin API para la relación {relation} ({Direction(direction).value})"
            ) from None

    def logical(self, operation: str) -> ApiDescriptor:
        for d in self._items:
            if d.is_logical and d.operation == operation:
                return d
        raise MissingApiError(f"Sin API lógica para {operation}")

    @property
    def flagged(self) -> List[ApiDescriptor]:
        return [d for d in self._items if d.flagged]

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "ApiCatalog":
        return cls(ApiDescriptor.from_record(r) for r in records)

    def to_records(self) -> List[dict]:
        return [d.to_record() for d in self._items]

    def dump(self, path: Union[str, Path]) -> str:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8") as f:
            for rec in self.to_records():
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return str(p)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ApiCatalog":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"No existe el archivo de APIs: {p}")
        with open(p, "r", encoding="utf-8") as f:
            return cls.from_records(json.loads(line) for line in f if line.strip())


def _unique(name: str, taken: set) -> str:
    if name not in taken:
        return name
    k = 2
    while f"{name}_{k}" in taken:
        k += 1
    return f"{name}_{k}"


def derive_catalog(
    g: KnowledgeGraph,
    mode: str = "template",
    client=None,
    types: Optional[Mapping[str, Tuple[Optional[str], Optional[str]]]] = None,
    workers: int = 1,
) -> ApiCatalog:
    """APIs lógicas + una API por relación y sentido, en orden de id.

    Las colisiones de nombre reciben sufijo ``_2``, ``_3``… por orden de
    llegada (primero el sentido directo).
    """
    if mode not in ("template", "llm"):
        raise ValueError(f"Modo de derivación no válido: {mode!r}")
    types = types or {}
    jobs = [(rel, d) for rel in g.relations for d in (Direction.FORWARD, Direction.INVERSE)]

    def derive(job: Tuple[str, Direction]) -> ApiDescriptor:
        rel, d = job
        head_type, tail_type = types.get(rel, (None, None))
        if mode == "llm" and client is not None:
            return derive_api_llm(rel, d, client, head_type, tail_type)
        return derive_api_template(rel, d, head_type, tail_type)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        derived = list(pool.map(derive, jobs))

    descriptors = logical_apis()
    taken = {d.name for d in descriptors}
    collisions = 0
    for d in derived:
        name = _unique(d.name, taken)
        if name != d.name:
            collisions += 1
            d = dataclasses.replace(d, name=name)
        taken.add(name)
        descriptors.append(d)

    catalog = ApiCatalog(descriptors)
    logger.info("Catálogo de APIs: %d descriptores (%d colisiones, %d marcados)",
                len(catalog), collisions, len(catalog.flagged))
    return catalog


@dataclass(frozen=True)
class Toolset:
    """Lista ordenada de APIs presentada al asistente en un registro."""

    tools: Tuple[ApiDescriptor, ...]

    def __post_init__(self) -> None:
        names = self.names()
        if len(set(names)) != len(names):
            raise ToolsetError(f"Nombres repetidos en el toolset: {names}")

    def names(self) -> List[str]:
        return [t.name for t in self.tools]

    def __contains__(self, name: object) -> bool:
        return name in self.names()

    def __len__(self) -> int:
        return len(self.tools)

    def to_dicts(self) -> List[dict]:
        return [t.to_dict() for t in self.tools]

    def to_records(self) -> List[dict]:
        return [t.to_record() for t in self.tools]


def build_toolset(path, global_apis: ApiCatalog, k_distractors: int,
                  rng: np.random.Generator) -> Toolset:
    """APIs usadas por ``path`` + ``k_distractors`` distractores, barajadas.

    ``path`` es cualquier objeto con ``api_names()`` (cadena o camino).
    """
    if k_distractors < 0:
        raise ValueError(f"k_distractors debe ser >= 0 (recibido {k_distractors})")
    used_names = list(dict.fromkeys(path.api_names()))
    used = [global_apis.by_name(n) for n in used_names]
    pool = [d for d in global_apis if d.name not in set(used_names)]
    if k_distractors > len(pool):
        raise ToolsetError(
            f"Se pidieron {k_distractors} distractores pero el catálogo solo tiene {len(pool)}"
        )
    picks = rng.choice(len(pool), size=k_distractors, replace=False) if k_distractors else []
    tools = used + [pool[int(i)] for i in picks]
    order = rng.permutation(len(tools))
    return Toolset(tuple(tools[int(i)] for i in order))
