"""Lectura e indexado de grafos de conocimiento (tripletas TSV).

Responsabilidades
-----------------
- Leer archivos ``head<TAB>relation<TAB>tail`` (convención FB15k) y
  deduplicar tripletas.
- Asignar identificadores densos en orden de primera aparición.
- Construir los índices directo ``(h, r) -> colas`` e inverso
  ``(t, r) -> cabezas`` y los resúmenes de relaciones entrantes/salientes.

Notas
-----
- El grafo es inmutable tras la carga: los arreglos de los índices se
  marcan como solo lectura y pueden compartirse entre hilos.
- Los conjuntos de entidades son ``np.ndarray`` int64 ordenados y sin
  duplicados.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import EmptyGraphError, InputFileError, MalformedLineError, UnknownIdError

logger = logging.getLogger(__name__)

EMPTY = np.empty(0, dtype=np.int64)
EMPTY.flags.writeable = False

TRIPLE_FORMATS = ("tsv",)


class Direction(str, Enum):
    """Sentido de una proyección: directo (cabeza→cola) o inverso (r⁻¹)."""

    FORWARD = "forward"
    INVERSE = "inverse"

    def flip(self) -> "Direction":
        return Direction.INVERSE if self is Direction.FORWARD else Direction.FORWARD


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _group_index(keys_a: np.ndarray, keys_b: np.ndarray,
                 values: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
    """Agrupa ``values`` por ``(a, b)``; cada grupo queda ordenado y sin copias."""
    if keys_a.size == 0:
        return {}
    order = np.lexsort((values, keys_b, keys_a))
    a, b, v = keys_a[order], keys_b[order], _frozen(values[order].copy())
    cuts = np.flatnonzero((a[1:] != a[:-1]) | (b[1:] != b[:-1])) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [a.size]))
    return {(int(a[s]), int(b[s])): v[s:e] for s, e in zip(starts, ends)}


def _relation_summary(index: Mapping[Tuple[int, int], np.ndarray]) -> Dict[int, np.ndarray]:
    """Entidad → relaciones ordenadas presentes en las claves del índice."""
    grouped: Dict[int, list] = {}
    for entity, relation in index:  # claves ya vienen ordenadas por (entidad, relación)
        grouped.setdefault(entity, []).append(relation)
    return {e: _frozen(np.asarray(rs, dtype=np.int64)) for e, rs in grouped.items()}


class KnowledgeGraph:
    """Grafo de conocimiento inmutable con índices directo e inverso.

    Parameters
    ----------
    entities : Sequence[str]
        Cadena de cada entidad; la posición es su ``EntityId``.
    relations : Sequence[str]
        Cadena de cada relación; la posición es su ``RelationId``.
    heads, relation_ids, tails : np.ndarray
        Columnas de las tripletas (ya deduplicadas).
    names : Mapping[str, str] | None
        Nombres legibles opcionales (p. ej. ``mid -> nombre``).
    source_digest : str
        SHA-256 del archivo de origen (para el manifiesto).
    """

    def __init__(
        self,
        entities: Sequence[str],
        relations: Sequence[str],
        heads: np.ndarray,
        relation_ids: np.ndarray,
        tails: np.ndarray,
        names: Optional[Mapping[str, str]] = None,
        source_digest: str = "",
    ) -> None:
        self._entities: Tuple[str, ...] = tuple(entities)
        self._relations: Tuple[str, ...] = tuple(relations)
        self._entity_ids = {e: i for i, e in enumerate(self._entities)}
        self._relation_ids = {r: i for i, r in enumerate(self._relations)}
        self._heads = _frozen(np.asarray(heads, dtype=np.int64).copy())
        self._rels = _frozen(np.asarray(relation_ids, dtype=np.int64).copy())
        self._tails = _frozen(np.asarray(tails, dtype=np.int64).copy())
        self._names: Dict[str, str] = dict(names or {})
        self.source_digest = source_digest

        self._forward = _group_index(self._heads, self._rels, self._tails)
        self._inverse = _group_index(self._tails, self._rels, self._heads)
        self._incoming = _relation_summary(self._inverse)
        self._outgoing = _relation_summary(self._forward)

    # ------------------------------------------------------------------ #
    @classmethod
    def from_triples(
        cls,
        triples: Iterable[Tuple[str, str, str]],
        names: Optional[Mapping[str, str]] = None,
        source_digest: str = "",
    ) -> "KnowledgeGraph":
        """Construye el grafo desde tripletas de cadenas (deduplica e indexa)."""
        df = pd.DataFrame(list(triples), columns=["head", "relation", "tail"])
        if df.empty:
            raise EmptyGraphError("El grafo no tiene tripletas")
        df = df.drop_duplicates(ignore_index=True)

        # Cabeza y cola intercaladas: ids en orden de primera aparición por línea
        interleaved = np.column_stack([df["head"].to_numpy(), df["tail"].to_numpy()]).ravel()
        entity_codes, entities = pd.factorize(interleaved)
        relation_codes, relations = pd.factorize(df["relation"])
        return cls(
            entities=[str(e) for e in entities],
            relations=[str(r) for r in relations],
            heads=entity_codes[0::2],
            relation_ids=relation_codes,
            tails=entity_codes[1::2],
            names=names,
            source_digest=source_digest,
        )

    def with_names(self, names: Mapping[str, str]) -> "KnowledgeGraph":
        """Devuelve una copia del grafo con tabla de nombres legibles."""
        return KnowledgeGraph(
            self._entities, self._relations, self._heads, self._rels, self._tails,
            names=names, source_digest=self.source_digest,
        )

    # ------------------------------------------------------------------ #
    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    @property
    def num_triples(self) -> int:
        return int(self._heads.size)

    @property
    def heads(self) -> np.ndarray:
        return self._heads

    @property
    def relation_column(self) -> np.ndarray:
        return self._rels

    @property
    def tails(self) -> np.ndarray:
        return self._tails

    @property
    def entities(self) -> Tuple[str, ...]:
        return self._entities

    @property
    def relations(self) -> Tuple[str, ...]:
        return self._relations

    def triples(self) -> Iterator[Triple]:
        for h, r, t in zip(self._heads.tolist(), self._rels.tolist(), self._tails.tolist()):
            yield Triple(h, r, t)

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        tails = self._forward.get((head, relation), EMPTY)
        i = int(np.searchsorted(tails, tail))
        return i < tails.size and int(tails[i]) == tail

    # ---------------------------- Identificadores ------------------------- #

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise UnknownIdError(f"Entidad desconocida: {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise UnknownIdError(f"Relación desconocida: {name!r}") from None

    def entity_name(self, entity: int) -> str:
        self._check_entity(entity)
        return self._entities[entity]

    def relation_name(self, relation: int) -> str:
        self._check_relation(relation)
        return self._relations[relation]

    def label(self, entity: int) -> str:
        """Nombre legible de la entidad; cae al identificador crudo."""
        raw = self.entity_name(entity)
        return self._names.get(raw, raw)

    def display_name(self, raw: str) -> str:
        return self._names.get(raw, raw)

    def _check_entity(self, entity: int) -> None:
        if not 0 <= int(entity) < len(self._entities):
            raise UnknownIdError(f"EntityId fuera de rango: {entity}")

    def _check_relation(self, relation: int) -> None:
        if not 0 <= int(relation) < len(self._relations):
            raise UnknownIdError(f"RelationId fuera de rango: {relation}")

    # ----------------------------- Vecindarios ---------------------------- #

    def out_neighbors(self, entity: int, relation: int) -> np.ndarray:
        """Colas ``{t : (e, r, t) ∈ E}`` ordenadas (posiblemente vacío)."""
        self._check_entity(entity)
        self._check_relation(relation)
        return self._forward.get((int(entity), int(relation)), EMPTY)

    def in_neighbors(self, entity: int, relation: int) -> np.ndarray:
        """Cabezas ``{h : (h, r, e) ∈ E}``; equivale a ``out_neighbors`` sobre r⁻¹."""
        self._check_entity(entity)
        self._check_relation(relation)
        return self._inverse.get((int(entity), int(relation)), EMPTY)

    def neighbors(self, entity: int, relation: int, direction: Direction) -> np.ndarray:
        if direction is Direction.FORWARD:
            return self.out_neighbors(entity, relation)
        return self.in_neighbors(entity, relation)

    def incoming_relations(self, entity: int) -> np.ndarray:
        """Relaciones ``r`` con algún ``(·, r, e)``."""
        self._check_entity(entity)
        return self._incoming.get(int(entity), EMPTY)

    def outgoing_relations(self, entity: int) -> np.ndarray:
        """Relaciones ``r`` con algún ``(e, r, ·)``."""
        self._check_entity(entity)
        return self._outgoing.get(int(entity), EMPTY)

    def forward_items(self) -> Iterator[Tuple[Tuple[int, int], np.ndarray]]:
        return iter(self._forward.items())

    def inverse_items(self) -> Iterator[Tuple[Tuple[int, int], np.ndarray]]:
        return iter(self._inverse.items())


# --------------------------------------------------------------------------- #

def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_triples(
    path: Union[str, Path],
    fmt: str = "tsv",
    lenient: bool = False,
    names: Optional[Mapping[str, str]] = None,
) -> KnowledgeGraph:
    """Carga un grafo desde un archivo de tripletas.

    Parameters
    ----------
    path : str | Path
        Archivo UTF-8 con líneas ``head<TAB>relation<TAB>tail``.
    fmt : str, default="tsv"
        Formato del archivo; por ahora solo ``"tsv"``.
    lenient : bool, default=False
        Si es ``True`` las líneas mal formadas se omiten y se cuentan en
        lugar de abortar.
    names : Mapping[str, str] | None
        Tabla opcional de nombres legibles.

    Returns
    -------
    KnowledgeGraph
        Grafo indexado.

    Raises
    ------
    InputFileError
        Si el archivo no existe.
    MalformedLineError
        Línea inválida o no decodificable como UTF-8 (con número de línea)
        en modo estricto.
    EmptyGraphError
        Si no queda ninguna tripleta.
    """
    if fmt not in TRIPLE_FORMATS:
        raise ValueError(f"Formato de tripletas no soportado: {fmt!r}")
    p = Path(path)
    if not p.exists():
        raise InputFileError(f"No existe el archivo de tripletas: {p}")

    rows = []
    skipped = 0
    # Binario: un byte inválido invalida su línea, no el archivo
    with open(p, "rb") as f:
        for line_number, data in enumerate(f, start=1):
            try:
                line = data.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError:
                text = data.decode("utf-8", errors="replace").rstrip("\r\n")
                if not lenient:
                    raise MalformedLineError(p, line_number, text, "UTF-8 inválido") from None
                skipped += 1
                logger.warning("Línea %d omitida (UTF-8 inválido): %r", line_number, text)
                continue
            if not line.strip():
                continue
            parts = [x.strip() for x in line.split("\t")]
            if len(parts) != 3 or not all(parts):
                if not lenient:
                    raise MalformedLineError(p, line_number, line)
                skipped += 1
                logger.warning("Línea %d omitida (mal formada): %r", line_number, line)
                continue
            rows.append(tuple(parts))

    if not rows:
        raise EmptyGraphError(f"El archivo de tripletas está vacío: {p}")

    g = KnowledgeGraph.from_triples(rows, names=names, source_digest=_file_digest(p))
    logger.info(
        "Grafo cargado de %s: %d entidades, %d relaciones, %d tripletas "
        "(%d duplicadas, %d líneas omitidas)",
        p, g.num_entities, g.num_relations, g.num_triples,
        len(rows) - g.num_triples, skipped,
    )
    return g


def load_entity_names(path: Union[str, Path]) -> Dict[str, str]:
    """Lee una tabla ``id<TAB>nombre`` (convención mid2name de FB15k).

    Si un id aparece varias veces se conserva el primer nombre.
    """
    p = Path(path)
    if not p.exists():
        raise InputFileError(f"No existe la tabla de nombres: {p}")
    df = pd.read_csv(
        p, sep="\t", header=None, names=["id", "name"], usecols=[0, 1],
        dtype=str, quoting=3, keep_default_na=False, encoding="utf-8",
    )
    df = df[(df["id"] != "") & (df["name"] != "")].drop_duplicates("id", keep="first")
    return dict(zip(df["id"], df["name"]))


def stats(g: KnowledgeGraph) -> Dict[str, Union[int, float]]:
    """Resumen del grafo: entidades, relaciones, tripletas y grados de salida."""
    out_degree = np.bincount(g.heads, minlength=g.num_entities)
    return {
        "entities": g.num_entities,
        "relations": g.num_relations,
        "triples": g.num_triples,
        "max_out_degree": int(out_degree.max()) if out_degree.size else 0,
        "mean_out_degree": round(float(out_degree.mean()), 4) if out_degree.size else 0.0,
    }


def format_stats(report: Mapping[str, Union[int, float]]) -> str:
    return "".join(f"{key}: {value}\n" for key, value in report.items())
