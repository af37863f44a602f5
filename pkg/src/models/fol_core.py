"""Consultas FOL como árboles de operadores y su evaluación sobre el grafo.

Flujo
-----
1) Un ``FolQuery`` enlaza un árbol ``FolNode`` (forma del patrón) con
   anclas (entidades) y relaciones por posición (``slot``).
2) ``evaluate`` recorre el árbol en post-orden con las cuatro operaciones
   básicas: proyección, intersección, unión y complemento relativo.
3) ``brute_force_evaluate`` es un oráculo independiente que no usa los
   índices del grafo, solo las columnas de tripletas.

La negación nunca se materializa contra todo el universo de entidades: se
aplica como ``candidatos \\ excluidos`` dentro de su intersección.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from src.data.kg_store import EMPTY, Direction, KnowledgeGraph
from src.errors import FolContractError, OracleGuardError

EntitySet = np.ndarray
AnswerSet = np.ndarray

ORACLE_MAX_ENTITIES = 10_000


# ------------------------------- Nodos ------------------------------------- #

@dataclass(frozen=True)
class Anchor:
    slot: int


@dataclass(frozen=True)
class Projection:
    child: "FolNode"
    slot: int
    direction: Direction = Direction.FORWARD


@dataclass(frozen=True)
class Intersection:
    children: Tuple["FolNode", ...]


@dataclass(frozen=True)
class Union:
    children: Tuple["FolNode", ...]


@dataclass(frozen=True)
class Negation:
    child: "FolNode"


FolNode = typing.Union[Anchor, Projection, Intersection, Union, Negation]


def children_of(node: FolNode) -> Tuple[FolNode, ...]:
    if isinstance(node, (Projection, Negation)):
        return (node.child,)
    if isinstance(node, (Intersection, Union)):
        return node.children
    return ()


def iter_postorder(node: FolNode) -> Iterator[FolNode]:
    for child in children_of(node):
        yield from iter_postorder(child)
    yield node


def iter_preorder(node: FolNode) -> Iterator[FolNode]:
    yield node
    for child in children_of(node):
        yield from iter_preorder(child)


def shape(node: FolNode, canonical: bool = False) -> str:
    """Firma de la forma del árbol, p. ej. ``i(p(e),n(p(e)))``.

    Con ``canonical=True`` los hijos de intersección/unión se ordenan, de
    modo que la firma no depende del orden de los conjuntos.
    """
    if isinstance(node, Anchor):
        return "e"
    if isinstance(node, Projection):
        return f"p({shape(node.child, canonical)})"
    if isinstance(node, Negation):
        return f"n({shape(node.child, canonical)})"
    parts = [shape(c, canonical) for c in node.children]
    if canonical:
        parts.sort()
    tag = "i" if isinstance(node, Intersection) else "u"
    return f"{tag}({','.join(parts)})"


def validate_tree(node: FolNode, parent: typing.Optional[FolNode] = None) -> None:
    """Comprueba los invariantes estructurales del árbol.

    Raises
    ------
    FolContractError
        Negación fuera de una intersección, aridades no catalogadas o
        intersección sin ningún hijo positivo.
    """
    if isinstance(node, Negation):
        if not isinstance(parent, Intersection):
            raise FolContractError("La negación solo puede ser hija directa de una intersección")
    elif isinstance(node, Intersection):
        if not 2 <= len(node.children) <= 3:
            raise FolContractError(f"La intersección admite 2 o 3 hijos, no {len(node.children)}")
        if all(isinstance(c, Negation) for c in node.children):
            raise FolContractError("La intersección necesita al menos un hijo no negado")
    elif isinstance(node, Union):
        if len(node.children) != 2:
            raise FolContractError(f"La unión admite exactamente 2 hijos, no {len(node.children)}")
    elif not isinstance(node, (Anchor, Projection)):
        raise FolContractError(f"Nodo desconocido: {node!r}")
    for child in children_of(node):
        validate_tree(child, node)


def with_directions(node: FolNode, directions: Mapping[int, Direction]) -> FolNode:
    """Copia del árbol con el sentido de cada proyección según su slot."""
    if isinstance(node, Anchor):
        return node
    if isinstance(node, Projection):
        return Projection(with_directions(node.child, directions), node.slot,
                          directions.get(node.slot, node.direction))
    if isinstance(node, Negation):
        return Negation(with_directions(node.child, directions))
    kids = tuple(with_directions(c, directions) for c in node.children)
    return Intersection(kids) if isinstance(node, Intersection) else Union(kids)


@dataclass(frozen=True)
class FolQuery:
    """Consulta FOL: patrón, árbol y enlaces de anclas/relaciones por slot.

    Las anclas y relaciones se guardan como cadenas del espacio de nombres
    del grafo (ids crudos de entidad y relación), de modo que la consulta es
    serializable y legible sin el grafo.
    """

    pattern: str
    root: FolNode
    anchors: Tuple[str, ...] = field(default_factory=tuple)
    relations: Tuple[str, ...] = field(default_factory=tuple)

    def anchor_slots(self) -> List[int]:
        return [n.slot for n in iter_postorder(self.root) if isinstance(n, Anchor)]

    def relation_slots(self) -> List[int]:
        return [n.slot for n in iter_postorder(self.root) if isinstance(n, Projection)]

    def directions(self) -> Tuple[Direction, ...]:
        by_slot = {n.slot: n.direction for n in iter_postorder(self.root)
                   if isinstance(n, Projection)}
        return tuple(by_slot[i] for i in sorted(by_slot))

    def validate(self) -> None:
        validate_tree(self.root)
        a_slots, r_slots = self.anchor_slots(), self.relation_slots()
        if sorted(a_slots) != list(range(len(a_slots))):
            raise FolContractError(f"Slots de ancla no consecutivos: {a_slots}")
        if sorted(r_slots) != list(range(len(r_slots))):
            raise FolContractError(f"Slots de relación no consecutivos: {r_slots}")
        if len(self.anchors) != len(a_slots) or len(self.relations) != len(r_slots):
            raise FolContractError(
                f"Consulta {self.pattern} sin instanciar completamente: "
                f"{len(self.anchors)}/{len(a_slots)} anclas, "
                f"{len(self.relations)}/{len(r_slots)} relaciones"
            )

    def key(self) -> Tuple:
        """Clave de unicidad: patrón, anclas, relaciones y sentidos."""
        return (self.pattern, self.anchors, self.relations,
                tuple(d.value for d in self.directions()))


# --------------------------- Álgebra de conjuntos --------------------------- #

def entity_set(values: typing.Iterable[int]) -> EntitySet:
    """Normaliza a conjunto ordenado sin duplicados (int64)."""
    arr = np.fromiter((int(v) for v in values), dtype=np.int64)
    return np.unique(arr)


def project(g: KnowledgeGraph, entities: EntitySet, relation: int,
            direction: Direction = Direction.FORWARD) -> EntitySet:
    """Unión de los vecinos por ``relation`` de cada entidad de ``entities``."""
    parts = [g.neighbors(int(e), relation, direction) for e in entities]
    if not parts:
        return EMPTY
    return np.unique(np.concatenate(parts))


def intersect(a: EntitySet, b: EntitySet, *rest: EntitySet) -> EntitySet:
    return reduce(lambda x, y: np.intersect1d(x, y, assume_unique=True), rest,
                  np.intersect1d(a, b, assume_unique=True))


def union(a: EntitySet, b: EntitySet) -> EntitySet:
    return np.union1d(a, b)


def relative_complement(candidates: EntitySet, exclude: EntitySet) -> EntitySet:
    return np.setdiff1d(candidates, exclude, assume_unique=True)


# ------------------------------ Evaluación ---------------------------------- #

@dataclass(frozen=True)
class ResolvedBindings:
    """Anclas y relaciones de una consulta resueltas a ids del grafo."""

    anchors: Tuple[int, ...]
    relations: Tuple[int, ...]


def resolve(g: KnowledgeGraph, q: FolQuery) -> ResolvedBindings:
    return ResolvedBindings(
        anchors=tuple(g.entity_id(a) for a in q.anchors),
        relations=tuple(g.relation_id(r) for r in q.relations),
    )


def evaluate_node(
    g: KnowledgeGraph,
    node: FolNode,
    anchors: Mapping[int, int],
    relations: Mapping[int, int],
    trace: typing.Optional[Dict[FolNode, EntitySet]] = None,
) -> EntitySet:
    """Evalúa un subárbol con enlaces por slot (ids ya resueltos).

    Los hijos no negados de una intersección se combinan de menor a mayor
    tamaño; los negados se restan al final como complemento relativo.
    """
    if isinstance(node, Anchor):
        result = np.asarray([anchors[node.slot]], dtype=np.int64)
    elif isinstance(node, Projection):
        inputs = evaluate_node(g, node.child, anchors, relations, trace)
        result = project(g, inputs, relations[node.slot], node.direction)
    elif isinstance(node, Intersection):
        positives = [evaluate_node(g, c, anchors, relations, trace)
                     for c in node.children if not isinstance(c, Negation)]
        positives.sort(key=len)
        result = reduce(intersect, positives[1:], positives[0])
        for child in node.children:
            if isinstance(child, Negation):
                exclude = evaluate_node(g, child.child, anchors, relations, trace)
                if trace is not None:
                    trace[child] = exclude
                result = relative_complement(result, exclude)
    elif isinstance(node, Union):
        a, b = (evaluate_node(g, c, anchors, relations, trace) for c in node.children)
        result = union(a, b)
    else:
        raise FolContractError("Negación evaluada fuera de una intersección")
    if trace is not None:
        trace[node] = result
    return result


def evaluate(g: KnowledgeGraph, q: FolQuery) -> AnswerSet:
    """Respuestas de la variable libre de ``q`` sobre ``g``.

    Raises
    ------
    FolContractError
        Árbol estructuralmente inválido o sin instanciar.
    UnknownIdError
        Ancla o relación que no existe en el grafo.
    """
    q.validate()
    b = resolve(g, q)
    return evaluate_node(g, q.root, dict(enumerate(b.anchors)), dict(enumerate(b.relations)))


def evaluate_trace(g: KnowledgeGraph, q: FolQuery) -> Dict[FolNode, EntitySet]:
    """Como ``evaluate`` pero devuelve el resultado de cada nodo.

    Para un nodo ``Negation`` se guarda el conjunto excluido.
    """
    q.validate()
    b = resolve(g, q)
    trace: Dict[FolNode, EntitySet] = {}
    evaluate_node(g, q.root, dict(enumerate(b.anchors)), dict(enumerate(b.relations)), trace)
    return trace


def brute_force_evaluate(g: KnowledgeGraph, q: FolQuery,
                         max_entities: int = ORACLE_MAX_ENTITIES) -> AnswerSet:
    """Oráculo por enumeración: satisfacción de la fórmula para cada entidad.

    Cada subfórmula se representa como un vector booleano sobre todo el
    universo de entidades (una asignación candidata por posición). La
    cuantificación existencial de las variables ligadas se resuelve
    recorriendo la lista completa de tripletas, sin índices; la negación
    usa el complemento contra el universo, conjugado con sus hermanos.

    Raises
    ------
    OracleGuardError
        Si el grafo supera ``max_entities`` entidades.
    """
    if g.num_entities > max_entities:
        raise OracleGuardError(
            f"El oráculo admite hasta {max_entities} entidades; el grafo tiene {g.num_entities}"
        )
    q.validate()
    b = resolve(g, q)
    n = g.num_entities
    heads, rels, tails = g.heads, g.relation_column, g.tails

    def holds(node: FolNode) -> np.ndarray:
        if isinstance(node, Anchor):
            truth = np.zeros(n, dtype=bool)
            truth[b.anchors[node.slot]] = True
            return truth
        if isinstance(node, Projection):
            inner = holds(node.child)
            src, dst = (heads, tails) if node.direction is Direction.FORWARD else (tails, heads)
            witnessed = (rels == b.relations[node.slot]) & inner[src]
            truth = np.zeros(n, dtype=bool)
            truth[dst[witnessed]] = True
            return truth
        if isinstance(node, Intersection):
            truth = np.ones(n, dtype=bool)
            for child in node.children:
                if isinstance(child, Negation):
                    truth &= ~holds(child.child)
                else:
                    truth &= holds(child)
            return truth
        if isinstance(node, Union):
            first, second = node.children
            return holds(first) | holds(second)
        raise FolContractError("Negación fuera de una intersección")

    return np.flatnonzero(holds(q.root)).astype(np.int64)


def labels(g: KnowledgeGraph, entities: Sequence[int]) -> List[str]:
    return [g.label(int(e)) for e in entities]
