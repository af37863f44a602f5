"""Instanciación de patrones FOL por emparejamiento de subgrafos.

Pasos
-----
1) Se elige una entidad raíz uniforme del grafo.
2) Se desciende el árbol del patrón en pre-orden: para cada arista se
   elige una relación entrante (o saliente, vía r⁻¹) de la entidad actual
   y una entidad vecina que pasa a ser el nodo hijo.
3) Las ramas negadas se asignan después de evaluar sus hermanas positivas
   (post-orden), partiendo de un pivote distinto de la raíz, para que el
   complemento relativo no quede vacío.
4) Una guarda final evalúa la consulta y exige ``raíz ∈ respuestas``.

El muestreo por lotes usa un generador por intento derivado de
``(seed, patrón, intento)``; el resultado no depende del número de hilos.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union as TypingUnion

import numpy as np

from src.data.kg_store import Direction, KnowledgeGraph
from src.errors import SampleShortfallError
from src.models.fol_core import (
    Anchor,
    FolNode,
    FolQuery,
    Intersection,
    Negation,
    Projection,
    Union,
    evaluate_node,
    evaluate_trace,
    intersect,
    with_directions,
)
from src.models.fol_syntax import format_fol, parse_fol
from src.models.patterns import get_pattern, pattern_index

logger = logging.getLogger(__name__)

DEFAULT_ANSWER_CAP = 100
NEGATION_TRIES = 10

TripleNames = Tuple[str, str, str]


@dataclass(frozen=True)
class InstantiatedSample:
    """Consulta instanciada que contiene a su propia raíz entre las respuestas."""

    query: FolQuery
    root: str
    subgraph: Tuple[TripleNames, ...]
    pattern: str
    seed: int
    attempt: int
    answer_size: int = 0

    def key(self) -> Tuple:
        return self.query.key()

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "fol": format_fol(self.query),
            "anchors": list(self.query.anchors),
            "relations": list(self.query.relations),
            "root": self.root,
            "subgraph": [list(t) for t in self.subgraph],
            "answer_size": self.answer_size,
            "seed": self.seed,
            "attempt": self.attempt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstantiatedSample":
        return cls(
            query=parse_fol(d["fol"]),
            root=d["root"],
            subgraph=tuple(tuple(t) for t in d["subgraph"]),
            pattern=d["pattern"],
            seed=int(d["seed"]),
            attempt=int(d["attempt"]),
            answer_size=int(d.get("answer_size", 0)),
        )


@dataclass(frozen=True)
class InstantiationFailure:
    """Intento fallido; ``stage`` indica dónde murió el emparejamiento."""

    pattern: str
    stage: str


class _Dead(Exception):
    def __init__(self, stage: str) -> None:
        super().__init__(stage)
        self.stage = stage


class _Assignment:
    """Estado mutable de una instanciación en curso."""

    def __init__(self, g: KnowledgeGraph, rng: np.random.Generator, use_inverse: bool) -> None:
        self.g = g
        self.rng = rng
        self.use_inverse = use_inverse
        self.anchors: Dict[int, int] = {}
        self.relations: Dict[int, int] = {}
        self.directions: Dict[int, Direction] = {}
        self.triples: List[Tuple[int, int, int]] = []

    def snapshot(self) -> tuple:
        return (dict(self.anchors), dict(self.relations), dict(self.directions), list(self.triples))

    def restore(self, state: tuple) -> None:
        self.anchors, self.relations, self.directions, self.triples = (
            dict(state[0]), dict(state[1]), dict(state[2]), list(state[3]))

    def pick(self, n: int) -> int:
        return int(self.rng.integers(n))

    def branch_key(self, node: FolNode) -> Tuple:
        """Enlaces de un subárbol, para detectar ramas duplicadas."""
        if isinstance(node, Anchor):
            return ("e", self.anchors.get(node.slot))
        if isinstance(node, Projection):
            return ("p", self.relations.get(node.slot), self.directions.get(node.slot),
                    self.branch_key(node.child))
        if isinstance(node, Negation):
            return ("n", self.branch_key(node.child))
        return ("g", tuple(self.branch_key(c) for c in node.children))

    def evaluate(self, node: FolNode) -> np.ndarray:
        return evaluate_node(self.g, with_directions(node, self.directions),
                             self.anchors, self.relations)

    # ----------------------------------------------------------------- #
    def assign(self, node: FolNode, target: int) -> None:
        if isinstance(node, Anchor):
            self.anchors[node.slot] = target
        elif isinstance(node, Projection):
            self.assign_projection(node, target)
        elif isinstance(node, Intersection):
            self.assign_intersection(node, target)
        elif isinstance(node, Union):
            for child in node.children:
                self.assign(child, target)
            self.check_distinct(node.children)
        else:
            raise _Dead("structure")

    def assign_projection(self, node: Projection, target: int) -> None:
        g = self.g
        choices = [(int(r), Direction.FORWARD) for r in g.incoming_relations(target)]
        if self.use_inverse:
            choices += [(int(r), Direction.INVERSE) for r in g.outgoing_relations(target)]
        if not choices:
            raise _Dead("relation")
        relation, direction = choices[self.pick(len(choices))]
        sources = g.neighbors(target, relation, direction.flip())
        if sources.size == 0:
            raise _Dead("entity")
        source = int(sources[self.pick(sources.size)])
        self.relations[node.slot] = relation
        self.directions[node.slot] = direction
        if direction is Direction.FORWARD:
            self.triples.append((source, relation, target))
        else:
            self.triples.append((target, relation, source))
        self.assign(node.child, source)

    def assign_intersection(self, node: Intersection, target: int) -> None:
        positives = [c for c in node.children if not isinstance(c, Negation)]
        negatives = [c for c in node.children if isinstance(c, Negation)]
        for child in positives:
            self.assign(child, target)
        self.check_distinct(positives)
        if not negatives:
            return

        candidates = self.evaluate(positives[0])
        for child in positives[1:]:
            candidates = intersect(candidates, self.evaluate(child))
        for neg in negatives:
            self.assign_negated(neg.child, target, candidates)

    def assign_negated(self, branch: FolNode, target: int, candidates: np.ndarray) -> None:
        """Asigna la rama negada desde un pivote de modo que excluya al pivote
        pero no a ``target``."""
        pool = candidates[candidates != target]
        state = self.snapshot()
        for _ in range(NEGATION_TRIES):
            if pool.size:
                pivot = int(pool[self.pick(pool.size)])
            else:
                pivot = self.pick(self.g.num_entities)
                if pivot == target:
                    continue
            try:
                self.assign(branch, pivot)
            except _Dead:
                self.restore(state)
                continue
            exclude = self.evaluate(branch)
            if target not in exclude:
                return
            self.restore(state)
        raise _Dead("negation")

    def check_distinct(self, branches: Sequence[FolNode]) -> None:
        keys = [self.branch_key(b) for b in branches]
        if len(set(keys)) != len(keys):
            raise _Dead("duplicate-branch")


def instantiate(
    g: KnowledgeGraph,
    pattern: str,
    rng: np.random.Generator,
    answer_cap: Optional[int] = DEFAULT_ANSWER_CAP,
    use_inverse: bool = True,
    root: Optional[int] = None,
    seed: int = 0,
    attempt: int = 0,
) -> TypingUnion[InstantiatedSample, InstantiationFailure]:
    """Intenta instanciar ``pattern`` sobre ``g``.

    Parameters
    ----------
    g : KnowledgeGraph
        Grafo de origen.
    pattern : str
        Etiqueta del catálogo (``1p`` … ``pni``).
    rng : np.random.Generator
        Generador ya sembrado.
    answer_cap : int | None, default=100
        Tamaño máximo admitido del conjunto de respuestas.
    use_inverse : bool, default=True
        Permite recorrer aristas en sentido inverso (r⁻¹).
    root : int | None
        Fuerza la entidad raíz (por defecto se sortea).

    Returns
    -------
    InstantiatedSample | InstantiationFailure
    """
    spec = get_pattern(pattern)
    target = int(rng.integers(g.num_entities)) if root is None else int(root)
    state = _Assignment(g, rng, use_inverse)
    try:
        state.assign(spec.root, target)
    except _Dead as dead:
        return InstantiationFailure(pattern, dead.stage)

    query = FolQuery(
        pattern=pattern,
        root=with_directions(spec.root, state.directions),
        anchors=tuple(g.entity_name(state.anchors[i]) for i in range(spec.n_anchors)),
        relations=tuple(g.relation_name(state.relations[i]) for i in range(spec.n_relations)),
    )
    trace = evaluate_trace(g, query)
    answers = trace[query.root]
    if target not in answers:
        return InstantiationFailure(pattern, "guard")
    if answer_cap is not None and answers.size > answer_cap:
        return InstantiationFailure(pattern, "answer-cap")
    for node, result in trace.items():
        if isinstance(node, Intersection) and any(isinstance(c, Negation) for c in node.children):
            if result.size == 0:
                return InstantiationFailure(pattern, "negation")

    subgraph = tuple(dict.fromkeys(
        (g.entity_name(h), g.relation_name(r), g.entity_name(t)) for h, r, t in state.triples
    ))
    return InstantiatedSample(
        query=query,
        root=g.entity_name(target),
        subgraph=subgraph,
        pattern=pattern,
        seed=seed,
        attempt=attempt,
        answer_size=int(answers.size),
    )


def attempt_rng(seed: int, pattern: str, attempt: int) -> np.random.Generator:
    """Sub-flujo determinista para un intento concreto."""
    return np.random.default_rng([seed, pattern_index(pattern), attempt])


@dataclass
class SamplingReport:
    """Diagnóstico de un lote: intentos, éxitos, duplicados y etapas de fallo."""

    pattern: str
    requested: int
    samples: List[InstantiatedSample] = field(default_factory=list)
    attempts: int = 0
    successes: int = 0
    duplicates: int = 0
    failures: Counter = field(default_factory=Counter)

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def answer_sizes(self) -> List[int]:
        return [s.answer_size for s in self.samples]


def collect_samples(
    g: KnowledgeGraph,
    pattern: str,
    n: int,
    seed: int,
    max_attempts: Optional[int] = None,
    answer_cap: Optional[int] = DEFAULT_ANSWER_CAP,
    workers: int = 1,
    use_inverse: bool = True,
) -> SamplingReport:
    """Muestrea ``n`` instancias únicas y devuelve el informe completo.

    Raises
    ------
    ValueError
        Si ``n < 1``.
    SampleShortfallError
        Si tras ``max_attempts`` intentos no hay ``n`` muestras únicas.
    """
    if n < 1:
        raise ValueError(f"n debe ser >= 1 (recibido {n})")
    get_pattern(pattern)
    budget = 100 * n if max_attempts is None else int(max_attempts)
    report = SamplingReport(pattern=pattern, requested=n)
    seen = set()
    chunk = max(64, n)

    def run(i: int) -> TypingUnion[InstantiatedSample, InstantiationFailure]:
        return instantiate(g, pattern, attempt_rng(seed, pattern, i), answer_cap,
                           use_inverse, seed=seed, attempt=i)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        start = 0
        while start < budget and len(report.samples) < n:
            stop = min(start + chunk, budget)
            for outcome in pool.map(run, range(start, stop)):
                report.attempts += 1
                if isinstance(outcome, InstantiationFailure):
                    report.failures[outcome.stage] += 1
                else:
                    report.successes += 1
                    if outcome.key() in seen:
                        report.duplicates += 1
                    else:
                        seen.add(outcome.key())
                        report.samples.append(outcome)
                if len(report.samples) == n:
                    break
            start = stop

    logger.info(
        "Patrón %s: %d/%d muestras en %d intentos (%d duplicadas, fallos %s)",
        pattern, len(report.samples), n, report.attempts, report.duplicates,
        dict(sorted(report.failures.items())),
    )
    if len(report.samples) < n:
        raise SampleShortfallError(pattern, n, report.attempts, report.successes, report.duplicates)
    return report


def sample_batch(
    g: KnowledgeGraph,
    pattern: str,
    n: int,
    seed: int,
    max_attempts: Optional[int] = None,
    answer_cap: Optional[int] = DEFAULT_ANSWER_CAP,
    workers: int = 1,
    use_inverse: bool = True,
) -> List[InstantiatedSample]:
    """Lista de ``n`` muestras únicas y deterministas para ``seed``."""
    return collect_samples(g, pattern, n, seed, max_attempts, answer_cap,
                           workers, use_inverse).samples


def dump_samples(samples: Sequence[InstantiatedSample], path: TypingUnion[str, Path]) -> str:
    """Escribe las muestras como JSONL (una por línea) y devuelve la ruta."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")
    return str(p)


def load_samples(path: TypingUnion[str, Path]) -> List[InstantiatedSample]:
    with open(path, "r", encoding="utf-8") as f:
        return [InstantiatedSample.from_dict(json.loads(line)) for line in f if line.strip()]
