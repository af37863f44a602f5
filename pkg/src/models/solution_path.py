"""Cadena de ejecución de APIs para una consulta FOL instanciada.

Flujo
-----
1) ``plan_chain``: recorre el árbol en post-orden y emite un paso por
   proyección, intersección o unión (la negación se funde en la
   intersección que la contiene mediante ``get_negation_of``).
2) ``execute_chain``: ejecuta los pasos sobre el grafo y registra
   argumentos y respuestas con etiquetas legibles.
3) ``verify_replay``: vuelve a planificar y ejecutar desde la forma FOL y
   compara paso a paso con lo registrado.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union as TypingUnion

import numpy as np

from src.data.kg_store import KnowledgeGraph
from src.errors import FolContractError, IntegrityError, MissingApiError, UnknownApiError
from src.models.fol_core import (
    Anchor,
    EntitySet,
    FolNode,
    FolQuery,
    Intersection,
    Negation,
    Projection,
    Union,
    evaluate,
    intersect,
    project,
    relative_complement,
    union,
)
from src.models.fol_syntax import format_fol, parse_fol
from src.tools.api_gen import ApiCatalog, ApiDescriptor

logger = logging.getLogger(__name__)

RESPONSE_LIMIT = 200

Label = Callable[[str], str]


@dataclass(frozen=True)
class StepRef:
    """Referencia a la salida de un paso anterior (1-based)."""

    step: int

    def to_dict(self) -> dict:
        return {"step": self.step}


Argument = TypingUnion[Tuple[str, ...], StepRef]


@dataclass(frozen=True)
class PlannedStep:
    step_id: int
    api: ApiDescriptor
    arguments: Tuple[Tuple[str, Argument], ...]
    goal: str

    @property
    def operation(self) -> str:
        return self.api.operation

    def refs(self) -> List[int]:
        return [a.step for _, a in self.arguments if isinstance(a, StepRef)]


@dataclass(frozen=True)
class ExecutionChain:
    query: FolQuery
    steps: Tuple[PlannedStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def api_names(self) -> List[str]:
        return [s.api.name for s in self.steps]

    def validate(self) -> None:
        """Cada referencia apunta a un paso anterior."""
        for s in self.steps:
            for ref in s.refs():
                if not 1 <= ref < s.step_id:
                    raise FolContractError(
                        f"El paso {s.step_id} referencia el paso {ref}, que no lo precede"
                    )


def _join_steps(refs: Sequence[int]) -> str:
    names = [str(r) for r in refs]
    if len(names) == 1:
        return f"step {names[0]}"
    return "steps " + ", ".join(names[:-1]) + " and " + names[-1]


def _goal(api: ApiDescriptor, arguments: Sequence[Tuple[str, Argument]], label: Label) -> str:
    args = dict(arguments)
    if api.operation == "projection":
        (value,) = args.values()
        if isinstance(value, StepRef):
            return f"Find the {api.phrase} entities from step {value.step}."
        return f"Find the {api.phrase} {', '.join(label(v) for v in value)}."
    if api.operation == "intersection":
        return f"Find the entities shared by {_join_steps([a.step for a in args.values()])}."
    if api.operation == "union":
        return f"Combine the entities of {_join_steps([a.step for a in args.values()])}."
    exclude = args["exclude"].step
    if "candidates_b" in args:
        both = _join_steps([args["candidates"].step, args["candidates_b"].step])
        return f"Keep the entities shared by {both} that are not in step {exclude}."
    return f"Remove the entities of step {exclude} from the entities of step {args['candidates'].step}."


def plan_chain(q: FolQuery, apis: ApiCatalog, label: Optional[Label] = None) -> ExecutionChain:
    """Baja ``q`` a una cadena en post-orden.

    Raises
    ------
    MissingApiError
        Si una relación de ``q`` no tiene API en ``apis``.
    """
    q.validate()
    label = label or (lambda raw: raw)
    steps: List[PlannedStep] = []

    def emit(api: ApiDescriptor, arguments: List[Tuple[str, Argument]]) -> StepRef:
        step = PlannedStep(len(steps) + 1, api, tuple(arguments), _goal(api, arguments, label))
        steps.append(step)
        return StepRef(step.step_id)

    def lower(node: FolNode) -> Argument:
        if isinstance(node, Anchor):
            return (q.anchors[node.slot],)
        if isinstance(node, Projection):
            source = lower(node.child)
            api = apis.for_relation(q.relations[node.slot], node.direction)
            return emit(api, [(api.parameters[0].name, source)])
        if isinstance(node, Union):
            a, b = (lower(c) for c in node.children)
            return emit(apis.logical("union"), [("set_a", a), ("set_b", b)])
        if isinstance(node, Intersection):
            lowered = [(isinstance(c, Negation), lower(c.child if isinstance(c, Negation) else c))
                       for c in node.children]
            positives = [ref for neg, ref in lowered if not neg]
            negatives = [ref for neg, ref in lowered if neg]
            if not negatives:
                params = ("set_a", "set_b", "set_c")
                return emit(apis.logical("intersection"), list(zip(params, positives)))
            if len(negatives) != 1 or len(positives) > 2:
                raise FolContractError("Intersección con negación no soportada por get_negation_of")
            args: List[Tuple[str, Argument]] = [("candidates", positives[0]),
                                                ("exclude", negatives[0])]
            if len(positives) == 2:
                args.append(("candidates_b", positives[1]))
            return emit(apis.logical("negation"), args)
        raise FolContractError("Negación fuera de una intersección")

    lower(q.root)
    chain = ExecutionChain(q, tuple(steps))
    chain.validate()
    return chain


# ------------------------------ Ejecución ----------------------------------- #

def apply_api(g: KnowledgeGraph, api: ApiDescriptor, args: Mapping[str, EntitySet]) -> EntitySet:
    """Ejecuta una API sobre conjuntos de ids ya resueltos."""
    if api.operation == "projection":
        (value,) = args.values()
        return project(g, value, g.relation_id(api.relation), api.direction)
    if api.operation == "intersection":
        return intersect(*args.values())
    if api.operation == "union":
        return union(args["set_a"], args["set_b"])
    if api.operation == "negation":
        candidates = args["candidates"]
        if "candidates_b" in args:
            candidates = intersect(candidates, args["candidates_b"])
        return relative_complement(candidates, args["exclude"])
    raise FolContractError(f"Operación desconocida: {api.operation}")


def render_entities(g: KnowledgeGraph, ids: EntitySet, limit: int = RESPONSE_LIMIT) -> Tuple[str, ...]:
    """Etiquetas en orden de id; más allá de ``limit`` se añade un marcador."""
    shown = [g.label(int(e)) for e in ids[:limit]]
    if ids.size > limit:
        shown.append(f"... (+{ids.size - limit} more)")
    return tuple(shown)


@dataclass(frozen=True)
class SolutionStep:
    goal: str
    api: str
    args: Tuple[Tuple[str, TypingUnion[Tuple[str, ...], StepRef]], ...]
    response: Tuple[str, ...]

    def args_dict(self) -> dict:
        return {k: (v.to_dict() if isinstance(v, StepRef) else list(v)) for k, v in self.args}

    def to_dict(self) -> dict:
        return {"goal": self.goal, "api": self.api, "args": self.args_dict(),
                "response": list(self.response)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SolutionStep":
        args = tuple(
            (k, StepRef(int(v["step"])) if isinstance(v, dict) else tuple(v))
            for k, v in d["args"].items()
        )
        return cls(d["goal"], d["api"], args, tuple(d["response"]))


@dataclass(frozen=True)
class SolutionPath:
    """Camino ejecutado y verificable; se serializa como
    ``{query, fol, subtasks, steps[{goal, api, args, response}], final_answer}``.
    """

    query: str
    fol: str
    subtasks: Tuple[str, ...]
    steps: Tuple[SolutionStep, ...]
    final_answer: Tuple[str, ...]

    def api_names(self) -> List[str]:
        return [s.api for s in self.steps]

    def with_query(self, text: str) -> "SolutionPath":
        return SolutionPath(text, self.fol, self.subtasks, self.steps, self.final_answer)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "fol": self.fol,
            "subtasks": list(self.subtasks),
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": list(self.final_answer),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SolutionPath":
        return cls(
            query=d.get("query", ""),
            fol=d["fol"],
            subtasks=tuple(d.get("subtasks", ())),
            steps=tuple(SolutionStep.from_dict(s) for s in d["steps"]),
            final_answer=tuple(d["final_answer"]),
        )


def _display_args(g: KnowledgeGraph, step: PlannedStep):
    return tuple(
        (k, v if isinstance(v, StepRef) else tuple(g.display_name(x) for x in v))
        for k, v in step.arguments
    )


def run_steps(g: KnowledgeGraph, chain: ExecutionChain) -> List[EntitySet]:
    """Salidas (ids) de cada paso, en orden."""
    outputs: List[EntitySet] = []
    for step in chain.steps:
        resolved: Dict[str, EntitySet] = {}
        for name, value in step.arguments:
            if isinstance(value, StepRef):
                resolved[name] = outputs[value.step - 1]
            else:
                resolved[name] = np.unique(np.asarray([g.entity_id(v) for v in value],
                                                      dtype=np.int64))
        outputs.append(apply_api(g, step.api, resolved))
    return outputs


def execute_chain(g: KnowledgeGraph, chain: ExecutionChain, query_text: str = "",
                  strict: bool = True) -> SolutionPath:
    """Ejecuta la cadena y registra el camino de solución.

    Raises
    ------
    IntegrityError
        Si un paso devuelve el conjunto vacío o la respuesta final no
        coincide con ``evaluate`` (grafo y muestra no corresponden).
    """
    outputs = run_steps(g, chain)
    if strict:
        for step, out in zip(chain.steps, outputs):
            if out.size == 0:
                raise IntegrityError(
                    f"El paso {step.step_id} ({step.api.name}) devolvió un conjunto vacío "
                    f"para {chain.query.pattern}"
                )
        expected = evaluate(g, chain.query)
        if not np.array_equal(outputs[-1], expected):
            raise IntegrityError(
                f"La cadena de {chain.query.pattern} no coincide con la evaluación directa"
            )

    steps = tuple(
        SolutionStep(s.goal, s.api.name, _display_args(g, s), render_entities(g, out))
        for s, out in zip(chain.steps, outputs)
    )
    return SolutionPath(
        query=query_text,
        fol=format_fol(chain.query),
        subtasks=tuple(s.goal for s in chain.steps),
        steps=steps,
        final_answer=render_entities(g, outputs[-1]),
    )


@dataclass(frozen=True)
class StepCheck:
    index: int
    api: str
    matched: bool
    reason: str = ""


@dataclass
class VerificationReport:
    checks: List[StepCheck] = field(default_factory=list)
    final_match: bool = False

    @property
    def mismatches(self) -> List[StepCheck]:
        return [c for c in self.checks if not c.matched]

    @property
    def passed(self) -> bool:
        return self.final_match and not self.mismatches


def verify_replay(g: KnowledgeGraph, path: SolutionPath, apis: ApiCatalog) -> VerificationReport:
    """Re-planifica desde ``path.fol`` y compara cada paso registrado.

    Raises
    ------
    UnknownApiError
        Si el camino nombra una API ausente del catálogo.
    """
    for s in path.steps:
        if s.api not in apis:
            raise UnknownApiError(f"API desconocida en el camino: {s.api}")

    q = parse_fol(path.fol)
    try:
        chain = plan_chain(q, apis, label=g.display_name)
    except MissingApiError as exc:
        raise UnknownApiError(str(exc)) from None
    outputs = run_steps(g, chain)
    report = VerificationReport()

    for i in range(max(len(chain.steps), len(path.steps))):
        if i >= len(path.steps) or i >= len(chain.steps):
            api = path.steps[i].api if i < len(path.steps) else chain.steps[i].api.name
            report.checks.append(StepCheck(i, api, False, "longitud de cadena distinta"))
            continue
        recorded, planned = path.steps[i], chain.steps[i]
        reason = ""
        if recorded.api != planned.api.name:
            reason = f"API {recorded.api} != {planned.api.name}"
        elif recorded.args != _display_args(g, planned):
            reason = "argumentos distintos"
        elif recorded.response != render_entities(g, outputs[i]):
            reason = "respuesta distinta"
        report.checks.append(StepCheck(i, recorded.api, not reason, reason))

    truth = evaluate(g, q)
    report.final_match = (np.array_equal(outputs[-1], truth)
                          and path.final_answer == render_entities(g, truth))
    for c in report.mismatches:
        logger.warning("Paso %d (%s) no verifica: %s", c.index, c.api, c.reason)
    return report
