"""Registros de instrucción a partir de pares consulta–solución.

Por cada par verificado se emiten:

- 1 ``trajectory``: diálogo completo (cada llamada a herramienta es una
  salida del asistente seguida de la respuesta de la herramienta).
- 1 ``plan``: descomposición en subtareas.
- por paso: ``reason`` (objetivo), ``retrieve`` (API) y ``understand``
  (argumentos), con el historial de pasos anteriores.
- ``review`` para los pasos elegidos con probabilidad ``p_review``; la
  respuesta mostrada se corrompe con probabilidad 1/2 (etiqueta ``fail``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.data.kg_store import KnowledgeGraph
from src.errors import DatasetShortfallError, IntegrityError, UnverifiedPairError
from src.models.fol_syntax import parse_fol
from src.models.patterns import pattern_index
from src.models.sampler import InstantiatedSample
from src.models.solution_path import (
    ExecutionChain,
    SolutionPath,
    SolutionStep,
    VerificationReport,
    execute_chain,
    plan_chain,
    verify_replay,
)
from src.synthesis.nl_translate import NlQuery, build_request, translate
from src.synthesis.prompting import load_prompt
from src.tools.api_gen import ApiCatalog, Toolset, build_toolset

logger = logging.getLogger(__name__)

GENERATOR = "kg2tool-synth"
GENERATOR_VERSION = "1.0.0"

ROLES = ("system", "user", "assistant", "tool")
PASS, FAIL = "pass", "fail"
CORRUPTION_TRIES = 20


class TaskKind(str, Enum):
    TRAJECTORY = "trajectory"
    PLAN = "plan"
    REASON = "reason"
    RETRIEVE = "retrieve"
    UNDERSTAND = "understand"
    REVIEW = "review"


PER_STEP_KINDS = (TaskKind.REASON, TaskKind.RETRIEVE, TaskKind.UNDERSTAND)


@dataclass(frozen=True)
class Turn:
    role: str
    content: str


@dataclass(frozen=True)
class InstructionRecord:
    """Registro de diálogo; ``provenance`` solo contiene tipos JSON nativos."""

    kind: TaskKind
    turns: Tuple[Turn, ...]
    label: str
    provenance: Dict = field(default_factory=dict)

    @property
    def system(self) -> str:
        return self.turns[0].content

    @property
    def record_id(self) -> str:
        return self.provenance.get("id", "")

    @property
    def step(self) -> Optional[int]:
        return self.provenance.get("step")

    def validate(self) -> None:
        if not self.turns or self.turns[0].role != "system":
            raise IntegrityError(f"[{self.record_id}] el primer turno debe ser el de sistema")
        bad = [t.role for t in self.turns if t.role not in ROLES]
        if bad:
            raise IntegrityError(f"[{self.record_id}] roles no válidos: {bad}")
        if self.kind is TaskKind.REVIEW and self.label not in (PASS, FAIL):
            raise IntegrityError(f"[{self.record_id}] etiqueta de revisión no válida: {self.label!r}")

    def meta(self) -> dict:
        p = dict(self.provenance)
        return {"id": p.pop("id", ""), "kind": self.kind.value, "label": self.label, **p}

    @classmethod
    def from_parts(cls, turns: Sequence[Turn], meta: Mapping) -> "InstructionRecord":
        prov = {k: v for k, v in meta.items() if k not in ("kind", "label")}
        return cls(TaskKind(meta["kind"]), tuple(turns), meta["label"], prov)


@dataclass(frozen=True)
class QueryPair:
    """Muestra + camino ejecutado + pregunta, ya verificados."""

    sample: InstantiatedSample
    chain: ExecutionChain
    path: SolutionPath
    nl: NlQuery
    verification: VerificationReport

    @property
    def sample_id(self) -> str:
        return f"{self.sample.pattern}-{self.sample.seed}-{self.sample.attempt}"


def build_pair(g: KnowledgeGraph, sample: InstantiatedSample, catalog: ApiCatalog,
               translator: str = "template", client=None) -> QueryPair:
    """Planifica, traduce, ejecuta y verifica una muestra."""
    q = sample.query
    chain = plan_chain(q, catalog, label=g.display_name)
    nl = translate(build_request(q, catalog, label=g.display_name), translator, client)
    path = execute_chain(g, chain, nl.text)
    report = verify_replay(g, path, catalog)
    return QueryPair(sample, chain, path, nl, report)


# ----------------------------- Textos de turno ------------------------------ #

def _dumps(value) -> str:
    return json.dumps(value, ensure_ascii=False)


def call_text(step: SolutionStep) -> str:
    return _dumps({"goal": step.goal, "name": step.api, "arguments": step.args_dict()})


def response_text(response: Sequence[str]) -> str:
    return _dumps(list(response))


def answer_text(path: SolutionPath) -> str:
    return _dumps({"answer": list(path.final_answer)})


def plan_text(path: SolutionPath) -> str:
    return "\n".join(f"{i}. {goal}" for i, goal in enumerate(path.subtasks, start=1))


def system_text(toolset: Toolset) -> str:
    tools = json.dumps(toolset.to_dicts(), ensure_ascii=False, indent=2)
    return load_prompt("system_prompt").substitute(tools=tools)


def path_from_trajectory(record: InstructionRecord, fol: str) -> SolutionPath:
    """Reconstruye el camino registrado en un diálogo ``trajectory``."""
    turns = record.turns
    steps = []
    for call, reply in zip(turns[2:-1:2], turns[3:-1:2]):
        data = json.loads(call.content)
        steps.append(SolutionStep.from_dict({
            "goal": data["goal"], "api": data["name"], "args": data["arguments"],
            "response": json.loads(reply.content),
        }))
    answer = json.loads(turns[-1].content)["answer"]
    return SolutionPath(turns[1].content, fol, tuple(s.goal for s in steps), tuple(steps),
                        tuple(answer))


class RecordFactory:
    """Construye cada tipo de registro para un camino y un toolset fijos."""

    def __init__(self, path: SolutionPath, toolset: Toolset, base: Mapping) -> None:
        self.path = path
        self.toolset = toolset
        self.base = dict(base)
        self.system = system_text(toolset)

    def _record(self, kind: TaskKind, turns: List[Turn], label: str,
                step: Optional[int] = None) -> InstructionRecord:
        suffix = kind.value if step is None else f"{kind.value}/{step}"
        prov = {"id": f"{self.base['sample_id']}/{suffix}", **self.base, "step": step,
                "fol": self.path.fol, "tools": self.toolset.to_records()}
        return InstructionRecord(kind, tuple(turns), label, prov)

    def _opening(self) -> List[Turn]:
        return [Turn("system", self.system), Turn("user", self.path.query)]

    def _history(self, upto: int) -> List[Turn]:
        turns: List[Turn] = []
        for s in self.path.steps[:upto]:
            turns += [Turn("assistant", call_text(s)), Turn("tool", response_text(s.response))]
        return turns

    def trajectory(self) -> InstructionRecord:
        label = answer_text(self.path)
        turns = self._opening() + self._history(len(self.path.steps)) + [Turn("assistant", label)]
        return self._record(TaskKind.TRAJECTORY, turns, label)

    def plan(self) -> InstructionRecord:
        label = plan_text(self.path)
        ask = "Break the question down into subtasks and list them in order."
        turns = self._opening() + [Turn("user", ask), Turn("assistant", label)]
        return self._record(TaskKind.PLAN, turns, label)

    def per_step(self, kind: TaskKind, step: int) -> InstructionRecord:
        s = self.path.steps[step - 1]
        if kind is TaskKind.REASON:
            ask, label = "What is the goal of the next step?", s.goal
        elif kind is TaskKind.RETRIEVE:
            ask, label = f"The next step is: {s.goal}\nWhich tool should be called?", s.api
        else:
            ask = (f"The next step is: {s.goal}\n"
                   f"Which arguments should be passed to {s.api}? Answer in JSON.")
            label = _dumps(s.args_dict())
        turns = (self._opening() + self._history(step - 1)
                 + [Turn("user", ask), Turn("assistant", label)])
        return self._record(kind, turns, label, step)

    def review(self, step: int, shown: Sequence[str]) -> InstructionRecord:
        s = self.path.steps[step - 1]
        label = PASS if tuple(shown) == s.response else FAIL
        ask = "Does this tool response solve the goal of the step? Answer pass or fail."
        turns = (self._opening() + self._history(step - 1)
                 + [Turn("assistant", call_text(s)), Turn("tool", response_text(shown)),
                    Turn("user", ask), Turn("assistant", label)])
        return self._record(TaskKind.REVIEW, turns, label, step)


def _corrupt(g: KnowledgeGraph, path: SolutionPath, step: int,
             rng: np.random.Generator) -> Optional[Tuple[str, ...]]:
    """Respuesta distinta de la verdadera: de un paso hermano o entidades al azar."""
    truth = path.steps[step - 1].response
    siblings = [s.response for i, s in enumerate(path.steps, start=1)
                if i != step and s.response != truth]
    if siblings:
        return siblings[int(rng.integers(len(siblings)))]
    size = max(1, len(truth))
    for _ in range(CORRUPTION_TRIES):
        ids = np.sort(rng.choice(g.num_entities, size=min(size, g.num_entities), replace=False))
        shown = tuple(g.label(int(e)) for e in ids)
        if shown != truth:
            return shown
    return None


def build_records(pair: QueryPair, toolset: Toolset, rng: np.random.Generator,
                  g: KnowledgeGraph, p_review: float = 0.3) -> List[InstructionRecord]:
    """Registros de un par verificado (``2 + 3·pasos`` más las revisiones).

    Raises
    ------
    UnverifiedPairError
        Si el par no superó ``verify_replay``.
    """
    if not pair.verification.passed:
        raise UnverifiedPairError(f"Par {pair.sample_id} sin verificar")
    missing = [n for n in pair.path.api_names() if n not in toolset]
    if missing:
        raise IntegrityError(f"El toolset de {pair.sample_id} no contiene {missing}")

    base = {"pattern": pair.sample.pattern, "sample_id": pair.sample_id,
            "translation": pair.nl.mode, "flagged": pair.nl.flagged}
    factory = RecordFactory(pair.path, toolset, base)
    records = [factory.trajectory(), factory.plan()]
    n_steps = len(pair.path.steps)
    for step in range(1, n_steps + 1):
        records += [factory.per_step(kind, step) for kind in PER_STEP_KINDS]
    for step in range(1, n_steps + 1):
        if rng.random() >= p_review:
            continue
        shown = pair.path.steps[step - 1].response
        if rng.random() < 0.5:
            shown = _corrupt(g, pair.path, step, rng) or shown
        records.append(factory.review(step, shown))
    for r in records:
        r.validate()
    return records


def records_for_pair(g: KnowledgeGraph, pair: QueryPair, catalog: ApiCatalog,
                     k_distractors: int, p_review: float, seed: int) -> List[InstructionRecord]:
    """Toolset + registros con un generador propio del par (independiente del orden)."""
    rng = np.random.default_rng([seed, pattern_index(pair.sample.pattern), pair.sample.attempt, 1])
    toolset = build_toolset(pair.path, catalog, k_distractors, rng)
    return build_records(pair, toolset, rng, g, p_review)


# ----------------------------- Verificación --------------------------------- #

def verify_record(g: KnowledgeGraph, record: InstructionRecord) -> List[str]:
    """Problemas encontrados al reconstruir ``record`` desde el grafo (vacío = ok)."""
    meta = record.provenance
    try:
        catalog = ApiCatalog.from_records(meta["tools"])
        toolset = Toolset(tuple(catalog))
        q = parse_fol(meta["fol"])
        question = record.turns[1].content
    except (KeyError, IndexError, ValueError) as exc:
        return [f"metadatos incompletos: {exc}"]

    problems: List[str] = []
    if record.kind is TaskKind.TRAJECTORY:
        try:
            report = verify_replay(g, path_from_trajectory(record, meta["fol"]), catalog)
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            return [f"trayectoria ilegible: {exc}"]
        problems += [f"paso {c.index + 1}: {c.reason}" for c in report.mismatches]
        if not report.final_match:
            problems.append("respuesta final distinta")

    path = execute_chain(g, plan_chain(q, catalog, label=g.display_name), question)
    base = {k: meta[k] for k in ("pattern", "sample_id", "translation", "flagged") if k in meta}
    factory = RecordFactory(path, toolset, base)
    step = record.step
    if record.kind is TaskKind.TRAJECTORY:
        expected = factory.trajectory()
    elif record.kind is TaskKind.PLAN:
        expected = factory.plan()
    elif step is None or not 1 <= step <= len(path.steps):
        return problems + [f"paso fuera de rango: {step}"]
    elif record.kind is TaskKind.REVIEW:
        try:
            shown = tuple(json.loads(record.turns[-3].content))
        except (ValueError, IndexError) as exc:
            return problems + [f"respuesta mostrada ilegible: {exc}"]
        expected = factory.review(step, shown)
    else:
        expected = factory.per_step(record.kind, step)

    if expected.label != record.label:
        problems.append(f"etiqueta distinta: {record.label!r} != {expected.label!r}")
    if expected.turns != record.turns:
        diff = next((i for i, (a, b) in enumerate(zip(expected.turns, record.turns)) if a != b),
                    min(len(expected.turns), len(record.turns)))
        problems.append(f"turno {diff} distinto")
    return problems


# ------------------------------ Ensamblado ---------------------------------- #

@dataclass
class Dataset:
    records: List[InstructionRecord]
    manifest: Dict


def count_records(records: Sequence[InstructionRecord]) -> Dict:
    """Conteos por patrón, por tipo y por partición (para el manifiesto)."""
    if not records:
        return {"total": 0, "pairs": {}, "records": {}, "kinds": {}, "splits": {}}
    df = pd.DataFrame({
        "pattern": [r.provenance.get("pattern", "") for r in records],
        "sample_id": [r.provenance.get("sample_id", "") for r in records],
        "kind": [r.kind.value for r in records],
        "split": [r.provenance.get("split", "train") for r in records],
    })
    return {
        "total": int(len(df)),
        "pairs": {k: int(v) for k, v in df.groupby("pattern")["sample_id"].nunique().items()},
        "records": {k: int(v) for k, v in df["pattern"].value_counts().sort_index().items()},
        "kinds": {k: int(v) for k, v in df["kind"].value_counts().sort_index().items()},
        "splits": {k: int(v) for k, v in df["split"].value_counts().sort_index().items()},
    }


def assemble_dataset(
    groups_by_pattern: Mapping[str, Sequence[Sequence[InstructionRecord]]],
    per_pattern: int,
    seed: int,
    unit: str = "pair",
    split: float = 0.0,
    manifest_extra: Optional[Mapping] = None,
) -> Dataset:
    """Muestreo uniforme sin reemplazo de ``per_pattern`` unidades por patrón.

    Parameters
    ----------
    groups_by_pattern : Mapping[str, Sequence[Sequence[InstructionRecord]]]
        Registros agrupados por par, para cada patrón.
    unit : {"pair", "record"}
        Se sortean pares completos o registros sueltos.
    split : float
        Fracción de registros marcados como ``validation`` (0 = ninguna).

    Raises
    ------
    DatasetShortfallError
        Si algún patrón no tiene suficientes unidades.
    """
    if unit not in ("pair", "record"):
        raise ValueError(f"unit debe ser 'pair' o 'record' (recibido {unit!r})")
    if not 0.0 <= split < 1.0:
        raise ValueError(f"split debe estar en [0, 1) (recibido {split})")
    rng = np.random.default_rng(seed)
    chosen: List[InstructionRecord] = []
    for pattern, groups in groups_by_pattern.items():
        units = list(groups) if unit == "pair" else [[r] for grp in groups for r in grp]
        if per_pattern > len(units):
            raise DatasetShortfallError(pattern, per_pattern, len(units))
        for i in rng.choice(len(units), size=per_pattern, replace=False):
            chosen.extend(units[int(i)])

    records = [chosen[int(i)] for i in rng.permutation(len(chosen))]
    if split > 0:
        marks = rng.random(len(records)) < split
        records = [
            InstructionRecord(r.kind, r.turns, r.label,
                              {**r.provenance, "split": "validation" if m else "train"})
            for r, m in zip(records, marks)
        ]

    manifest = {
        "generator": GENERATOR,
        "version": GENERATOR_VERSION,
        "seed": seed,
        "unit": unit,
        "per_pattern": per_pattern,
        "patterns": list(groups_by_pattern),
        "counts": count_records(records),
        **dict(manifest_extra or {}),
    }
    logger.info("Dataset ensamblado: %d registros de %d patrones",
                len(records), len(groups_by_pattern))
    return Dataset(records, manifest)
