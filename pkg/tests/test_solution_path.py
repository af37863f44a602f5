import dataclasses

import numpy as np
import pytest

from src.data.kg_store import Direction
from src.errors import IntegrityError, UnknownApiError
from src.models.fol_core import Anchor, FolQuery, Intersection, Negation, Projection, evaluate
from src.models.patterns import PATTERN_TAGS, get_pattern
from src.models.sampler import sample_batch
from src.models.solution_path import (
    SolutionPath,
    StepRef,
    execute_chain,
    plan_chain,
    render_entities,
    verify_replay,
)
from src.tools.api_gen import derive_catalog

from tests.conftest import AWARD, FIELD, UNIVERSITY

INV = Direction.INVERSE


def _ip_query():
    root = Projection(Intersection((Projection(Anchor(0), 0, INV),
                                    Projection(Anchor(1), 1, INV))), 2)
    return FolQuery("ip", root, ("turing", "dl"), (AWARD, FIELD, UNIVERSITY))


def _2in_query():
    root = Intersection((Projection(Anchor(0), 0, INV), Negation(Projection(Anchor(1), 1, INV))))
    return FolQuery("2in", root, ("turing", "dl"), (AWARD, FIELD))


def test_ip_walkthrough(toy_kg):
    """Cadena de cuatro pasos: dos proyecciones inversas, intersección, proyección."""
    catalog = derive_catalog(toy_kg)
    chain = plan_chain(_ip_query(), catalog, label=toy_kg.display_name)
    assert chain.api_names() == [
        "get_award_winner_with_awards_won",
        "get_person_with_field",
        "get_intersection_of",
        "get_university_of_person",
    ]
    assert chain.steps[0].goal == "Find the award winner with awards won Turing Award."
    assert chain.steps[2].goal == "Find the entities shared by steps 1 and 2."
    assert chain.steps[3].goal == "Find the university of person entities from step 3."
    assert dict(chain.steps[2].arguments) == {"set_a": StepRef(1), "set_b": StepRef(2)}

    path = execute_chain(toy_kg, chain, query_text="Which universities?")
    assert set(path.steps[0].response) == {"Alice", "Bob", "carol"}
    assert set(path.steps[2].response) == {"Alice", "Bob"}
    assert set(path.final_answer) == {"MIT", "stanford"}
    assert path.subtasks == tuple(s.goal for s in chain.steps)
    assert path.steps[0].args_dict() == {"awards_won": ["Turing Award"]}


def test_negation_step(toy_kg):
    """2in baja a get_negation_of(candidates, exclude)."""
    catalog = derive_catalog(toy_kg)
    chain = plan_chain(_2in_query(), catalog, label=toy_kg.display_name)
    assert chain.api_names()[-1] == "get_negation_of"
    last = chain.steps[-1]
    assert dict(last.arguments) == {"candidates": StepRef(1), "exclude": StepRef(2)}
    assert last.goal == "Remove the entities of step 2 from the entities of step 1."
    path = execute_chain(toy_kg, chain)
    assert path.final_answer == ("carol",)


@pytest.mark.parametrize("pattern", PATTERN_TAGS)
def test_chain_matches_evaluation(synthetic_kg, pattern):
    """Longitud de la cadena y respuesta final iguales a la evaluación directa."""
    g = synthetic_kg
    catalog = derive_catalog(g)
    for sample in sample_batch(g, pattern, 5, seed=8):
        chain = plan_chain(sample.query, catalog, label=g.display_name)
        assert len(chain) == get_pattern(pattern).chain_length
        path = execute_chain(g, chain)
        assert path.final_answer == render_entities(g, evaluate(g, sample.query))
        assert verify_replay(g, path, catalog).passed


def test_ip_chain_ends_with_projection_of_intersection(synthetic_kg):
    """En ip la última proyección consume la intersección."""
    catalog = derive_catalog(synthetic_kg)
    sample = sample_batch(synthetic_kg, "ip", 1, seed=0)[0]
    chain = plan_chain(sample.query, catalog)
    assert chain.steps[-2].operation == "intersection"
    assert chain.steps[-1].operation == "projection"
    assert chain.steps[-1].refs() == [3]


def test_empty_step_is_an_integrity_error(toy_kg):
    """Una proyección vacía no produce camino en modo estricto."""
    q = FolQuery("1p", Projection(Anchor(0), 0), ("mit",), (UNIVERSITY,))
    chain = plan_chain(q, derive_catalog(toy_kg))
    with pytest.raises(IntegrityError):
        execute_chain(toy_kg, chain)
    assert execute_chain(toy_kg, chain, strict=False).final_answer == ()


def test_untouched_path_verifies(toy_kg):
    """El camino sin modificar pasa la verificación."""
    catalog = derive_catalog(toy_kg)
    path = execute_chain(toy_kg, plan_chain(_ip_query(), catalog, label=toy_kg.display_name))
    report = verify_replay(toy_kg, path, catalog)
    assert report.passed
    assert len(report.checks) == 4


def test_corrupted_step_is_reported(toy_kg):
    """Alterar la respuesta del paso 2 señala exactamente ese índice."""
    catalog = derive_catalog(toy_kg)
    path = execute_chain(toy_kg, plan_chain(_ip_query(), catalog, label=toy_kg.display_name))
    steps = list(path.steps)
    steps[1] = dataclasses.replace(steps[1], response=("Bob",))
    report = verify_replay(toy_kg, dataclasses.replace(path, steps=tuple(steps)), catalog)
    assert not report.passed
    assert [c.index for c in report.mismatches] == [1]
    assert report.mismatches[0].reason == "respuesta distinta"
    assert report.final_match


def test_tampered_final_answer(toy_kg):
    """Respuesta final distinta → final_match falso."""
    catalog = derive_catalog(toy_kg)
    path = execute_chain(toy_kg, plan_chain(_ip_query(), catalog, label=toy_kg.display_name))
    report = verify_replay(toy_kg, dataclasses.replace(path, final_answer=("MIT",)), catalog)
    assert not report.final_match and not report.passed


def test_unknown_api(toy_kg):
    """Una API que no está en el catálogo → UnknownApiError."""
    catalog = derive_catalog(toy_kg)
    path = execute_chain(toy_kg, plan_chain(_ip_query(), catalog, label=toy_kg.display_name))
    steps = list(path.steps)
    steps[0] = dataclasses.replace(steps[0], api="get_secret_of_person")
    with pytest.raises(UnknownApiError):
        verify_replay(toy_kg, dataclasses.replace(path, steps=tuple(steps)), catalog)


def test_path_json_round_trip(toy_kg):
    """to_dict / from_dict conserva referencias a pasos."""
    catalog = derive_catalog(toy_kg)
    path = execute_chain(toy_kg, plan_chain(_ip_query(), catalog, label=toy_kg.display_name), "q?")
    d = path.to_dict()
    assert d["steps"][2]["args"] == {"set_a": {"step": 1}, "set_b": {"step": 2}}
    assert SolutionPath.from_dict(d) == path


def test_response_truncation(toy_kg):
    """Más de ``limit`` entidades: se añade el marcador con el resto."""
    ids = np.arange(5, dtype=np.int64)
    shown = render_entities(toy_kg, ids, limit=2)
    assert len(shown) == 3
    assert shown[-1] == "... (+3 more)"
    assert shown[:2] == (toy_kg.label(0), toy_kg.label(1))
