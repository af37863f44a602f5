import numpy as np
import pytest

from src.data.kg_store import Direction, KnowledgeGraph
from src.errors import LlmError, MissingApiError, ToolsetError
from src.tools.api_gen import (
    LOGICAL_NAMES,
    ApiCatalog,
    ApiDescriptor,
    Toolset,
    build_toolset,
    derive_api_llm,
    derive_api_template,
    derive_catalog,
    is_valid_name,
    logical_apis,
    type_tokens,
)
from src.tools.llm_client import RecordedChatClient

from tests.conftest import UNIVERSITY


class _Path:
    def __init__(self, names):
        self._names = names

    def api_names(self):
        return list(self._names)


def test_university_of_person():
    """Ejemplo de referencia: /people/person/university."""
    d = derive_api_template(UNIVERSITY, Direction.FORWARD)
    assert d.name == "get_university_of_person"
    assert d.parameters[0].name == "person"
    assert d.parameters[0].type == "entity_list"
    assert d.returns.type == "entity_list"
    assert d.provenance == {"relation": UNIVERSITY, "direction": "forward"}
    assert d.phrase == "university of person" and d.noun == "university"


def test_inverse_template():
    """Sentido inverso: get_<cabeza>_with_<cola>."""
    d = derive_api_template(UNIVERSITY, Direction.INVERSE)
    assert d.name == "get_person_with_university"
    assert d.parameters[0].name == "university"
    assert d.noun == "person"


def test_explicit_types_override_path():
    """Los tipos explícitos sustituyen a los segmentos de la ruta."""
    d = derive_api_template("/x/y/university", Direction.FORWARD, head_type="person")
    assert d.name == "get_university_of_person"


def test_type_tokens_edge_cases():
    """Ruta de un segmento y ruta vacía."""
    assert type_tokens("starred_in") == ("entity", "starred_in")
    with pytest.raises(ValueError):
        type_tokens("///")


def test_unusable_relation_falls_back_flagged():
    """Una relación sin tokens da un nombre saneado y marcado."""
    d = derive_api_template("///", Direction.INVERSE)
    assert d.flagged
    assert is_valid_name(d.name)
    assert d.name.endswith("_inverse")


def test_template_is_pure():
    """Misma entrada → mismo descriptor."""
    assert derive_api_template(UNIVERSITY) == derive_api_template(UNIVERSITY)


def test_synthetic_catalog_names_are_valid(synthetic_kg):
    """Todas las APIs derivadas cumplen ^[a-z][a-z0-9_]*$ y son únicas."""
    catalog = derive_catalog(synthetic_kg)
    names = catalog.names()
    assert len(names) == 3 + 2 * synthetic_kg.num_relations
    assert len(set(names)) == len(names)
    assert all(is_valid_name(n) for n in names)
    assert names[:3] == list(LOGICAL_NAMES)


def test_collisions_get_numeric_suffix():
    """Dos relaciones con el mismo par de tipos."""
    g = KnowledgeGraph.from_triples([
        ("a", "/x/person/university", "b"),
        ("c", "/y/person/university", "d"),
    ])
    names = derive_catalog(g).names()
    assert "get_university_of_person" in names
    assert "get_university_of_person_2" in names
    assert "get_person_with_university_2" in names


def test_catalog_lookup(toy_kg):
    """Búsqueda por relación y por nombre."""
    catalog = derive_catalog(toy_kg)
    assert catalog.for_relation(UNIVERSITY).name == "get_university_of_person"
    assert catalog.for_relation(UNIVERSITY, Direction.INVERSE).name == "get_person_with_university"
    assert catalog.logical("negation").name == "get_negation_of"
    with pytest.raises(MissingApiError):
        catalog.by_name("get_nothing")


def test_catalog_dump_and_load(tmp_path, toy_kg):
    """El catálogo se recupera igual desde JSONL."""
    catalog = derive_catalog(toy_kg)
    loaded = ApiCatalog.load(catalog.dump(tmp_path / "apis.jsonl"))
    assert list(loaded) == list(catalog)


def test_logical_api_parameters():
    """Intersección admite un tercer conjunto opcional."""
    inter, union, neg = logical_apis()
    assert [p.name for p in inter.parameters] == ["set_a", "set_b", "set_c"]
    assert not inter.parameters[2].required
    assert [p.name for p in union.parameters] == ["set_a", "set_b"]
    assert [p.name for p in neg.parameters][:2] == ["candidates", "exclude"]
    assert all(d.provenance == "logical" for d in (inter, union, neg))


def test_descriptor_record_round_trip():
    """to_record / from_record conserva procedencia y marca."""
    d = derive_api_template(UNIVERSITY, Direction.INVERSE)
    assert ApiDescriptor.from_record(d.to_record()) == d


def test_toolset_without_distractors(toy_kg):
    """k = 0: exactamente las APIs del camino."""
    catalog = derive_catalog(toy_kg)
    path = _Path(["get_university_of_person"])
    toolset = build_toolset(path, catalog, 0, np.random.default_rng(0))
    assert toolset.names() == ["get_university_of_person"]


def test_toolset_with_distractors(toy_kg):
    """k = 5: las del camino más cinco distintas, sin repeticiones."""
    catalog = derive_catalog(toy_kg)
    used = ["get_university_of_person", "get_intersection_of"]
    toolset = build_toolset(_Path(used), catalog, 5, np.random.default_rng(1))
    assert len(toolset) == 7
    assert set(used) <= set(toolset.names())
    assert len(set(toolset.names())) == 7


def test_toolset_is_deterministic(toy_kg):
    """Misma semilla → mismo orden."""
    catalog = derive_catalog(toy_kg)
    path = _Path(["get_university_of_person"])
    a = build_toolset(path, catalog, 4, np.random.default_rng(7))
    b = build_toolset(path, catalog, 4, np.random.default_rng(7))
    assert a.names() == b.names()


def test_toolset_errors(toy_kg):
    """Demasiados distractores o nombres repetidos."""
    catalog = derive_catalog(toy_kg)
    with pytest.raises(ToolsetError):
        build_toolset(_Path(["get_union_of"]), catalog, len(catalog), np.random.default_rng(0))
    d = catalog.by_name("get_union_of")
    with pytest.raises(ToolsetError):
        Toolset((d, d))


def test_llm_mode_accepts_valid_name():
    """Una respuesta JSON válida se adopta con modo llm."""
    client = RecordedChatClient(['{"name": "get_alma_mater", "description": "Schools attended."}'])
    d = derive_api_llm(UNIVERSITY, Direction.FORWARD, client)
    assert d.name == "get_alma_mater"
    assert d.mode == "llm" and not d.flagged
    assert client.calls == 1
    assert "university" in client.exchanges[0].messages[-1].content


def test_llm_mode_falls_back_after_bad_replies():
    """Tres respuestas no válidas → plantilla marcada."""
    client = RecordedChatClient(["no json", '{"name": "Bad Name", "description": "x"}',
                                 '{"name": "ok_name", "description": ""}'])
    d = derive_api_llm(UNIVERSITY, Direction.FORWARD, client)
    assert client.calls == 3
    assert d.name == "get_university_of_person"
    assert d.flagged and d.mode == "template"


def test_llm_error_falls_back_immediately():
    """Un fallo del cliente no se reintenta aquí."""
    client = RecordedChatClient([LlmError("caído")])
    d = derive_api_llm(UNIVERSITY, Direction.INVERSE, client)
    assert client.calls == 1
    assert d.flagged and d.name == "get_person_with_university"
