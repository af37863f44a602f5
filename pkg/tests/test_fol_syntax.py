import pytest

from src.data.kg_store import Direction
from src.errors import FolSyntaxError, UnknownPatternError
from src.models.fol_core import FolQuery
from src.models.fol_syntax import format_fol, parse_fol
from src.models.patterns import PATTERN_TAGS, get_pattern

INV, FWD = Direction.INVERSE, Direction.FORWARD


@pytest.mark.parametrize("tag", PATTERN_TAGS)
def test_catalog_templates_round_trip(tag):
    """format → parse reproduce la plantilla de cada patrón."""
    q = get_pattern(tag).template()
    assert parse_fol(format_fol(q)) == q
    assert parse_fol(format_fol(q, ascii=True)) == q


@pytest.mark.parametrize(
    "tag, text",
    [
        ("1p", "q =?a : Rel_1(A, a)"),
        ("2p", "q =?b : ∃ a : Rel_1(A, a) ∧ Rel_2(a, b)"),
        ("2i", "q =?c : Rel_1(A, c) ∧ Rel_2(B, c)"),
        ("2u", "q =?c : Rel_1(A, c) ∨ Rel_2(B, c)"),
        ("up", "q =?d : ∃ c : (Rel_1(A, c) ∨ Rel_2(B, c)) ∧ Rel_3(c, d)"),
        ("2in", "q =?d : Rel_1(A, d) ∧ ¬Rel_2(B, d)"),
        ("pni", "q =?e : ∃ a : Rel_1(A, a) ∧ ¬Rel_2(a, e) ∧ Rel_3(B, e)"),
    ],
)
def test_canonical_text(tag, text):
    """Texto canónico de algunos patrones."""
    assert format_fol(get_pattern(tag).template()) == text


def test_implicit_variable_without_quantifier():
    """Una letra minúscula sin declarar se trata como variable."""
    q = parse_fol("q =?b : Rel_1(A, a) ∧ Rel_2(a, b)")
    assert q.pattern == "2p"
    assert q.anchors == ("A",)


def test_constants_with_spaces():
    """Las constantes pueden contener espacios."""
    q = parse_fol("q =?a : Star(Amy Irving, a)")
    assert q.pattern == "1p"
    assert q.anchors == ("Amy Irving",)
    assert q.relations == ("Star",)


def test_inverse_atoms():
    """La variable a la izquierda del átomo indica el sentido inverso."""
    q = parse_fol("q =?d : ∃c : Win(c, Turing Award) ∧ Field(c, Deep Learning) ∧ University(c, d)")
    assert q.pattern == "ip"
    assert q.anchors == ("Turing Award", "Deep Learning")
    assert q.relations == ("Win", "Field", "University")
    assert q.directions() == (INV, INV, FWD)
    assert parse_fol(format_fol(q)) == q


def test_quoted_constants_round_trip():
    """Constantes con caracteres reservados o con forma de variable se citan."""
    base = get_pattern("2i").template()
    q = FolQuery("2i", base.root, ("Smith, John", "a"), ("r", "s"))
    text = format_fol(q)
    assert '"Smith, John"' in text and '"a"' in text
    assert parse_fol(text) == q


def test_labels_replace_raw_names():
    """format_fol acepta etiquetas para anclas y relaciones."""
    q = get_pattern("1p").template()
    text = format_fol(q, entity_label=lambda s: "Alice", relation_label=lambda r: "get_x_of_y")
    assert text == "q =?a : get_x_of_y(Alice, a)"


def test_syntax_error_position():
    """Paréntesis sin cerrar: error al final del texto."""
    text = "q =?a : R(A, a"
    with pytest.raises(FolSyntaxError) as info:
        parse_fol(text)
    assert info.value.position == len(text)
    assert info.value.code == "E_SYNTAX"


def test_bad_header():
    """Cabecera sin 'q =?var :'."""
    with pytest.raises(FolSyntaxError) as info:
        parse_fol("x = ?a : R(A, a)")
    assert info.value.position == 0


def test_unreachable_atom_position():
    """Un átomo que no conecta con la variable libre se señala por posición."""
    with pytest.raises(FolSyntaxError) as info:
        parse_fol("q =?a : R(A, a) ∧ S(B, b)")
    assert info.value.position == 18


def test_unknown_shape():
    """Una cadena de cuatro proyecciones no está en el catálogo."""
    with pytest.raises(UnknownPatternError):
        parse_fol("q =?d : ∃ a, b, c : R(A, a) ∧ S(a, b) ∧ T(b, c) ∧ U(c, d)")


@pytest.mark.parametrize(
    "relations",
    [
        ("located in", "born in"),
        ("born in (city)", "part of, region"),
        ('say "hi"', "a|b"),
    ],
)
def test_relations_with_reserved_characters_round_trip(relations):
    """Relaciones con espacios o caracteres reservados se citan y se recuperan."""
    q = FolQuery("2p", get_pattern("2p").template().root, ("Lima",), relations)
    text = format_fol(q)
    assert text.count('"') >= 4
    assert parse_fol(text) == q
    assert parse_fol(format_fol(q, ascii=True)) == q


def test_quoted_relation_under_negation():
    """Una relación citada puede ir negada."""
    q = parse_fol('q =?d : "lives in"(Lima, d) ∧ ¬"born in"(Cusco, d)')
    assert q.pattern == "2in"
    assert q.relations == ("lives in", "born in")


def test_api_label_follows_slot_direction():
    """Con api_label cada átomo es api(entrada, salida) con el nombre de su sentido."""
    q = parse_fol("q =?d : ∃c : Win(c, Turing Award) ∧ Field(c, Deep Learning) ∧ University(c, d)")
    text = format_fol(q, api_label=lambda rel, d: f"{rel.lower()}_{d.value}")
    assert text == (
        "q =?d : ∃ c : win_inverse(Turing Award, c) ∧ field_inverse(Deep Learning, c)"
        " ∧ university_forward(c, d)"
    )
