"""Forma textual de las consultas FOL: ``parse_fol`` y ``format_fol``.

Gramática
---------
::

    query   := "q" "=" "?" VAR ":" [ ("∃" | "exists") VAR ("," VAR)* ":" ] body
    body    := conj ( ("∨" | "|") conj )*
    conj    := unary ( ("∧" | "&") unary )*
    unary   := ("¬" | "!") unary | "(" body ")" | atom
    atom    := (NAME | QUOTED) "(" ARG "," ARG ")"

``Rel(x, y)`` significa la tripleta ``(x, Rel, y)``. Un argumento es
variable si fue declarado (libre o cuantificado) o si es una sola letra
minúscula sin comillas; cualquier otro argumento es una constante. Las
constantes y las relaciones con espacios o caracteres reservados se
escriben entre comillas dobles.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from src.data.kg_store import Direction
from src.errors import FolContractError, FolSyntaxError, UnknownPatternError
from src.models.fol_core import (
    Anchor,
    FolNode,
    FolQuery,
    Intersection,
    Negation,
    Projection,
    Union,
    iter_postorder,
    validate_tree,
)
from src.models.patterns import CATALOG, match_pattern

AND, OR, NOT, EXISTS = "∧", "∨", "¬", "∃"
_ASCII = {AND: "&", OR: "|", NOT: "!", EXISTS: "exists"}

_HEADER = re.compile(r"\s*q\s*=\s*\?\s*([A-Za-z_][A-Za-z0-9_]*)\s*:")
_QUANT = re.compile(r"\s*(?:∃|exists\b)\s*")
_VAR = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*")
_NAME = re.compile(r"[^\s(),∧∨¬&|!\"]+")
_QUOTED = re.compile(r'"(?:[^"\\]|\\.)*"')
_RAW_ARG = re.compile(r'[^,()"]+')
_IMPLICIT_VAR = re.compile(r"^[a-z]$")
_RESERVED = set('(),"') | {AND, OR, NOT}


# --------------------------------- AST ------------------------------------- #

@dataclass(frozen=True)
class _Arg:
    text: str
    quoted: bool


@dataclass(frozen=True)
class _Atom:
    relation: str
    left: _Arg
    right: _Arg
    position: int


@dataclass(frozen=True)
class _Not:
    inner: object
    position: int


@dataclass(frozen=True)
class _And:
    items: Tuple[object, ...]


@dataclass(frozen=True)
class _Or:
    items: Tuple[object, ...]
    position: int


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def error(self, message: str, position: Optional[int] = None) -> FolSyntaxError:
        return FolSyntaxError(message, self.pos if position is None else position, self.text)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, *tokens: str) -> Optional[str]:
        self.skip_ws()
        for token in tokens:
            if self.text.startswith(token, self.pos):
                return token
        return None

    def expect(self, token: str) -> None:
        if self.peek(token) is None:
            found = self.text[self.pos:self.pos + 1] or "fin de texto"
            raise self.error(f"Se esperaba {token!r} y se encontró {found!r}")
        self.pos += len(token)

    # ----------------------------------------------------------------- #
    def header(self) -> Tuple[str, List[str]]:
        m = _HEADER.match(self.text, self.pos)
        if not m:
            raise self.error("Cabecera inválida: se esperaba 'q =?<variable> :'")
        self.pos = m.end()
        bound: List[str] = []
        q = _QUANT.match(self.text, self.pos)
        if q:
            self.pos = q.end()
            while True:
                v = _VAR.match(self.text, self.pos)
                if not v:
                    raise self.error("Se esperaba una variable cuantificada")
                bound.append(v.group(1))
                self.pos = v.end()
                if self.peek(","):
                    self.pos += 1
                    continue
                self.expect(":")
                break
        return m.group(1), bound

    def body(self) -> object:
        start = self.pos
        items = [self.conj()]
        while self.peek(OR, "|"):
            self.pos += len(self.peek(OR, "|"))
            items.append(self.conj())
        return items[0] if len(items) == 1 else _Or(tuple(items), start)

    def conj(self) -> object:
        items = [self.unary()]
        while self.peek(AND, "&"):
            self.pos += len(self.peek(AND, "&"))
            items.append(self.unary())
        return items[0] if len(items) == 1 else _And(tuple(items))

    def unary(self) -> object:
        token = self.peek(NOT, "!", "(")
        if token in (NOT, "!"):
            start = self.pos
            self.pos += len(token)
            return _Not(self.unary(), start)
        if token == "(":
            self.pos += 1
            inner = self.body()
            self.expect(")")
            return inner
        return self.atom()

    def atom(self) -> _Atom:
        self.skip_ws()
        start = self.pos
        m = _QUOTED.match(self.text, self.pos)
        if m:
            relation = json.loads(m.group(0))
        else:
            m = _NAME.match(self.text, self.pos)
            if not m:
                raise self.error("Se esperaba el nombre de una relación")
            relation = m.group(0)
        self.pos = m.end()
        self.expect("(")
        left = self.arg()
        self.expect(",")
        right = self.arg()
        self.expect(")")
        return _Atom(relation, left, right, start)

    def arg(self) -> _Arg:
        self.skip_ws()
        m = _QUOTED.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return _Arg(json.loads(m.group(0)), True)
        m = _RAW_ARG.match(self.text, self.pos)
        if not m or not m.group(0).strip():
            raise self.error("Se esperaba un argumento")
        self.pos = m.end()
        return _Arg(m.group(0).strip(), False)


# ------------------------------ Reducción ----------------------------------- #

class _Lowering:
    """Convierte el AST en árbol ``FolNode`` partiendo de la variable libre."""

    def __init__(self, text: str, variables: Set[str]) -> None:
        self.text = text
        self.variables = variables
        self.anchor_names: List[str] = []
        self.relation_names: List[str] = []

    def is_var(self, arg: _Arg) -> bool:
        return not arg.quoted and (arg.text in self.variables or bool(_IMPLICIT_VAR.match(arg.text)))

    def mentions(self, item: object, var: str) -> bool:
        if isinstance(item, _Atom):
            return any(self.is_var(a) and a.text == var for a in (item.left, item.right))
        if isinstance(item, _Not):
            return self.mentions(item.inner, var)
        return any(self.mentions(i, var) for i in item.items)

    def build(self, var: str, pool: List[object]) -> FolNode:
        mine = [item for item in pool if self.mentions(item, var)]
        if not mine:
            raise FolSyntaxError(f"La variable {var!r} no tiene restricciones", 0, self.text)
        for item in mine:
            pool.remove(item)
        parts = [self.lower(item, var, pool) for item in mine]
        return parts[0] if len(parts) == 1 else Intersection(tuple(parts))

    def lower(self, item: object, var: str, pool: List[object]) -> FolNode:
        if isinstance(item, _Atom):
            if self.is_var(item.right) and item.right.text == var:
                other, direction = item.left, Direction.FORWARD
            else:
                other, direction = item.right, Direction.INVERSE
            if self.is_var(other):
                if other.text == var:
                    raise FolSyntaxError("Átomo reflexivo sobre una variable", item.position, self.text)
                child = self.build(other.text, pool)
            else:
                self.anchor_names.append(other.text)
                child = Anchor(len(self.anchor_names) - 1)
            self.relation_names.append(item.relation)
            return Projection(child, len(self.relation_names) - 1, direction)
        if isinstance(item, _Not):
            return Negation(self.lower(item.inner, var, pool))
        if isinstance(item, _Or):
            return Union(tuple(self.lower_group(alt, var) for alt in item.items))
        return self.lower_group(item, var)

    def lower_group(self, item: object, var: str) -> FolNode:
        items = list(item.items) if isinstance(item, _And) else [item]
        node = self.build(var, items)
        if items:
            raise FolSyntaxError("Subfórmula no conectada con su variable", 0, self.text)
        return node


def _renumber(root: FolNode, anchors: Sequence[str],
              relations: Sequence[str]) -> Tuple[FolNode, Tuple[str, ...], Tuple[str, ...]]:
    """Renumera los slots en post-orden y reordena los nombres en consecuencia."""
    order_a = [n.slot for n in iter_postorder(root) if isinstance(n, Anchor)]
    order_r = [n.slot for n in iter_postorder(root) if isinstance(n, Projection)]
    map_a = {old: new for new, old in enumerate(order_a)}
    map_r = {old: new for new, old in enumerate(order_r)}

    def walk(node: FolNode) -> FolNode:
        if isinstance(node, Anchor):
            return Anchor(map_a[node.slot])
        if isinstance(node, Projection):
            return Projection(walk(node.child), map_r[node.slot], node.direction)
        if isinstance(node, Negation):
            return Negation(walk(node.child))
        kids = tuple(walk(c) for c in node.children)
        return Intersection(kids) if isinstance(node, Intersection) else Union(kids)

    return (walk(root), tuple(anchors[i] for i in order_a), tuple(relations[i] for i in order_r))


def parse_fol(text: str) -> FolQuery:
    """Analiza una consulta FOL textual y la convierte en ``FolQuery``.

    Parameters
    ----------
    text : str
        Consulta en la gramática del catálogo, p. ej. ``"q =?a : R(A, a)"``.

    Returns
    -------
    FolQuery
        Árbol con slots en post-orden y el patrón reconocido.

    Raises
    ------
    FolSyntaxError
        Error de sintaxis (con posición).
    UnknownPatternError
        La forma no coincide con ninguno de los 14 patrones.
    """
    parser = _Parser(text)
    free, bound = parser.header()
    formula = parser.body()
    parser.skip_ws()
    if parser.pos != len(text):
        raise parser.error("Texto sobrante tras la fórmula")

    lowering = _Lowering(text, {free, *bound})
    pool = list(formula.items) if isinstance(formula, _And) else [formula]
    root = lowering.build(free, pool)
    if pool:
        leftover = pool[0]
        position = getattr(leftover, "position", 0)
        raise FolSyntaxError("Átomo no alcanzable desde la variable libre", position, text)

    try:
        validate_tree(root)
    except FolContractError as exc:
        raise UnknownPatternError(f"Forma de consulta no catalogada: {exc}") from exc
    root, anchors, relations = _renumber(root, lowering.anchor_names, lowering.relation_names)
    tag = match_pattern(root)
    if tag is None:
        raise UnknownPatternError("La forma de la consulta no coincide con ningún patrón del catálogo")
    return FolQuery(pattern=tag, root=root, anchors=anchors, relations=relations)


# ------------------------------- Formato ------------------------------------ #

def _quote(value: str, variables: Set[str]) -> str:
    needs = (not value or value != value.strip() or any(ch in _RESERVED for ch in value)
             or value in variables or _IMPLICIT_VAR.match(value) is not None)
    return json.dumps(value, ensure_ascii=False) if needs else value


def _quote_name(value: str) -> str:
    """Nombre de relación tal cual si es un token ``NAME``; si no, entre comillas."""
    return value if _NAME.fullmatch(value) else json.dumps(value, ensure_ascii=False)


def format_fol(
    q: FolQuery,
    entity_label: Optional[Callable[[str], str]] = None,
    relation_label: Optional[Callable[[str], str]] = None,
    ascii: bool = False,
    api_label: Optional[Callable[[str, Direction], str]] = None,
) -> str:
    """Forma textual canónica de ``q``.

    Los átomos se emiten en post-orden de las proyecciones. ``entity_label``
    y ``relation_label`` permiten sustituir los nombres crudos (por ejemplo,
    por etiquetas legibles).

    Con ``api_label`` cada átomo se escribe como llamada ``api(entrada,
    salida)`` con el nombre que devuelve para su relación y sentido; el
    texto resultante ya no conserva el sentido de la tripleta.
    """
    validate_tree(q.root)
    spec = CATALOG.get(q.pattern)
    sym = {k: (_ASCII[k] if ascii else k) for k in (AND, OR, NOT, EXISTS)}
    ent = entity_label or (lambda s: s)
    rel = relation_label or (lambda s: s)

    # Nodos que producen una variable ligada: entradas no-ancla de una proyección
    var_nodes = [n.child for n in iter_postorder(q.root)
                 if isinstance(n, Projection) and not isinstance(n.child, Anchor)]
    free = spec.free_var if spec else "x"
    letters = list(spec.bound_vars) if spec and len(spec.bound_vars) == len(var_nodes) else \
        [c for c in "abcdefghijklmnopqrstuvw" if c != free][: len(var_nodes)]
    names: Dict[int, str] = {id(n): letters[i] for i, n in enumerate(var_nodes)}
    variables = {free, *letters}

    def atom(node: Projection, source: str, target: str) -> str:
        relation = q.relations[node.slot]
        if api_label is not None:
            return f"{_quote_name(api_label(relation, node.direction))}({source}, {target})"
        left, right = (source, target) if node.direction is Direction.FORWARD else (target, source)
        return f"{_quote_name(rel(relation))}({left}, {right})"

    def conjuncts(node: FolNode, var: str) -> List[str]:
        if isinstance(node, Projection):
            if isinstance(node.child, Anchor):
                return [atom(node, _quote(ent(q.anchors[node.child.slot]), variables), var)]
            inner = names[id(node.child)]
            return conjuncts(node.child, inner) + [atom(node, inner, var)]
        if isinstance(node, Intersection):
            return [c for child in node.children for c in conjuncts(child, var)]
        if isinstance(node, Negation):
            if not isinstance(node.child, Projection):
                raise FolContractError("Solo se puede negar una proyección")
            parts = conjuncts(node.child, var)
            return parts[:-1] + [sym[NOT] + parts[-1]]
        if isinstance(node, Union):
            alts = []
            for child in node.children:
                parts = conjuncts(child, var)
                alts.append(parts[0] if len(parts) == 1 else "(" + f" {sym[AND]} ".join(parts) + ")")
            return ["(" + f" {sym[OR]} ".join(alts) + ")"]
        raise FolContractError("Un ancla no puede ser la raíz de la consulta")

    parts = conjuncts(q.root, free)
    if len(parts) == 1 and isinstance(q.root, Union):
        parts = [parts[0][1:-1]]
    body = f" {sym[AND]} ".join(parts)
    prefix = f"q =?{free} : "
    if letters:
        prefix += f"{sym[EXISTS]} {', '.join(letters)} : "
    return prefix + body
