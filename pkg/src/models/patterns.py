"""Catálogo de los 14 patrones de consulta FOL.

Cada patrón define la forma del árbol (slots numerados en post-orden), las
letras de variable usadas en su forma textual y la longitud de su cadena
de ejecución.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from src.errors import UnknownPatternError
from src.models.fol_core import (
    Anchor,
    FolNode,
    FolQuery,
    Intersection,
    Negation,
    Projection,
    Union,
    iter_postorder,
    shape,
    validate_tree,
)

PATTERN_TAGS: Tuple[str, ...] = (
    "1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up",
    "2in", "3in", "inp", "pin", "pni",
)


def _a(slot: int) -> Anchor:
    return Anchor(slot)


def _p(child: FolNode, slot: int) -> Projection:
    return Projection(child, slot)


@dataclass(frozen=True)
class PatternSpec:
    """Forma sin instanciar de un patrón y sus letras de variable."""

    tag: str
    root: FolNode
    free_var: str
    bound_vars: Tuple[str, ...] = ()

    @property
    def n_anchors(self) -> int:
        return sum(isinstance(n, Anchor) for n in iter_postorder(self.root))

    @property
    def n_relations(self) -> int:
        return sum(isinstance(n, Projection) for n in iter_postorder(self.root))

    @property
    def chain_length(self) -> int:
        # La negación se funde en la intersección que la contiene.
        return sum(isinstance(n, (Projection, Intersection, Union))
                   for n in iter_postorder(self.root))

    @property
    def has_negation(self) -> bool:
        return any(isinstance(n, Negation) for n in iter_postorder(self.root))

    def template(self) -> FolQuery:
        """Consulta con anclas ``A, B, C`` y relaciones ``Rel_1 …``."""
        return FolQuery(
            pattern=self.tag,
            root=self.root,
            anchors=tuple("ABC"[: self.n_anchors]),
            relations=tuple(f"Rel_{i + 1}" for i in range(self.n_relations)),
        )


_SPECS = (
    PatternSpec("1p", _p(_a(0), 0), "a"),
    PatternSpec("2p", _p(_p(_a(0), 0), 1), "b", ("a",)),
    PatternSpec("3p", _p(_p(_p(_a(0), 0), 1), 2), "c", ("a", "b")),
    PatternSpec("2i", Intersection((_p(_a(0), 0), _p(_a(1), 1))), "c"),
    PatternSpec("3i", Intersection((_p(_a(0), 0), _p(_a(1), 1), _p(_a(2), 2))), "e"),
    PatternSpec("pi", Intersection((_p(_p(_a(0), 0), 1), _p(_a(1), 2))), "d", ("a",)),
    PatternSpec("ip", _p(Intersection((_p(_a(0), 0), _p(_a(1), 1))), 2), "d", ("c",)),
    PatternSpec("2u", Union((_p(_a(0), 0), _p(_a(1), 1))), "c"),
    PatternSpec("up", _p(Union((_p(_a(0), 0), _p(_a(1), 1))), 2), "d", ("c",)),
    PatternSpec("2in", Intersection((_p(_a(0), 0), Negation(_p(_a(1), 1)))), "d"),
    PatternSpec("3in", Intersection((_p(_a(0), 0), _p(_a(1), 1),
                                     Negation(_p(_a(2), 2)))), "f"),
    PatternSpec("inp", _p(Intersection((_p(_a(0), 0), Negation(_p(_a(1), 1)))), 2),
                "e", ("d",)),
    PatternSpec("pin", Intersection((_p(_p(_a(0), 0), 1), Negation(_p(_a(1), 2)))),
                "e", ("a",)),
    PatternSpec("pni", Intersection((Negation(_p(_p(_a(0), 0), 1)), _p(_a(1), 2))),
                "e", ("a",)),
)

CATALOG: Dict[str, PatternSpec] = {spec.tag: spec for spec in _SPECS}

_BY_SHAPE: Dict[str, str] = {shape(spec.root, canonical=True): spec.tag for spec in _SPECS}

for _spec in _SPECS:
    validate_tree(_spec.root)
assert tuple(CATALOG) == PATTERN_TAGS


def get_pattern(tag: str) -> PatternSpec:
    try:
        return CATALOG[tag]
    except KeyError:
        raise UnknownPatternError(
            f"Patrón desconocido: {tag!r}. Patrones válidos: {', '.join(PATTERN_TAGS)}"
        ) from None


def pattern_index(tag: str) -> int:
    get_pattern(tag)
    return PATTERN_TAGS.index(tag)


def match_pattern(root: FolNode) -> Optional[str]:
    """Etiqueta del patrón cuya forma coincide con ``root`` (o ``None``)."""
    return _BY_SHAPE.get(shape(root, canonical=True))
