from pathlib import Path

import numpy as np
import pytest

from src.data.kg_store import KnowledgeGraph

AWARD = "/award/award_winner/awards_won"
FIELD = "/people/person/field"
UNIVERSITY = "/people/person/university"

TOY_TRIPLES = [
    ("alice", AWARD, "turing"),
    ("bob", AWARD, "turing"),
    ("carol", AWARD, "turing"),
    ("alice", FIELD, "dl"),
    ("bob", FIELD, "dl"),
    ("carol", FIELD, "db"),
    ("alice", UNIVERSITY, "mit"),
    ("bob", UNIVERSITY, "stanford"),
    ("carol", UNIVERSITY, "mit"),
    ("dave", UNIVERSITY, "stanford"),
]

TOY_NAMES = {
    "alice": "Alice",
    "bob": "Bob",
    "turing": "Turing Award",
    "dl": "Deep Learning",
    "mit": "MIT",
}


def make_synthetic_kg(n_entities=200, n_relations=8, n_triples=1000, seed=0, self_loops=False):
    """Grafo aleatorio con relaciones estilo FB15k (``/tipo/tipo/relación``)."""
    rng = np.random.default_rng(seed)
    heads = rng.integers(n_entities, size=n_triples)
    rels = rng.integers(n_relations, size=n_triples)
    tails = rng.integers(n_entities, size=n_triples)
    triples = [
        (f"e{h}", f"/type{r % 3}/type{(r + 1) % 3}/rel{r}", f"e{t}")
        for h, r, t in zip(heads, rels, tails)
        if self_loops or h != t
    ]
    return KnowledgeGraph.from_triples(triples)


def write_tsv(path: Path, triples) -> Path:
    path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples), encoding="utf-8")
    return path


@pytest.fixture
def toy_kg():
    return KnowledgeGraph.from_triples(TOY_TRIPLES, names=TOY_NAMES)


@pytest.fixture(scope="session")
def synthetic_kg():
    return make_synthetic_kg()


@pytest.fixture
def toy_tsv(tmp_path):
    return write_tsv(tmp_path / "toy.tsv", TOY_TRIPLES)


@pytest.fixture
def synthetic_tsv(tmp_path):
    g = make_synthetic_kg(n_entities=120, n_triples=800, seed=3)
    triples = [(g.entity_name(t.head), g.relation_name(t.relation), g.entity_name(t.tail))
               for t in g.triples()]
    return write_tsv(tmp_path / "synthetic.tsv", triples)


@pytest.fixture(scope="session")
def spaced_kg():
    """Grafo sintético cuyas relaciones llevan espacios y paréntesis."""
    g = make_synthetic_kg(n_entities=150, n_triples=900, seed=4)
    rename = {
        r: (f"located in {r.rsplit('/', 1)[-1]}" if i % 2 == 0
            else f"born in ({r.rsplit('/', 1)[-1]})")
        for i, r in enumerate(g.relations)
    }
    triples = [(g.entity_name(t.head), rename[g.relation_name(t.relation)], g.entity_name(t.tail))
               for t in g.triples()]
    return KnowledgeGraph.from_triples(triples)
