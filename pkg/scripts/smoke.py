"""Smoke test del pipeline: grafo sintético → synth → verify."""

import os

import numpy as np

from src.pipeline.integrator import main

KG_PATH = "data/raw/smoke_kg.tsv"
OUT_PATH = "data/processed/smoke.jsonl"


def write_smoke_graph(path: str, n_entities: int = 300, n_triples: int = 2000, seed: int = 0) -> str:
    """Grafo aleatorio con relaciones de la forma ``/tipo/tipo/relación``."""
    rng = np.random.default_rng(seed)
    heads = rng.integers(n_entities, size=n_triples)
    rels = rng.integers(8, size=n_triples)
    tails = rng.integers(n_entities, size=n_triples)
    kinds = ("person", "film", "place")
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in zip(heads, rels, tails):
            if h != t:
                f.write(f"m.{h}\t/{kinds[r % 3]}/{kinds[(r + 1) % 3]}/rel_{r}\tm.{t}\n")
    return path


def main_smoke() -> None:
    """Genera un dataset pequeño y lo audita contra el grafo."""
    os.makedirs("data/raw", exist_ok=True)
    kg = write_smoke_graph(KG_PATH)

    # 1) Síntesis (todos los patrones, 2 pares por patrón)
    code = main(["synth", "--kg", kg, "--per-pattern", "2", "--seed", "0", "--out", OUT_PATH])
    if code != 0:
        raise SystemExit(code)

    # 2) Verificación
    raise SystemExit(main(["verify", "--kg", kg, "--out", OUT_PATH]))


if __name__ == "__main__":
    main_smoke()
