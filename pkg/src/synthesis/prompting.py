"""Carga de las plantillas de prompt (archivos .txt editables)."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from string import Template

PROMPTS_DIR = Path(__file__).resolve().parent / "prompts"


@lru_cache(maxsize=None)
def load_prompt(name: str) -> Template:
    """Devuelve ``prompts/<name>.txt`` como ``string.Template`` (``$campo``)."""
    path = PROMPTS_DIR / f"{name}.txt"
    if not path.exists():
        raise FileNotFoundError(f"No existe la plantilla de prompt: {path}")
    return Template(path.read_text(encoding="utf-8"))
