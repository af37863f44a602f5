"""Configuración efectiva del pipeline.

Precedencia: flags de CLI > archivo YAML (``--config``) > entorno
(``KG2TOOL_<CAMPO>``, y ``LLM_*`` para el endpoint) > valores por defecto.
La semilla es obligatoria: no hay valor por defecto basado en el reloj.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from src.data.dataset_io import FORMATS
from src.errors import ConfigError, InputFileError
from src.models.patterns import PATTERN_TAGS
from src.tools.llm_client import LlmSettings

ENV_PREFIX = "KG2TOOL_"
TRANSLATORS = ("template", "llm")
UNITS = ("pair", "record")


@dataclass(frozen=True)
class PipelineConfig:
    kg: Optional[str] = None
    names: Optional[str] = None
    patterns: Tuple[str, ...] = PATTERN_TAGS
    per_pattern: int = 10
    pool_size: Optional[int] = None
    seed: Optional[int] = None
    translator: str = "template"
    api_mode: str = "template"
    distractors: int = 3
    answer_cap: int = 100
    review_prob: float = 0.3
    format: str = "sharegpt-jsonl"
    out: Optional[str] = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    sample_unit: str = "pair"
    split: float = 0.0
    figures: Optional[str] = None
    lenient: bool = False
    llm: LlmSettings = field(default_factory=LlmSettings)

    @property
    def effective_pool(self) -> int:
        return max(self.pool_size or 0, self.per_pattern)

    def validate(self, require_seed: bool = True) -> List[str]:
        """Mensajes por campo (lista vacía si la configuración es válida)."""
        errors: List[str] = []
        unknown = [p for p in self.patterns if p not in PATTERN_TAGS]
        if unknown:
            errors.append(f"patterns: patrones desconocidos {unknown}")
        if not self.patterns:
            errors.append("patterns: lista vacía")
        if require_seed and self.seed is None:
            errors.append("seed: obligatorio (use --seed)")
        if self.per_pattern < 1:
            errors.append(f"per_pattern: debe ser >= 1 (recibido {self.per_pattern})")
        if self.pool_size is not None and self.pool_size < 1:
            errors.append(f"pool_size: debe ser >= 1 (recibido {self.pool_size})")
        if self.translator not in TRANSLATORS:
            errors.append(f"translator: use {' | '.join(TRANSLATORS)}")
        if self.api_mode not in TRANSLATORS:
            errors.append(f"api_mode: use {' | '.join(TRANSLATORS)}")
        if self.distractors < 0:
            errors.append("distractors: debe ser >= 0")
        if self.answer_cap < 1:
            errors.append("answer_cap: debe ser >= 1")
        if not 0.0 <= self.review_prob <= 1.0:
            errors.append("review_prob: debe estar en [0, 1]")
        if self.format not in FORMATS:
            errors.append(f"format: use {' | '.join(FORMATS)}")
        if self.workers < 1:
            errors.append("workers: debe ser >= 1")
        if self.sample_unit not in UNITS:
            errors.append(f"sample_unit: use {' | '.join(UNITS)}")
        if not 0.0 <= self.split < 1.0:
            errors.append("split: debe estar en [0, 1)")
        return errors

    def check(self, require_seed: bool = True) -> "PipelineConfig":
        errors = self.validate(require_seed)
        if errors:
            raise ConfigError(errors)
        return self

    def to_manifest(self) -> Dict[str, Any]:
        """Configuración efectiva para el manifiesto (sin rutas de salida ni secretos)."""
        return {
            "patterns": list(self.patterns),
            "per_pattern": self.per_pattern,
            "pool_size": self.effective_pool,
            "seed": self.seed,
            "translator": self.translator,
            "api_mode": self.api_mode,
            "distractors": self.distractors,
            "answer_cap": self.answer_cap,
            "review_prob": self.review_prob,
            "format": self.format,
            "sample_unit": self.sample_unit,
            "split": self.split,
            "llm_model": self.llm.model,
        }


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig) if f.name != "llm"}
_LLM_FIELDS = {f.name for f in dataclasses.fields(LlmSettings)}


def _coerce(name: str, value: Any) -> Any:
    """Convierte valores de texto (entorno/YAML) al tipo del campo."""
    if value is None:
        return None
    try:
        if name == "patterns":
            if isinstance(value, str):
                return tuple(p.strip() for p in value.split(",") if p.strip())
            return tuple(str(p) for p in value)
        if name in ("per_pattern", "pool_size", "seed", "distractors", "answer_cap", "workers"):
            return int(value)
        if name in ("review_prob", "split"):
            return float(value)
        if name == "lenient":
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "si", "sí")
            return bool(value)
    except (TypeError, ValueError):
        raise ConfigError([f"{name}: valor no válido {value!r}"]) from None
    return str(value)


def from_env(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    env = os.environ if environ is None else environ
    values = {}
    for name in _FIELDS:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw not in (None, ""):
            values[name] = _coerce(name, raw)
    return values


def from_yaml(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """(valores del pipeline, valores de ``llm``) leídos de un YAML."""
    p = Path(path)
    if not p.exists():
        raise InputFileError(f"No existe el archivo de configuración: {p}")
    with open(p, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"config: se esperaba un mapeo en {p}"])
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    llm = data.pop("llm", None) or {}
    unknown = sorted(set(data) - set(_FIELDS)) + sorted(f"llm.{k}" for k in set(llm) - _LLM_FIELDS)
    if unknown:
        raise ConfigError([f"config: claves desconocidas {unknown}"])
    return {k: _coerce(k, v) for k, v in data.items()}, dict(llm)


def load_config(
    flags: Optional[Mapping[str, Any]] = None,
    config_path: Optional[Union[str, Path]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Combina las fuentes respetando la precedencia; no valida."""
    values: Dict[str, Any] = from_env(environ)
    llm_values: Dict[str, Any] = {}
    if config_path:
        file_values, llm_values = from_yaml(config_path)
        values.update(file_values)
    for name, value in (flags or {}).items():
        if name in _FIELDS and value is not None:
            values[name] = _coerce(name, value)
    llm = LlmSettings.from_env(environ, **llm_values)
    return PipelineConfig(**values, llm=llm)
