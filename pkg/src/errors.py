"""Jerarquía de errores del sintetizador con códigos legibles por máquina.

Cada error de dominio hereda de `SynthesisError` y expone:

- ``code``: código estable (p. ej. ``E_FORMAT``) que la CLI imprime como
  ``error[<CODE>]: <mensaje>``.
- ``exit_status``: 1 para fallos de validación/uso, 2 para fallos de
  integridad.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Union


class SynthesisError(Exception):
    """Error base del proyecto."""

    code = "E_SYNTHESIS"
    exit_status = 1


class InputFileError(SynthesisError, FileNotFoundError):
    code = "E_INPUT"


class MalformedLineError(SynthesisError, ValueError):
    """Línea del archivo de tripletas que no cumple ``head<TAB>rel<TAB>tail``."""

    code = "E_FORMAT"

    def __init__(self, path: Union[str, Path], line_number: int, line: str,
                 reason: str = "se esperaban 3 columnas separadas por tabulador") -> None:
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"Línea mal formada en {self.path}:{line_number}: {line!r} ({reason})")


class EmptyGraphError(SynthesisError, ValueError):
    code = "E_FORMAT"


class UnknownIdError(SynthesisError, KeyError):
    """Entidad o relación que no existe en el grafo cargado."""

    code = "E_DOMAIN"

    def __str__(self) -> str:  # KeyError pone comillas alrededor del mensaje
        return str(self.args[0]) if self.args else ""


class FolContractError(SynthesisError, ValueError):
    code = "E_CONTRACT"


class FolSyntaxError(SynthesisError, ValueError):
    """Error de sintaxis en una consulta FOL; incluye la posición (0-based)."""

    code = "E_SYNTAX"

    def __init__(self, message: str, position: int, text: str = "") -> None:
        self.position = position
        self.text = text
        super().__init__(f"{message} (posición {position})")


class UnknownPatternError(SynthesisError, ValueError):
    code = "E_PATTERN"


class OracleGuardError(SynthesisError, ValueError):
    code = "E_ORACLE_GUARD"


class SampleShortfallError(SynthesisError, RuntimeError):
    """No se alcanzó el número pedido de muestras únicas."""

    code = "E_SHORTFALL"

    def __init__(
        self,
        pattern: str,
        requested: int,
        attempts: int,
        successes: int,
        duplicates: int,
    ) -> None:
        self.pattern = pattern
        self.requested = requested
        self.attempts = attempts
        self.successes = successes
        self.duplicates = duplicates
        super().__init__(
            f"Patrón {pattern}: solo {successes - duplicates} muestras únicas de "
            f"{requested} tras {attempts} intentos ({duplicates} duplicadas)"
        )


class MissingApiError(SynthesisError, KeyError):
    code = "E_API"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ToolsetError(SynthesisError, ValueError):
    code = "E_API"


class OfflineModeError(SynthesisError, RuntimeError):
    """El endpoint LLM no está configurado: el llamador debe usar plantillas."""

    code = "E_OFFLINE"


class LlmError(SynthesisError, RuntimeError):
    code = "E_LLM"


class IntegrityError(SynthesisError, RuntimeError):
    """Inconsistencia entre el grafo, las muestras o el dataset exportado."""

    code = "E_INTEGRITY"
    exit_status = 2


class UnverifiedPairError(IntegrityError):
    pass


class DatasetShortfallError(SynthesisError, ValueError):
    code = "E_SHORTFALL"

    def __init__(self, pattern: str, requested: int, available: int) -> None:
        self.pattern = pattern
        self.requested = requested
        self.available = available
        super().__init__(
            f"Patrón {pattern}: se pidieron {requested} elementos pero solo hay {available}"
        )


class ConfigError(SynthesisError, ValueError):
    """Configuración inválida; ``messages`` trae un mensaje por campo."""

    code = "E_CONFIG"

    def __init__(self, messages: Iterable[str]) -> None:
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class ExportError(SynthesisError, ValueError):
    code = "E_EXPORT"

    def __init__(self, message: str, record_id: Optional[str] = None) -> None:
        self.record_id = record_id
        prefix = f"[{record_id}] " if record_id else ""
        super().__init__(prefix + message)


class UnknownApiError(IntegrityError):
    """Un camino de solución nombra una API que no está en su catálogo."""

    code = "E_API"
