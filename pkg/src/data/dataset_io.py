"""Exportación del dataset de instrucciones en JSONL (ShareGPT o Alpaca).

Formatos
--------
sharegpt-jsonl : {"conversations": [{"from", "value"}, ...], "meta": {...}}
alpaca-jsonl   : {"system", "instruction", "output", "meta": {..., "history"}}

Junto al archivo se escribe ``<out>.manifest.json`` con los conteos y el
SHA-256 del dataset exportado.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

from src.errors import ExportError, InputFileError
from src.synthesis.instruction_builder import Dataset, InstructionRecord, Turn

logger = logging.getLogger(__name__)

FORMATS = ("sharegpt-jsonl", "alpaca-jsonl")

TO_SHAREGPT = {"system": "system", "user": "human", "assistant": "gpt", "tool": "observation"}
FROM_SHAREGPT = {v: k for k, v in TO_SHAREGPT.items()}


def manifest_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def file_digest(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"Formato no soportado: {fmt!r}. Use {' | '.join(FORMATS)}")


def to_line(record: InstructionRecord, fmt: str) -> dict:
    """Objeto JSON de una línea del formato ``fmt``."""
    turns = record.turns
    if fmt == "sharegpt-jsonl":
        return {
            "conversations": [{"from": TO_SHAREGPT[t.role], "value": t.content} for t in turns],
            "meta": record.meta(),
        }
    history = [{"from": TO_SHAREGPT[t.role], "value": t.content} for t in turns[2:-1]]
    return {
        "system": turns[0].content,
        "instruction": turns[1].content,
        "output": turns[-1].content,
        "meta": {**record.meta(), "history": history},
    }


def from_line(obj: dict, fmt: str) -> InstructionRecord:
    if fmt == "sharegpt-jsonl":
        turns = [Turn(FROM_SHAREGPT[c["from"]], c["value"]) for c in obj["conversations"]]
        return InstructionRecord.from_parts(turns, obj["meta"])
    meta = dict(obj["meta"])
    history = meta.pop("history", [])
    turns = ([Turn("system", obj["system"]), Turn("user", obj["instruction"])]
             + [Turn(FROM_SHAREGPT[h["from"]], h["value"]) for h in history]
             + [Turn("assistant", obj["output"])])
    return InstructionRecord.from_parts(turns, meta)


def export(dataset: Dataset, fmt: str, path: Union[str, Path]) -> Tuple[str, str]:
    """Escribe el dataset (un registro por línea) y su manifiesto.

    Returns
    -------
    tuple
        (ruta_dataset, sha256)

    Raises
    ------
    ExportError
        Si un registro no es serializable; indica su id.
    """
    _check_format(fmt)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for record in dataset.records:
            try:
                line = json.dumps(to_line(record, fmt), ensure_ascii=False)
            except (TypeError, ValueError) as exc:
                raise ExportError(f"registro no serializable: {exc}", record.record_id) from None
            f.write(line + "\n")

    digest = file_digest(out)
    manifest = {**dataset.manifest, "format": fmt, "file": out.name, "sha256": digest}
    with open(manifest_path(out), "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
        f.write("\n")
    logger.info("Dataset exportado: %s (%d registros, sha256=%s)",
                out, len(dataset.records), digest[:12])
    return str(out), digest


def parse_export(path: Union[str, Path], fmt: str) -> List[InstructionRecord]:
    """Lee un archivo exportado.

    Raises
    ------
    InputFileError
        Si el archivo no existe.
    ExportError
        Si una línea no es un objeto válido del formato (indica el número de línea).
    """
    _check_format(fmt)
    p = Path(path)
    if not p.exists():
        raise InputFileError(f"No existe el dataset: {p}")
    records: List[InstructionRecord] = []
    with open(p, "r", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(from_line(json.loads(line), fmt))
            except (ValueError, KeyError, TypeError) as exc:
                raise ExportError(f"línea {n} ilegible: {exc!r}") from None
    return records


def read_manifest(path: Union[str, Path]) -> Dict:
    mp = manifest_path(path)
    if not mp.exists():
        raise InputFileError(f"No existe el manifiesto: {mp}")
    with open(mp, "r", encoding="utf-8") as f:
        return json.load(f)
