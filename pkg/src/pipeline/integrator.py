"""Coordinación de módulos para la síntesis por CLI.

Flujo (``synth``)
-----------------
1) Lectura del grafo (TSV) → índices directo/inverso
2) Derivación del catálogo de APIs (plantilla o LLM)
3) Muestreo de consultas por patrón (autotestigo: raíz ∈ respuestas)
4) Traducción a lenguaje natural, plan y ejecución de la cadena de APIs
5) Registros de instrucción → muestreo por patrón → exportación JSONL

Subcomandos: ``sample``, ``gen-apis``, ``synth``, ``verify``, ``stats``.
Salida: 0 éxito, 1 error de validación, 2 error de integridad.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

from src.data.dataset_io import export, file_digest, parse_export, read_manifest
from src.data.kg_store import KnowledgeGraph, format_stats, load_entity_names, load_triples, stats
from src.errors import ConfigError, ExportError, IntegrityError, SynthesisError
from src.models.sampler import SamplingReport, collect_samples, dump_samples
from src.pipeline.config import PipelineConfig, load_config
from src.synthesis.instruction_builder import (
    Dataset,
    assemble_dataset,
    build_pair,
    count_records,
    records_for_pair,
    verify_record,
)
from src.tools.api_gen import ApiCatalog, derive_catalog
from src.tools.llm_client import LlmClient

logger = logging.getLogger(__name__)

DEFAULT_DATASET = "data/processed/kg2tool.jsonl"
DEFAULT_SAMPLES = "data/processed/samples.jsonl"
DEFAULT_APIS = "data/processed/apis.jsonl"


def load_graph(cfg: PipelineConfig) -> KnowledgeGraph:
    if not cfg.kg:
        raise ConfigError(["kg: obligatorio (use --kg)"])
    names = load_entity_names(cfg.names) if cfg.names else None
    return load_triples(cfg.kg, lenient=cfg.lenient, names=names)


def make_client(cfg: PipelineConfig) -> Optional[LlmClient]:
    """Cliente LLM solo si algún paso lo pide; sin endpoint cae a plantillas."""
    if "llm" in (cfg.translator, cfg.api_mode):
        return LlmClient(cfg.llm)
    return None


def run_sample(cfg: PipelineConfig, g: KnowledgeGraph) -> Tuple[str, List[SamplingReport]]:
    reports = [
        collect_samples(g, pattern, cfg.per_pattern, cfg.seed,
                        answer_cap=cfg.answer_cap, workers=cfg.workers)
        for pattern in cfg.patterns
    ]
    path = dump_samples([s for r in reports for s in r.samples], cfg.out or DEFAULT_SAMPLES)
    return path, reports


def run_gen_apis(cfg: PipelineConfig, g: KnowledgeGraph, client=None) -> Tuple[str, ApiCatalog]:
    catalog = derive_catalog(g, cfg.api_mode, client, workers=cfg.workers)
    return catalog.dump(cfg.out or DEFAULT_APIS), catalog


def run_synth(cfg: PipelineConfig, g: KnowledgeGraph, client=None) -> Tuple[str, str, Dataset]:
    """Pipeline completo; devuelve (ruta, sha256, dataset)."""
    catalog = derive_catalog(g, cfg.api_mode, client, workers=cfg.workers)
    groups: Dict[str, List[list]] = {}
    flagged = 0

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for pattern in cfg.patterns:
            report = collect_samples(g, pattern, cfg.effective_pool, cfg.seed,
                                     answer_cap=cfg.answer_cap, workers=cfg.workers)
            pairs = list(pool.map(
                lambda s: build_pair(g, s, catalog, cfg.translator, client), report.samples))
            flagged += sum(p.nl.flagged for p in pairs)
            groups[pattern] = list(pool.map(
                lambda p: records_for_pair(g, p, catalog, cfg.distractors,
                                           cfg.review_prob, cfg.seed),
                pairs,
            ))
            logger.info("Patrón %s: %d pares listos", pattern, len(pairs))

    dataset = assemble_dataset(
        groups, cfg.per_pattern, cfg.seed, unit=cfg.sample_unit, split=cfg.split,
        manifest_extra={
            "kg_digest": g.source_digest,
            "flagged_translations": flagged,
            "flagged_apis": len(catalog.flagged),
            "config": cfg.to_manifest(),
        },
    )
    path, digest = export(dataset, cfg.format, cfg.out or DEFAULT_DATASET)
    return path, digest, dataset


def run_verify(cfg: PipelineConfig, g: KnowledgeGraph) -> Tuple[int, Dict[str, List[str]]]:
    """Reconstruye y compara cada registro exportado.

    Raises
    ------
    IntegrityError
        Ante cualquier discrepancia de registros, manifiesto o digest.
    """
    path = cfg.out or DEFAULT_DATASET
    try:
        records = parse_export(path, cfg.format)
    except ExportError as exc:
        raise IntegrityError(f"Dataset ilegible: {exc}") from None

    failures: Dict[str, List[str]] = {}
    for record in records:
        try:
            problems = verify_record(g, record)
        except SynthesisError as exc:
            problems = [f"error[{exc.code}]: {exc}"]
        if problems:
            failures[record.record_id] = problems
            logger.warning("Registro %s no verifica: %s", record.record_id, "; ".join(problems))

    manifest = read_manifest(path)
    if manifest.get("sha256") != file_digest(path):
        failures.setdefault("<manifest>", []).append("sha256 distinto del manifiesto")
    if manifest.get("counts") != count_records(records):
        failures.setdefault("<manifest>", []).append("conteos distintos del manifiesto")

    if failures:
        first = next(iter(failures))
        raise IntegrityError(
            f"{len(failures)} elementos no verifican (primero: {first}: {failures[first][0]})"
        )
    return len(records), failures


# ------------------------------------------------------------------------- #

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kg", default=None, help="Archivo de tripletas head<TAB>rel<TAB>tail")
    p.add_argument("--names", default=None, help="Tabla opcional id<TAB>nombre legible")
    p.add_argument("--lenient", action="store_true", default=None,
                   help="Omite (y registra) las líneas mal formadas")
    p.add_argument("--config", default=None, help="Archivo YAML de configuración")
    p.add_argument("--workers", type=int, default=None, help="Hilos de trabajo")
    p.add_argument("--log-level", default="INFO", help="DEBUG | INFO | WARNING | ERROR")


def _add_sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patterns", default=None, help="Patrones separados por comas (p. ej. 1p,2i)")
    p.add_argument("--per-pattern", type=int, default=None, help="Muestras por patrón")
    p.add_argument("--seed", type=int, default=None, help="Semilla (obligatoria)")
    p.add_argument("--answer-cap", type=int, default=None, help="Máximo de respuestas por consulta")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kg2tool",
        description="Síntesis de datos de uso de herramientas a partir de un grafo de conocimiento.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="Instancia consultas FOL y guarda las muestras (JSONL)")
    _add_common(p)
    _add_sampling(p)
    p.add_argument("--out", default=None, help=f"Salida (por defecto {DEFAULT_SAMPLES})")
    p.add_argument("--figures", default=None, help="Directorio para figuras de diagnóstico")

    p = sub.add_parser("gen-apis", help="Deriva el catálogo de APIs del grafo")
    _add_common(p)
    p.add_argument("--api-mode", choices=("template", "llm"), default=None)
    p.add_argument("--out", default=None, help=f"Salida (por defecto {DEFAULT_APIS})")

    p = sub.add_parser("synth", help="Pipeline completo hasta el dataset exportado")
    _add_common(p)
    _add_sampling(p)
    p.add_argument("--translator", choices=("template", "llm"), default=None)
    p.add_argument("--api-mode", choices=("template", "llm"), default=None)
    p.add_argument("--distractors", type=int, default=None, help="APIs distractoras por registro")
    p.add_argument("--review-prob", type=float, default=None, help="Probabilidad de revisión por paso")
    p.add_argument("--format", choices=("sharegpt-jsonl", "alpaca-jsonl"), default=None)
    p.add_argument("--out", default=None, help=f"Salida (por defecto {DEFAULT_DATASET})")
    p.add_argument("--pool-size", type=int, default=None, help="Pares generados por patrón antes del sorteo")
    p.add_argument("--sample-unit", choices=("pair", "record"), default=None)
    p.add_argument("--split", type=float, default=None, help="Fracción marcada como validation")

    p = sub.add_parser("verify", help="Audita un dataset exportado contra el grafo")
    _add_common(p)
    p.add_argument("--format", choices=("sharegpt-jsonl", "alpaca-jsonl"), default=None)
    p.add_argument("--out", default=None, help="Dataset a verificar")

    p = sub.add_parser("stats", help="Resumen del grafo y, si se indica, del dataset")
    _add_common(p)
    p.add_argument("--out", default=None, help="Dataset exportado (lee su manifiesto)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Punto de entrada CLI; devuelve el código de salida."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)-8s %(message)s",
    )
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}

    try:
        cfg = load_config(flags, args.config)
        cfg.check(require_seed=args.command in ("sample", "synth"))
        g = load_graph(cfg)

        if args.command == "sample":
            path, reports = run_sample(cfg, g)
            print(f"Muestras: {sum(len(r.samples) for r in reports)} en {path}")
            if cfg.figures:
                from src.visualizations.histograms import plot_all

                for fig in plot_all(reports, cfg.figures):
                    print(f"  {fig}")
        elif args.command == "gen-apis":
            path, catalog = run_gen_apis(cfg, g, make_client(cfg))
            print(f"APIs: {len(catalog)} ({len(catalog.flagged)} marcadas) en {path}")
        elif args.command == "synth":
            path, digest, dataset = run_synth(cfg, g, make_client(cfg))
            print(f"Registros: {len(dataset.records)}")
            print("Archivos guardados en:")
            print(f"  {path}")
            print(f"  {path}.manifest.json")
            print(f"sha256: {digest}")
        elif args.command == "verify":
            n, _ = run_verify(cfg, g)
            print(f"Verificados {n} registros: sin discrepancias")
        else:
            print(format_stats(stats(g)))
            if cfg.out:
                print(json.dumps(read_manifest(cfg.out).get("counts", {}), indent=2))
    except SynthesisError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    except (FileNotFoundError, ValueError) as exc:
        print(f"error[E_INPUT]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
