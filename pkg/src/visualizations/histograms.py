"""Figuras de diagnóstico del muestreo (por defecto en reports/figures)."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.models.sampler import SamplingReport

DEFAULT_DIR = Path("reports") / "figures"


def plot_sampling_report(report: SamplingReport, out_dir: Union[str, Path] = DEFAULT_DIR) -> str:
    """Histograma de tamaños de respuesta + barras de etapas de fallo."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, (ax_sizes, ax_fail) = plt.subplots(1, 2, figsize=(10, 4))

    sizes = report.answer_sizes
    ax_sizes.hist(sizes, bins=min(30, max(1, len(set(sizes)))), color="tab:blue")
    ax_sizes.set_title(f"{report.pattern}: tamaño del conjunto de respuestas")
    ax_sizes.set_xlabel("respuestas")
    ax_sizes.set_ylabel("muestras")

    stages = sorted(report.failures)
    ax_fail.bar(stages, [report.failures[s] for s in stages], color="tab:red")
    ax_fail.set_title(f"fallos ({report.attempts} intentos, éxito {report.success_rate:.0%})")
    ax_fail.tick_params(axis="x", rotation=30)

    fig.tight_layout()
    path = out / f"sampling_{report.pattern}.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return str(path)


def plot_success_rates(reports: Sequence[SamplingReport], out_dir: Union[str, Path] = DEFAULT_DIR) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar([r.pattern for r in reports], [r.success_rate for r in reports], color="tab:green")
    ax.set_ylim(0, 1)
    ax.set_ylabel("tasa de éxito")
    ax.set_title("Éxito de instanciación por patrón")
    fig.tight_layout()
    path = out / "sampling_success.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return str(path)


def plot_all(reports: Sequence[SamplingReport], out_dir: Union[str, Path] = DEFAULT_DIR) -> List[str]:
    return [plot_sampling_report(r, out_dir) for r in reports] + [plot_success_rates(reports, out_dir)]
