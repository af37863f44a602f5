import json

import pytest

from src.data.dataset_io import file_digest, read_manifest
from src.pipeline import integrator
from src.pipeline.integrator import main
from src.tools.llm_client import LlmClient

from tests.conftest import TOY_TRIPLES, write_tsv

PATTERNS = "1p,2i,2in"


def _synth(kg, out, *extra):
    return main(["synth", "--kg", str(kg), "--patterns", PATTERNS, "--per-pattern", "2",
                 "--seed", "7", "--out", str(out), *extra])


def test_synth_then_verify(tmp_path, synthetic_tsv, capsys):
    """synth escribe dataset y manifiesto; verify los acepta."""
    out = tmp_path / "data.jsonl"
    assert _synth(synthetic_tsv, out, "--workers", "2") == 0
    stdout = capsys.readouterr().out
    assert "Archivos guardados en:" in stdout
    manifest = read_manifest(out)
    assert manifest["sha256"] == file_digest(out)
    assert manifest["counts"]["pairs"] == {"1p": 2, "2i": 2, "2in": 2}
    assert manifest["config"]["seed"] == 7

    assert main(["verify", "--kg", str(synthetic_tsv), "--out", str(out)]) == 0
    assert "sin discrepancias" in capsys.readouterr().out


def test_tampered_response_fails_verification(tmp_path, synthetic_tsv, capsys):
    """Cambiar una respuesta de herramienta → código 2."""
    out = tmp_path / "data.jsonl"
    assert _synth(synthetic_tsv, out, "--review-prob", "0") == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        obj = json.loads(line)
        if obj["meta"]["kind"] == "trajectory":
            obj["conversations"][3]["value"] = json.dumps(["nobody"])
            lines[i] = json.dumps(obj, ensure_ascii=False)
            break
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    capsys.readouterr()

    assert main(["verify", "--kg", str(synthetic_tsv), "--out", str(out)]) == 2
    assert "error[E_INTEGRITY]" in capsys.readouterr().err


def test_worker_count_does_not_change_digest(tmp_path, synthetic_tsv):
    """Mismo dataset con 1 y 4 hilos."""
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert _synth(synthetic_tsv, a, "--workers", "1") == 0
    assert _synth(synthetic_tsv, b, "--workers", "4") == 0
    assert file_digest(a) == file_digest(b)


def test_alpaca_format_round_trip(tmp_path, synthetic_tsv):
    """verify también acepta Alpaca indicando el formato."""
    out = tmp_path / "alpaca.jsonl"
    assert _synth(synthetic_tsv, out, "--format", "alpaca-jsonl", "--split", "0.3") == 0
    assert main(["verify", "--kg", str(synthetic_tsv), "--out", str(out),
                 "--format", "alpaca-jsonl"]) == 0


def test_missing_seed_is_a_validation_error(synthetic_tsv, capsys):
    """Sin --seed: código 1 y mensaje por campo."""
    code = main(["synth", "--kg", str(synthetic_tsv), "--patterns", "1p"])
    assert code == 1
    err = capsys.readouterr().err
    assert "error[E_CONFIG]" in err and "seed" in err


def test_missing_kg(capsys):
    """Sin --kg no hay grafo que leer."""
    assert main(["stats"]) == 1
    assert "kg" in capsys.readouterr().err


def test_malformed_kg(tmp_path, capsys):
    """Una línea con dos columnas se rechaza en modo estricto."""
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tr\tb\nc\td\n", encoding="utf-8")
    assert main(["stats", "--kg", str(bad)]) == 1
    assert "error[E_FORMAT]" in capsys.readouterr().err
    assert main(["stats", "--kg", str(bad), "--lenient"]) == 0


def test_invalid_utf8_kg(tmp_path, capsys):
    """Bytes no UTF-8: E_FORMAT con número de línea; --lenient los omite."""
    bad = tmp_path / "bad_utf8.tsv"
    bad.write_bytes(b"a\tr\tb\nc\tr\t\xff\nb\tr\tc\n")
    assert main(["stats", "--kg", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "error[E_FORMAT]" in err and ":2:" in err
    assert main(["stats", "--kg", str(bad), "--lenient"]) == 0
    assert "triples: 2" in capsys.readouterr().out


def test_stats(tmp_path, capsys):
    """Resumen del grafo de juguete."""
    kg = write_tsv(tmp_path / "toy.tsv", TOY_TRIPLES)
    assert main(["stats", "--kg", str(kg)]) == 0
    out = capsys.readouterr().out
    assert "triples: 10" in out and "relations: 3" in out


def test_sample_and_figures(tmp_path, synthetic_tsv):
    """sample guarda las muestras y, con --figures, una figura por patrón."""
    out = tmp_path / "samples.jsonl"
    figures = tmp_path / "figures"
    code = main(["sample", "--kg", str(synthetic_tsv), "--patterns", "1p,pi", "--per-pattern",
                 "3", "--seed", "1", "--out", str(out), "--figures", str(figures)])
    assert code == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 6
    assert (figures / "sampling_1p.png").exists()
    assert (figures / "sampling_pi.png").exists()


def test_gen_apis(tmp_path, synthetic_tsv):
    """gen-apis escribe las APIs lógicas más dos por relación."""
    out = tmp_path / "apis.jsonl"
    assert main(["gen-apis", "--kg", str(synthetic_tsv), "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [r["name"] for r in rows[:3]] == ["get_intersection_of", "get_union_of",
                                             "get_negation_of"]
    assert (len(rows) - 3) % 2 == 0


@pytest.mark.parametrize("argv", [["synth", "--translator", "bogus"], []])
def test_argparse_errors_exit(argv):
    """Argumentos inválidos terminan con SystemExit."""
    with pytest.raises(SystemExit):
        main(argv)


class _CountingSession:
    def __init__(self):
        self.posts = 0

    def post(self, *args, **kwargs):
        self.posts += 1
        raise AssertionError("no se esperaba tráfico de red")


def test_llm_modes_without_endpoint_stay_offline(tmp_path, synthetic_tsv, monkeypatch):
    """translator=llm y api-mode=llm sin endpoint: cero llamadas y todo marcado."""
    for var in ("LLM_BASE_URL", "LLM_MODEL", "LLM_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    session = _CountingSession()
    clients = []

    def offline_client(cfg):
        client = LlmClient(cfg.llm, session=session)
        clients.append(client)
        return client

    monkeypatch.setattr(integrator, "make_client", offline_client)
    out = tmp_path / "offline.jsonl"
    assert _synth(synthetic_tsv, out, "--translator", "llm", "--api-mode", "llm") == 0

    assert session.posts == 0
    assert len(clients) == 1 and clients[0].calls == 0
    manifest = read_manifest(out)
    assert manifest["flagged_translations"] == 6
    assert manifest["flagged_apis"] > 0
    assert manifest["config"]["translator"] == "llm"
    assert main(["verify", "--kg", str(synthetic_tsv), "--out", str(out)]) == 0
