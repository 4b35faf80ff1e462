import json

import pytest
from click.testing import CliRunner

from entrypoint import GIN_DIR, cli

STATIONARY = GIN_DIR / "stationary.gin"


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def broken_config(tmp_path, extra: str):
    path = tmp_path / "broken.gin"
    path.write_text(STATIONARY.read_text() + "\n" + extra + "\n")
    return path


def test_invalid_factor_exits_2(runner, tmp_path):
    path = broken_config(tmp_path, 'perturbation.kind = "cosine"\nperturbation.k = 1.5')
    result = invoke(runner, "all", "--config", path, "--out", tmp_path / "out")
    assert result.exit_code == 2
    assert "perturbation.k" in result.output
    assert not (tmp_path / "out" / "verdict.json").exists()


def test_gin_syntax_error_exits_2(runner, tmp_path):
    path = broken_config(tmp_path, "grid.n_cells = = 5")
    result = invoke(runner, "solve", "--config", path, "--out", tmp_path / "out")
    assert result.exit_code == 2
    assert "broken.gin" in result.output


def test_solve_stage(runner, tmp_path):
    result = invoke(runner, "solve", "--config", STATIONARY, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert set(verdict["checks"]) == {"mass", "anchors"}
    for artifact in ("pde-summary.json", "p0.csv", "p_end.csv", "p_end.json", "snapshots.csv", "operative-config.json"):
        assert (tmp_path / artifact).exists()


def test_stationary_passes(runner, tmp_path):
    """Uniform p0 is a fixed point; every identity holds with zero residual."""
    result = invoke(runner, "all", "--config", STATIONARY, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert verdict["schema"] == 1
    assert verdict["status"] == "pass"
    assert verdict["exp_name"] == "stationary"
    statuses = {c["status"] for c in verdict["checks"].values()}
    assert statuses <= {"pass", "skipped"}
    assert verdict["checks"]["conditional-rate"]["status"] == "skipped"
    assert verdict["checks"]["flow-map-halving"]["status"] == "pass"
    assert verdict["checks"]["cross-term-mc"]["status"] == "skipped"

    history = invoke(runner, "history", "--out", tmp_path)
    assert "stationary" in history.output


def test_reproducible_verdict(runner, tmp_path):
    for name in ("a", "b"):
        result = invoke(runner, "all", "--config", STATIONARY, "--out", tmp_path / name, "--seed", 11)
        assert result.exit_code == 0, result.output
    first = (tmp_path / "a" / "verdict.json").read_bytes()
    assert first == (tmp_path / "b" / "verdict.json").read_bytes()
    assert json.loads(first)["config"]["particles"]["seed"] == 11


def test_schema(runner):
    result = invoke(runner, "schema")
    assert result.exit_code == 0
    assert "time_stepping" in json.loads(result.output)["properties"]


@pytest.mark.slow
def test_benchmark(runner, tmp_path):
    result = invoke(runner, "all", "--config", GIN_DIR / "benchmark.gin", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    names = (
        "Eq4",
        "Eq8-martingale",
        "Eq8-decomposition",
        "Eq8-perturbed-mean-F",
        "cross-term-mc",
        "Eq19",
        "FW",
        "FWp",
        "HWI",
        "flow-map",
        "flow-map-halving",
    )
    for name in names:
        assert verdict["checks"][name]["status"] == "pass", name
