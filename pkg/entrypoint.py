import json
import logging
import math
from pathlib import Path

import click
import gin
from logfmter import Logfmter

from entroflow.config import json_schema, load_config
from entroflow.errors import ConfigError
from entroflow.protocols import Verdict, run_experiment

datefmt = "%Y.%m.%d.%a.%H-%M-%S"
formatter = Logfmter(
    keys=[
        "ts",
        "lvl",
        "at",
        "lno",
    ],
    mapping={
        "ts": "asctime",
        "lvl": "levelname",
        "at": "pathname",
        "lno": "lineno",
    },
    datefmt=datefmt,
)
handler = logging.StreamHandler()
handler.setFormatter(formatter)


logging.basicConfig(handlers=[handler], level=logging.WARN)

GIN_DIR = Path(__file__).resolve().parent / "gin"
DEFAULT_CONFIG = GIN_DIR / "benchmark.gin"

_gin_loaded: dict[str, bool] = {}  # Module-level cache to track loaded configurations


def load_gin(config_path: str | Path = DEFAULT_CONFIG) -> None:
    """Parses one gin file; parse errors become ConfigError with file:line."""
    path = Path(config_path).resolve()
    cache_key = str(path)

    # If this exact configuration was already loaded, return early
    if cache_key in _gin_loaded:
        return

    if not path.exists():
        raise ConfigError("config file not found", [str(path)])
    gin.clear_config()
    _gin_loaded.clear()
    try:
        with gin.unlock_config():
            gin.add_config_file_search_path(str(path.parent))
            gin.parse_config_files_and_bindings([str(path)], [])
    except SyntaxError as exc:
        where = f"{exc.filename or path}:{exc.lineno}"
        raise ConfigError("cannot parse config", [f"{where}: {exc.msg}"]) from exc
    except (ValueError, OSError) as exc:
        raise ConfigError("cannot parse config", [f"{path}: {exc}"]) from exc
    _gin_loaded[cache_key] = True


def rebind_parameters(**kwargs):
    parameter_mapping = {
        "out_dir": "entroflow.config.factors.out_dir",
        "seed": "entroflow.config.particles.seed",
    }

    succeeded_rebindings = {}
    with gin.unlock_config():
        for key, value in kwargs.items():
            if value is not None and key in parameter_mapping:
                gin.bind_parameter(parameter_mapping[key], value)
                succeeded_rebindings[key] = value
    if succeeded_rebindings:
        # the next load must reparse instead of reusing these overrides
        _gin_loaded.clear()
        logging.warning({"msg": "Rebound", **succeeded_rebindings})


def _fmt(value: float | None) -> str:
    return "-" if value is None or not math.isfinite(value) else f"{value:.3e}"


def _print_table(verdict: Verdict) -> None:
    for name, check in sorted(verdict.checks.items()):
        click.echo(
            f"{check.status.upper():<8} {name:<24} {check.equation:<20} {_fmt(check.metric):>11} {_fmt(check.tolerance):>11}"
        )
    for warning in verdict.warnings:
        click.echo(f"warning: {warning}")
    click.echo("PASS" if not verdict.failed else f"FAIL ({', '.join(verdict.failed)})")


def _run(ctx: click.Context, config: str, out: str | None, seed: int | None, stages: list[str] | None) -> None:
    try:
        load_gin(config)
        rebind_parameters(out_dir=out, seed=seed)
        experiment_config = load_config()
        verdict = run_experiment(experiment_config, stages)
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        ctx.exit(2)
    _print_table(verdict)
    ctx.exit(verdict.exit_code)


def run_options(func):
    func = click.option("--seed", type=int, default=None, help="Override particles.seed.")(func)
    func = click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory.")(
        func
    )
    func = click.option(
        "--config",
        "config",
        type=click.Path(dir_okay=False),
        default=str(DEFAULT_CONFIG),
        show_default=True,
        help="gin config file.",
    )(func)
    return func


def _stage_command(name: str, stages: list[str] | None, help_text: str) -> click.Command:
    @click.command(name, help=help_text)
    @run_options
    @click.pass_context
    def command(ctx, config, out, seed):
        _run(ctx, config, out, seed, stages)

    return command


solve = _stage_command("solve", ["solve"], "Solve the PDE (and its perturbed variant); mass and anchor checks.")
simulate = _stage_command("simulate", ["simulate"], "Run the reflected particle ensemble and its decomposition checks.")
verify = _stage_command("verify", ["verify"], "Entropy dissipation identities and the flow-map check.")
slopes = _stage_command("slopes", ["slopes"], "Wasserstein speed and entropy slope checks.")
hwi = _stage_command("hwi", ["hwi"], "HWI chain, geodesic and displacement checks.")
run_all = _stage_command("all", None, "Every stage.")


@click.command("schema")
def schema():
    """Print the JSON schema equivalent of the gin factors."""
    click.echo(json.dumps(json_schema(), indent=2, sort_keys=True))


@click.command("history")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
def history(out):
    """List the experiments recorded under an output directory."""
    from entroflow.analysis import history_frame

    frame = history_frame(out)
    if frame.empty:
        click.echo("no experiments recorded")
        return
    click.echo(frame.to_string(index=False))


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG.")
def cli(verbose):
    if verbose:
        logging.getLogger().setLevel(logging.INFO if verbose == 1 else logging.DEBUG)


cli.add_command(solve)
cli.add_command(simulate)
cli.add_command(verify)
cli.add_command(slopes)
cli.add_command(hwi)
cli.add_command(run_all)
cli.add_command(schema)
cli.add_command(history)


if __name__ == "__main__":
    cli()
