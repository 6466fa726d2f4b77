import json
import logging
import os
import sys
from pathlib import Path

import click
import tomlkit.exceptions
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from paircam import __version__
from paircam import io as pcio
from paircam.config_parser import ConfigParser
from paircam.exceptions import (
    AllNonPositiveError,
    InvalidGridError,
    NoFilepathError,
    NonConvergenceError,
    NonPositiveLogArgumentError,
    PaircamError,
    TruncationError,
    UnsupportedConfigFormatError,
)
from paircam.fit import fit_double_gaussian, profile_table
from paircam.grid import PixelGrid
from paircam.oracle import run_oracle_query
from paircam.pipeline import Experiment, ExperimentConfig
from paircam.reconstruct import finalize
from paircam.selftest import run_selftest

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

CONFIG_ERRORS = (
    ValidationError,
    UnsupportedConfigFormatError,
    NoFilepathError,
    InvalidGridError,
    json.JSONDecodeError,
    tomlkit.exceptions.ParseError,
)
NUMERICAL_ERRORS = (
    TruncationError,
    NonPositiveLogArgumentError,
    AllNonPositiveError,
    NonConvergenceError,
)


def _load_config(config_file, seed=None) -> ExperimentConfig:
    config = dict(ConfigParser(filepath=config_file).config)
    if seed is not None:
        config["seed"] = seed
    source_model = config.get("source_model") or {}
    if source_model.get("kind") == "gamma_csv" and "path" in source_model:
        path = Path(source_model["path"])
        if not path.is_absolute():
            path = Path(config_file).parent / path
        config["source_model"] = dict(source_model, path=str(path))
    return ExperimentConfig.parse_obj(config)


def _emit(document, as_json):
    """Machine-readable results go to standard output only in --json mode."""
    if as_json:
        click.echo(json.dumps(document, indent=2, sort_keys=True, default=str))
    else:
        for key, value in document.items():
            logger.info(f"{key}: {value}")


config_option = click.option(
    "-c",
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Experiment configuration (`.json` or `.toml`).",
)
out_option = click.option(
    "-o",
    "--out",
    "output_dir",
    type=click.Path(file_okay=False),
    envvar="PAIRCAM_OUT",
    default=None,
    help="Output directory (default: configured one, else the working directory).",
)
threads_option = click.option(
    "-n",
    "--threads",
    type=click.IntRange(min=1),
    default=None,
    help="Number of worker processes (default: all available CPUs).",
)
json_option = click.option(
    "--json", "as_json", is_flag=True, help="Print results as JSON on standard output."
)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
def cli(verbose):
    """Reconstruct photon-pair joint distributions from simulated camera frames."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command()
@config_option
@out_option
@click.option("-s", "--seed", type=click.IntRange(0, 2**64 - 1), default=None)
@threads_option
@json_option
def simulate(config_file, output_dir, seed, threads, as_json):
    """Simulate a frame stack with its ground truth and manifest."""
    config = _load_config(config_file, seed=seed)
    experiment = Experiment(
        config, output_dir=output_dir, num_cpu=threads, show_progress=not as_json
    )
    paths = experiment.simulate()
    _emit({key: str(path) for key, path in paths.items()}, as_json)


@cli.command()
@click.argument("stack", type=click.Path(exists=True, dir_okay=False))
@config_option
@out_option
@click.option(
    "--truth",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Ground-truth Γ CSV to compare with (default: next to the stack).",
)
@threads_option
@json_option
def reconstruct(stack, config_file, output_dir, truth, threads, as_json):
    """Accumulate a frame stack and reconstruct Γ̂."""
    config = _load_config(config_file)
    experiment = Experiment(
        config, output_dir=output_dir, num_cpu=threads, show_progress=not as_json
    )
    if truth is None:
        bundled = Path(stack).parent / "gamma_truth.csv"
        truth = bundled if bundled.exists() else None
    truth_jd = pcio.read_gamma(truth) if truth else None

    accumulator = experiment.accumulate(stack)
    result, fit, report = experiment.reconstruct(accumulator, truth=truth_jd)
    experiment.write_reconstruction(result, fit, report)
    _emit(report, as_json)


@cli.command()
@click.argument("query", type=click.File("rt"))
def oracle(query):
    """Evaluate an oracle query (JSON file, or `-` for standard input)."""
    click.echo(json.dumps(run_oracle_query(json.load(query)), indent=2))


@cli.command()
@click.argument("gamma_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--pitch", type=float, default=13.0, help="Pixel pitch in µm.")
@click.option("--mask-diagonal", is_flag=True, help="Leave the diagonal out.")
@click.option(
    "--column", "columns", type=int, multiple=True, help="Profile column (repeatable)."
)
@out_option
@json_option
def fit(gamma_csv, pitch, mask_diagonal, columns, output_dir, as_json):
    """Fit the double-Gaussian model to a Γ̂ CSV."""
    matrix = pcio.read_matrix_csv(gamma_csv)
    grid = PixelGrid(n_pixels=len(matrix), pitch=pitch)
    result = finalize(matrix)
    fitted = fit_double_gaussian(result, grid, mask_diagonal=mask_diagonal)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        table = profile_table(result, grid, columns or [grid.n_pixels // 2], fitted)
        table.to_csv(
            Path(output_dir) / "profiles.csv", index=False, float_format="%.17g"
        )
    _emit(fitted.to_report(), as_json)


@cli.command()
@click.option("--full", is_flag=True, help="Add the end-to-end Monte Carlo runs.")
@threads_option
@json_option
def selftest(full, threads, as_json):
    """Run the built-in consistency checks."""
    results = run_selftest(full=full, num_cpu=threads)
    _emit({r.name: {"passed": r.passed, "detail": r.detail} for r in results}, as_json)
    if not all(r.passed for r in results):
        sys.exit(EXIT_NUMERICAL)


def main():
    logging.basicConfig(
        format="%(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        level=logging.INFO,
        handlers=[
            RichHandler(
                rich_tracebacks=True,
                console=Console(stderr=True),
                show_level=True,
                show_path=False,
            )
        ],
    )

    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except ValidationError as e:
        for error in e.errors():
            location = ".".join(str(part) for part in error["loc"])
            logger.critical(f"Invalid configuration at `{location}`: {error['msg']}")
        sys.exit(EXIT_CONFIG)
    except CONFIG_ERRORS as e:
        logger.critical(f"Invalid configuration: {e}")
        sys.exit(EXIT_CONFIG)
    except NUMERICAL_ERRORS as e:
        logger.critical(f"Numerical failure: {e}")
        sys.exit(EXIT_NUMERICAL)
    except (PaircamError, OSError) as e:
        logger.critical(str(e))
        sys.exit(EXIT_DATA)


if __name__ == "__main__":
    main()
