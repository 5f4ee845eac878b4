"""Command-line interface for the discrete normal approximation toolkit."""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from click import Choice, Context, echo, group, option, pass_context
from click import Path as PathType

from .config import DEFAULT_SEED, load_config, serialize_report
from .errors import DomainError, exit_code_for
from .harness import draw_replicates, emit_report, run_convergence_experiment
from .lattice_gaussian import dn_pmf, dn_sample
from .models import DnParams, ExperimentConfig
from .numerics import make_rng
from .services import create_service
from .stein_bounds import corollary_rate
from .tv_distance import tv_empirical_vs_dn, tv_exact_vs_dn

logger = logging.getLogger(__name__)


def _guarded(body: Callable[[], Any]) -> None:
    """Run a command body, mapping failures to exit codes with the message on stderr."""
    try:
        body()
    except Exception as e:  # noqa: BLE001
        code = exit_code_for(e)
        if code == 1:
            logger.exception("unexpected failure")
        echo(f"error: {e}", err=True)
        sys.exit(code)


def _json_arg(text: str, name: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DomainError(f"--{name} is not valid JSON: {e}") from e


def _params(mu: str, sigma: str) -> DnParams:
    return DnParams.from_arrays(_json_arg(mu, "mu"), _json_arg(sigma, "sigma"))


def _output(ctx: Context, text: str) -> None:
    out: Optional[Path] = ctx.obj["out"]
    if out is None:
        echo(text, nl=not text.endswith("\n"))
        return
    try:
        out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    except OSError as e:
        raise DomainError(f"Cannot write output to '{out}': {e}") from e


def _experiment(ctx: Context) -> ExperimentConfig:
    """The --config experiment with global flags applied on top."""
    path = ctx.obj["config"]
    if path is None:
        raise DomainError("this command needs --config")
    config = load_config(path)
    overrides = {
        key: ctx.obj[key] for key in ("seed", "format") if ctx.obj[key] is not None
    }
    if ctx.obj["out"] is not None:
        overrides["output"] = ctx.obj["out"]
    return config.model_copy(update=overrides)


def _service(ctx: Context, size: Optional[float]):
    config = _experiment(ctx)
    model = config.model if size is None else config.model.at_size(size)
    return config, create_service(model)


def _seed(ctx: Context) -> int:
    return ctx.obj["seed"] if ctx.obj["seed"] is not None else DEFAULT_SEED


def _rows(samples: np.ndarray, fmt: Optional[str]) -> str:
    if fmt == "csv":
        return "".join(",".join(str(int(v)) for v in row) + "\n" for row in samples)
    return "".join(json.dumps([int(v) for v in row]) + "\n" for row in samples)


@group()
@option("--seed", type=int, default=None, help="Root seed (overrides the config)")
@option("--config", "config_path", type=PathType(path_type=Path), default=None, help="Experiment config (.toml or .json)")
@option("--out", type=PathType(path_type=Path), default=None, help="Output file (default stdout)")
@option("--format", "fmt", type=Choice(["csv", "json"]), default=None, help="Output format")
@option("--threads", type=int, default=1, help="Worker threads; results do not depend on it")
@option("--log-level", default="warning", help="Log level")
@pass_context
def cli(
    ctx: Context,
    seed: Optional[int],
    config_path: Optional[Path],
    out: Optional[Path],
    fmt: Optional[str],
    threads: int,
    log_level: str,
) -> None:
    """Discrete normal approximation toolkit."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {
        "seed": seed,
        "config": config_path,
        "out": out,
        "format": fmt,
        "threads": max(1, threads),
    }


@cli.group()
def dn():
    """Discrete normal distribution commands."""
    pass


@dn.command()
@option("--mu", required=True, help="Mean vector as JSON")
@option("--sigma", required=True, help="Covariance matrix as JSON")
@option("--z", "point", required=True, help="Integer point as JSON")
@pass_context
def pmf(ctx: Context, mu: str, sigma: str, point: str) -> None:
    """Probability DN_d(mu, sigma) assigns to one integer point."""

    def body() -> None:
        params = _params(mu, sigma)
        value = dn_pmf(params, _json_arg(point, "z"), rng=make_rng(_seed(ctx)))
        _output(ctx, repr(float(value)))

    _guarded(body)


@dn.command()
@option("--mu", required=True, help="Mean vector as JSON")
@option("--sigma", required=True, help="Covariance matrix as JSON")
@option("--count", type=int, default=1, help="Number of draws")
@pass_context
def sample(ctx: Context, mu: str, sigma: str, count: int) -> None:
    """Draw integer vectors from DN_d(mu, sigma)."""

    def body() -> None:
        if count < 1:
            raise DomainError(f"--count must be positive, got {count}")
        draws = dn_sample(_params(mu, sigma), make_rng(_seed(ctx)), size=count)
        _output(ctx, _rows(np.atleast_2d(draws), ctx.obj["format"]))

    _guarded(body)


@cli.command()
@option("--size", type=float, default=None, help="Model size (default: as configured)")
@pass_context
def tv(ctx: Context, size: Optional[float]) -> None:
    """TV distance between the configured model and its DN target."""

    def body() -> None:
        config, service = _service(ctx, size)
        rng = make_rng(config.seed)
        if service.has_exact_pmf():
            estimate = tv_exact_vs_dn(
                service.exact_pmf(), service.dn_target(), config.epsilon_tail, rng.derive(2)
            )
        else:
            samples = draw_replicates(
                service, rng.derive(0), config.replicates, ctx.obj["threads"]
            )
            estimate = tv_empirical_vs_dn(
                samples,
                service.dn_target(samples),
                config.epsilon_tail,
                config.n_bootstrap,
                rng.derive(1),
            )
        _output(ctx, serialize_report(estimate.model_dump()))

    _guarded(body)


@cli.command()
@option("--size", type=float, default=None, help="Model size (default: as configured)")
@option("--d", "dimension", type=int, default=None, help="Dimension, for a direct evaluation")
@option("--m", type=float, default=None, help="Normalization m")
@option("--dbar2", type=float, default=None, help="Mean squared neighbourhood size")
@option("--gamma", type=float, default=1.0, help="Third-moment constant gamma")
@option("--eps-w", "eps_w", type=float, default=None, help="Smoothness coefficient")
@pass_context
def bound(
    ctx: Context,
    size: Optional[float],
    dimension: Optional[int],
    m: Optional[float],
    dbar2: Optional[float],
    gamma: float,
    eps_w: Optional[float],
) -> None:
    """Rate-expression breakdown, from raw inputs or for the configured model."""

    def body() -> None:
        if dimension is not None:
            if m is None or dbar2 is None or eps_w is None:
                raise DomainError("--d needs --m, --dbar2 and --eps-w")
            breakdown = corollary_rate(dimension, m, dbar2, gamma, eps_w)
        else:
            _, service = _service(ctx, size)
            breakdown = service.bound_breakdown()
            if breakdown is None:
                raise DomainError(f"no bound breakdown for {type(service).__name__}")
        _output(ctx, serialize_report(breakdown.model_dump()))

    _guarded(body)


@cli.group()
def model():
    """Model commands."""
    pass


@model.command()
@option("--size", type=float, default=None, help="Model size (default: as configured)")
@pass_context
def moments(ctx: Context, size: Optional[float]) -> None:
    """Mean and covariance of the configured model's W."""

    def body() -> None:
        config, service = _service(ctx, size)
        estimate = service.moments()
        if estimate is None:
            raise DomainError(
                f"{type(service).__name__} has no closed-form moments; use 'model sample'"
            )
        _output(ctx, serialize_report(estimate.model_dump()))

    _guarded(body)


@model.command(name="sample")
@option("--size", type=float, default=None, help="Model size (default: as configured)")
@option("--count", type=int, default=1, help="Number of draws")
@pass_context
def model_sample(ctx: Context, size: Optional[float], count: int) -> None:
    """Draw realizations of the configured model's W."""

    def body() -> None:
        if count < 1:
            raise DomainError(f"--count must be positive, got {count}")
        config, service = _service(ctx, size)
        draws = draw_replicates(service, make_rng(config.seed), count, ctx.obj["threads"])
        _output(ctx, _rows(draws, ctx.obj["format"]))

    _guarded(body)


@cli.group()
def experiment():
    """Convergence experiment commands."""
    pass


@experiment.command()
@pass_context
def run(ctx: Context) -> None:
    """Run the configured convergence experiment and emit its report."""

    def body() -> None:
        config = _experiment(ctx)
        report = run_convergence_experiment(config, threads=ctx.obj["threads"])
        text = emit_report(report, config.format, config.output)
        if config.output is None:
            echo(text, nl=False)

    _guarded(body)


if __name__ == "__main__":
    cli()
