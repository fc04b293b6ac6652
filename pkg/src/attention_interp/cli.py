"""Command-line entry point: ``attn-interp <subcommand> [flags]``.

Every subcommand builds a sweep config from ``--config`` (key=value lines)
and the flags given on the command line, runs it, prints one line per row,
and exits 0 only if every row passed.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .harness import ConfigError, build_config, parse_config_text, run_sweep

COMMON = [
    click.option("--n", type=int, default=None, help="Sequence length."),
    click.option("--d", type=int, default=None, help="Token dimension."),
    click.option("--p", type=int, default=None, help="Number of anchors."),
    click.option("--heads", type=int, default=None, help="Heads (or hidden units for three-layer)."),
    click.option("--a", type=float, default=None, help="Lower end of the output range."),
    click.option("--b", type=float, default=None, help="Upper end of the output range."),
    click.option("--epsilon", type=float, default=None, help="Accuracy or softmax budget."),
    click.option("--beta", type=float, default=None, help="Temperature override (must meet the floor)."),
    click.option("--g", type=int, default=None, help="Input-grid granularity."),
    click.option("--delta", type=float, default=None, help="Bump sharpness."),
    click.option("--samples", type=int, default=None, help="Inputs per trial."),
    click.option("--trials", type=int, default=None, help="Trials per axis value."),
    click.option("--seed", type=int, default=None, help="Master seed."),
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="key=value file; flags override it."),
    click.option("--out-csv", type=click.Path(dir_okay=False), default=None),
    click.option("--out-svg", type=click.Path(dir_okay=False), default=None),
]


def common_options(fn):
    for opt in reversed(COMMON):
        fn = opt(fn)
    return fn


def _run(experiment: str | None, config_path, flags: dict, sweep: bool = False) -> None:
    try:
        file_values = parse_config_text(Path(config_path).read_text()) if config_path else {}
        overrides = dict(flags)
        if experiment is not None:
            overrides["experiment"] = experiment
        cfg = build_config(file_values, overrides)
        if sweep:
            cfg.require_values()
        rows = run_sweep(cfg, progress=_echo_row)
    except (ConfigError, OSError) as exc:
        raise click.UsageError(str(exc))
    except ValueError as exc:
        # builders reject parameters such as a temperature below the floor
        raise click.UsageError(f"invalid parameters: {exc}")
    failed = sum(not r.passed for r in rows)
    click.echo(f"{len(rows) - failed}/{len(rows)} rows passed")
    sys.exit(0 if failed == 0 else 1)


def _echo_row(row) -> None:
    status = "PASS" if row.passed else "FAIL"
    click.echo(f"{status} {row.experiment} {row.axis}={row.value:g} err_inf={row.err_inf:.3e} "
               f"bound={row.err_bound:.3e}")


@click.group()
def main():
    """Build attention weights from closed-form constructions and check their error bounds."""


def _subcommand(name: str, experiment: str, doc: str, extra=()):
    @common_options
    def cmd(config_path, **flags):
        _run(experiment, config_path, flags)

    for opt in extra:
        cmd = opt(cmd)
    cmd.__doc__ = doc
    main.command(name)(cmd)


_subcommand("hardmax-check", "hardmax", "Softmax-to-argmax deviation at the computed temperature.")
_subcommand("single-head", "single", "One head evaluating n truncated linear models.")
_subcommand("multi-head", "multi", "H heads sharing the anchor grid.")
_subcommand("grid-scalar", "grid_scalar", "Grid-bump sequence-to-scalar approximation.")
_subcommand("seq2seq", "seq2seq", "Grid-bump sequence-to-sequence approximation.")
_subcommand("colwise", "colwise", "Attention computing A X B column-wise.")
_subcommand("three-layer", "three_layer", "Three attention layers evaluating a per-token ReLU net.")
_subcommand("icl", "icl", "Truncated linear models read from the prompt.")
_subcommand("icgd", "icgd", "One in-context gradient-descent layer.",
            extra=(click.option("--net-file", type=click.Path(exists=True, dir_okay=False), default=None,
                                help="Coefficient file with lines 'r h a b c'."),))


@main.command("sweep")
@click.option("--experiment", default=None, help="Experiment name (hardmax, single, multi, ...).")
@click.option("--axis", default=None, help="Swept parameter.")
@click.option("--values", default=None, help="Comma-separated axis values.")
@common_options
def sweep(experiment, axis, values, config_path, **flags):
    """Sweep one parameter of any experiment."""
    flags["axis"] = axis
    flags["values"] = values
    _run(experiment, config_path, flags, sweep=True)


if __name__ == "__main__":
    main()
