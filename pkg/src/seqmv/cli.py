"""``seqmv`` command line entry point."""

from __future__ import annotations

import sys
import warnings
from pathlib import Path

import click

from .config import parse_config_text
from .experiments import REGISTRY, ExperimentError, ExperimentSpec, run_experiment
from .model import ConfigError


class _Group(click.Group):
    """Every registered experiment name is a subcommand sharing one option set."""

    def list_commands(self, ctx):
        return ["list", *sorted(REGISTRY)]

    def get_command(self, ctx, name):
        if name == "list":
            return _list
        if name in REGISTRY:
            return _make_run(name)
        return None


@click.command("list", help="Print the experiment registry.")
def _list():
    width = max(map(len, REGISTRY))
    for name in sorted(REGISTRY):
        click.echo(f"{name:<{width}}  {REGISTRY[name].description}")


def _make_run(name: str) -> click.Command:
    @click.command(name, help=REGISTRY[name].description)
    @click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
    @click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                  help="Overrides rng.seed from the config file.")
    @click.option("--replicas", type=click.IntRange(min=2), default=None)
    @click.option("--threads", type=click.IntRange(min=1), default=None,
                  help="Caps numba parallel width; results do not depend on it.")
    def run(config_path, out_dir, seed, replicas, threads):
        if threads is not None:
            import numba

            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
        try:
            cfg, raw = parse_config_text(Path(config_path).read_text(), config_path)
            spec = ExperimentSpec(name, cfg, Path(out_dir), seed, replicas, config_path, raw)
            manifest = run_experiment(spec)
        except (ConfigError, ExperimentError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        for key, ok in manifest.verdicts.items():
            tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
            click.echo(f"{tag}  {key}")
        click.echo(f"wrote {out_dir} ({manifest.wall_clock_s:.1f} s)")
        sys.exit(0 if manifest.passed else 1)

    return run


@click.group(cls=_Group)
@click.version_option(package_name="seqmv")
def main():
    """Batch experiments for sequential mean-field particle systems."""
    # numba probes an optional threading backend and warns when it is too old
    warnings.filterwarnings("ignore", message="The TBB threading layer")


if __name__ == "__main__":
    main()
