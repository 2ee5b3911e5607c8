"""``stgode`` command line.

Every :class:`~stgode.config.RunConfig` key is also a flag (``history`` ->
``--history``, booleans as ``--flag/--no-flag``); flags override values read
from ``--config``.  Exit status: 0 success, 1 validation or verification
failure, 2 I/O or parse error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from stgode import __version__
from stgode.config import BOOL_FIELDS, CONFIG_FIELDS, RunConfig, load_config
from stgode.data import ParseError, write_edges_csv, write_json, write_series_csv
from stgode.errors import NonFiniteError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
VERIFY_REPORT = "verify_report.json"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def config_options(fn):
    """Attach one option per RunConfig key plus ``--config``."""
    defaults = RunConfig()
    for name in reversed(CONFIG_FIELDS):
        default = getattr(defaults, name)
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
        if name in BOOL_FIELDS:
            opt = click.option(f"{_flag(name)}/--no-{name.replace('_', '-')}", name, default=None,
                               help=f"[default: {str(shown).lower()}]")
        else:
            opt = click.option(_flag(name), name, default=None, metavar="VALUE", help=f"[default: {shown!r}]")
        fn = opt(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="key = value file; flags override it")(fn)
    fn = click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")(fn)
    return fn


def _resolve(kwargs) -> RunConfig:
    overrides = {k: kwargs.pop(k) for k in CONFIG_FIELDS}
    path = kwargs.pop("config_path")
    logging.basicConfig(level=logging.INFO if kwargs.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return load_config(path, overrides)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParseError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (ValidationError, NonFiniteError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INVALID)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="stgode")
def main():
    """Spatio-temporal graph ODE traffic forecasting toolkit."""


@main.command()
@config_options
@handle_errors
def synth(**kwargs):
    """Write a synthetic dataset to --series and --edges."""
    from stgode.synthetic import synthesize_dataset

    cfg = _resolve(kwargs)
    ds = synthesize_dataset(cfg.seed, n_nodes=cfg.n_nodes, n_steps=cfg.n_steps)
    write_series_csv(cfg.series, ds.network.node_ids, ds.series)
    write_edges_csv(cfg.edges, ds.network)
    meta = {"config": cfg.to_dict(), "generator": ds.params_dict(), "patterns": [int(p) for p in ds.patterns]}
    write_json(Path(cfg.series).with_suffix(".meta.json"), meta)
    click.echo(f"wrote {cfg.series} ({ds.series.shape[0]} steps x {ds.series.shape[1]} nodes) and {cfg.edges}")


@main.command("build-graph")
@config_options
@handle_errors
def build_graph(**kwargs):
    """Build the spatial and semantic adjacency matrices."""
    from stgode.pipeline import cmd_build_graph

    cfg = _resolve(kwargs)
    summary = cmd_build_graph(cfg)
    for kind in ("spatial", "semantic"):
        s = summary[kind]
        click.echo(f"{kind:9s} edges={s['edges']:4d} density={s['density']:.3f} "
                   f"eig=[{s['eig_min']:.4f}, {s['eig_max']:.4f}]")
    click.echo(f"wrote {cfg.graph_dir}")


@main.command()
@config_options
@click.option("--only", multiple=True, help="run just this suite (repeatable)")
@click.option("--inject-fault", is_flag=True, hidden=True)
@handle_errors
def verify(only, inject_fault, **kwargs):
    """Run every oracle suite; exit 1 if any fails."""
    from stgode.verify import SUITES, run_all

    cfg = _resolve(kwargs)
    unknown = sorted(set(only) - set(SUITES))
    if unknown:
        raise ValidationError(f"unknown suite(s): {', '.join(unknown)}; known: {', '.join(SUITES)}")
    results = run_all(only=set(only) or None, fault=inject_fault)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status}  {r.name:34s} max_error={r.max_error:.3e} tol={r.tolerance:.0e}")
    report = {
        "config": cfg.to_dict(),
        "fault_injected": inject_fault,
        "passed": all(r.passed for r in results),
        "suites": [{k: v for k, v in r.to_dict().items() if k != "seconds"} for r in results],
    }
    write_json(Path(cfg.out_dir) / VERIFY_REPORT, report)
    sys.exit(EXIT_OK if report["passed"] else EXIT_INVALID)


@main.command()
@config_options
@handle_errors
def train(**kwargs):
    """Train, keep the best-validation checkpoint, write metrics.json."""
    from stgode.pipeline import cmd_train

    cfg = _resolve(kwargs)
    metrics = cmd_train(cfg)
    t = metrics["test"]
    click.echo(f"best epoch {metrics['best_epoch']}: test MAE {t['mae']:.4f} RMSE {t['rmse']:.4f}")
    if "persistence" in metrics:
        click.echo(f"persistence: test MAE {metrics['persistence']['mae']:.4f}")
    click.echo(f"wrote {cfg.checkpoint_path} and {Path(cfg.out_dir) / 'metrics.json'}")


@main.command("eval")
@config_options
@handle_errors
def eval_cmd(**kwargs):
    """Test-split metrics from a saved checkpoint."""
    from stgode.pipeline import cmd_eval

    cfg = _resolve(kwargs)
    out = cmd_eval(cfg)
    click.echo(json.dumps({k: v for k, v in out.items() if k in ("test", "persistence")}, indent=2, sort_keys=True))


@main.command()
@config_options
@handle_errors
def demo(**kwargs):
    """Collapse curves and the ODE-vs-GCN depth study."""
    from stgode.demo import cmd_demo
    from stgode.pipeline import load_dataset, load_graphs, prepare_splits, set_threads

    cfg = _resolve(kwargs)
    set_threads(cfg)
    ds = load_dataset(cfg)
    spatial, semantic = load_graphs(cfg, ds.n_nodes)
    summary = cmd_demo(cfg, prepare_splits(cfg, ds), spatial, semantic)
    for row in summary["depth"]:
        click.echo(f"{row['model']:3s} depth {row['depth']}: val MAE {row['val_mae']:.4f}")
    click.echo(f"spread: ode {summary['spread']['ode']:.4f}  gcn {summary['spread']['gcn']:.4f}")


__all__ = ["main"]
