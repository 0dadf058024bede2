"""
Dicke DFT Toolkit - Application and Command Line

Application factory plus the command-line surface. Every computational
subcommand reads a JSON run config, runs the matching service, writes its
tables, summary and plots with sidecars, and records the run in the
archive database.

Subcommands:
- spectrum: low-lying eigenvalues of H(v, j)
- curve: F(sigma, xi) curves for a list of coupling strengths (+ SVG)
- functional: Lieb and Levy-Lieb functionals at configured targets
- adiabatic: coupling-path reconstruction of F_LL
- regular-set: irregular hyperplanes and regular-set components
- diagnose: identity battery (nonzero exit when a check fails)
- hk-scan: ground-state density injectivity over a potential grid
- runs: list archived runs

The application uses:
- Flask for configuration, logging and the click-based command group
- Flask-SQLAlchemy for the run archive
- python-dotenv for .env files
- numpy/scipy for all numerics

Exit codes: 0 success, 1 numerical failure, 2 configuration error, 3 sizing.
"""

import os
import sys
import time

import click
from flask import Flask
from flask.cli import FlaskGroup
from flask.logging import default_handler

# Add the current directory to the Python path for module imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import OUTPUT_FORMATS, env_threads, load_run_config
from exceptions import ConfigError
from models import db, Run, RunArtifact
from services.runner import ComputationRunner, sidecar, write_outputs
from utils import logger as package_logger, render_json

DEFAULT_OUT = "results"


# ==============================================================================
# Application Factory
# ==============================================================================

def create_app(test_config=None):
    """
    Build the Flask application.

    Args:
        test_config (dict, optional): overrides for app.config (tests use an
            in-memory database)
    """
    app = Flask(__name__)

    app.config['SQLALCHEMY_DATABASE_URI'] = os.environ.get(
        'DICKE_DFT_DATABASE_URI', 'sqlite:///dicke_dft_runs.db')
    app.config['SQLALCHEMY_TRACK_MODIFICATIONS'] = False
    app.config['DICKE_DFT_LOG_LEVEL'] = os.environ.get('DICKE_DFT_LOG_LEVEL', 'INFO')
    if test_config:
        app.config.update(test_config)

    # Library modules log through the package logger; reuse Flask's handler
    if default_handler not in package_logger.handlers:
        package_logger.addHandler(default_handler)
    package_logger.setLevel(app.config['DICKE_DFT_LOG_LEVEL'].upper())

    db.init_app(app)
    with app.app_context():
        db.create_all()

    register_commands(app)
    return app


# ==============================================================================
# Command Plumbing
# ==============================================================================

COMPUTATION_OPTIONS = [
    click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                 help='JSON run config (defaults: one spin, one mode, lambda = t = 1).'),
    click.option('--out', 'out_dir', default=None, help=f'Output directory (default {DEFAULT_OUT}).'),
    click.option('--seed', type=click.IntRange(min=0), default=None, help='Seed for stochastic steps.'),
    click.option('--threads', type=click.IntRange(min=1), default=None,
                 help='Worker count (default: DICKE_DFT_THREADS or 1).'),
    click.option('--format', 'fmt', type=click.Choice(OUTPUT_FORMATS), default=None,
                 help='csv: tables + summary; json: summary only; svg: tables, summary and plots.'),
]


def computation_options(func):
    """Flags shared by every computational subcommand."""
    for option in reversed(COMPUTATION_OPTIONS):
        func = option(func)
    return func


def execute(command, config_path, out_dir, seed, threads, fmt):
    """
    Run one subcommand end to end and exit with its code.

    Config errors stop the run before any file is written. Settings in the
    config's output section override the command-line flags.
    """
    started = time.perf_counter()
    try:
        config = load_run_config(config_path)
        output = config.output
        seed = output.seed if output.seed is not None else (seed if seed is not None else 0)
        threads = output.threads or threads or env_threads()
        fmt = output.format or fmt or 'csv'
        out_dir = output.out or out_dir or DEFAULT_OUT
    except ConfigError as err:
        click.echo(f"ConfigError: {err}", err=True)
        sys.exit(err.exit_code)

    runner = ComputationRunner(config, seed=seed, threads=threads)
    result = runner.run(command)

    written = []
    if result['success']:
        meta = sidecar(config, seed, started, result['execution_log'])
        written = write_outputs(command, result, out_dir, fmt, meta)
        for path, kind in written:
            if kind != 'meta':
                click.echo(path)
    else:
        click.echo(result['error'], err=True)

    run = Run(
        command=command,
        config_json=render_json(config.to_dict()),
        seed=seed,
        exit_code=result['exit_code'],
        message=result.get('error'),
        wall_time=time.perf_counter() - started,
    )
    db.session.add(run)
    db.session.flush()
    for position, (path, kind) in enumerate(written):
        db.session.add(RunArtifact(run_id=run.id, path=path, kind=kind, position=position))
    db.session.commit()

    if result['exit_code']:
        sys.exit(result['exit_code'])


COMMAND_HELP = {
    "spectrum": "Low-lying eigenvalues of H(v, j).",
    "curve": "F(sigma, xi) along a magnetization grid for several couplings.",
    "functional": "Lieb and Levy-Lieb functionals at configured density pairs.",
    "adiabatic": "Adiabatic-connection reconstruction of F_LL.",
    "regular-set": "Irregular hyperplanes and regular-set components.",
    "diagnose": "Residual checks of the exact identities.",
    "hk-scan": "Ground-state density injectivity over a potential grid.",
}


def _computation(name):
    def command(**kwargs):
        execute(name, **kwargs)
    command.__name__ = name.replace("-", "_")
    return computation_options(command)


def register_commands(app):
    """Attach the subcommands to app.cli."""
    for name, help_text in COMMAND_HELP.items():
        app.cli.command(name, help=help_text)(_computation(name))

    @app.cli.command('runs', help='List archived runs, newest first.')
    @click.option('--limit', type=click.IntRange(min=1), default=20)
    def runs(limit):
        query = Run.query.order_by(Run.created_at.desc(), Run.id.desc()).limit(limit)
        for run in query:
            summary = run.summary()
            click.echo(f"{summary['created_at']}  {summary['uuid']}  {summary['command']:<12} "
                       f"exit={summary['exit_code']}  files={len(summary['files'])}")


cli = FlaskGroup(create_app=create_app, add_default_commands=False,
                 help='Density-functional toolkit for the multi-mode Dicke model.')


def main():
    cli()


if __name__ == '__main__':
    main()
