"""
flatscan command line

    python launcher.py gen-data --config CFG --out data.csv
    python launcher.py train    --config CFG [--out DIR]
    python launcher.py find     --config CFG [--set solver.outer_iters=100] [--out DIR]
    python launcher.py diagnose --config CFG --theta final.csv
    python launcher.py table    --results DIR
    python launcher.py replay   (--trace runs/3/trace.csv | --results DIR) [--set cutoffs.grad_sq=1e-6]

Exit codes: 0 success, 1 configuration/input error, 2 runtime failure.
Errors are printed to stderr as one JSON object.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Annotated, List, Optional, Sequence

import click
import typer

from .config import ConfigManifest, Cutoffs, ExperimentConfig, apply_override
from .data import save_csv
from .diagnostics import RunOutcome, diagnose_point
from .errors import ConfigError, DataError, DimensionError, FlatscanError, TraceError
from .pipeline import (build_dataset, build_objective, load_results, replay_results, replay_trace,
                       results_summary, run_experiment, train, write_tables)
from .storage import json_safe, read_vector, write_trace, write_vector

logger = logging.getLogger('flatscan.cli')

INPUT_ERRORS = (ConfigError, TraceError, DataError, DimensionError)
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

app = typer.Typer(
    name='flatscan',
    help='Find and classify critical and gradient-flat points',
    add_completion=False,
)

ConfigOption = Annotated[str, typer.Option('--config', help='experiment config (JSON)')]
OptionalConfig = Annotated[Optional[str], typer.Option('--config', help='experiment config (JSON)')]
SetOption = Annotated[Optional[List[str]], typer.Option(
    '--set', metavar='KEY=VALUE', help='dotted override applied after the file, repeatable')]
OutOption = Annotated[Optional[str], typer.Option('--out', help='results directory (default: output_dir)')]


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(json_safe(payload), indent=2) + '\n')


def _manifest(config: str, overrides: Optional[Sequence[str]], out: Optional[str] = None) -> ConfigManifest:
    return ConfigManifest(config, overrides or ()).with_output_dir(out)


def _cutoffs(config: Optional[str], overrides: Optional[Sequence[str]],
             base: Optional[dict] = None) -> Cutoffs:
    """Cutoffs from --config (or a stored config) with --set overrides"""
    if config:
        return _manifest(config, overrides).cutoffs
    data = json.loads(json.dumps(base or {}))
    for assignment in overrides or ():
        apply_override(data, assignment)
    return ExperimentConfig.from_dict(data).cutoffs


@app.callback()
def main_options(
    verbose: Annotated[bool, typer.Option('--verbose', '-v', help='debug logging')] = False,
    quiet: Annotated[bool, typer.Option('--quiet', '-q', help='warnings only')] = False,
):
    """Newton-MR experiments and flatness diagnostics"""
    if verbose and quiet:
        raise ConfigError("--verbose and --quiet are mutually exclusive")
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT)


@app.command('gen-data', help='write the configured dataset to CSV')
def cmd_gen_data(config: ConfigOption,
                 out: Annotated[str, typer.Option('--out', help='CSV file to write')],
                 set_: SetOption = None) -> int:
    manifest = _manifest(config, set_)
    data = build_dataset(manifest.config.dataset, manifest.seeds.data)
    path = save_csv(data, out)
    _emit({'path': str(path), **data.to_meta_json()})
    return 0


@app.command('train', help='pretrain and store trajectories')
def cmd_train(config: ConfigOption, out: OutOption = None, set_: SetOption = None) -> int:
    manifest = _manifest(config, set_, out)
    traces = train(manifest.config)
    out_dir = manifest.output_dir / 'training'
    for j, trace in enumerate(traces):
        write_trace(trace, out_dir / f'trajectory_{j}.csv')
        write_vector(out_dir / f'final_{j}.csv', trace.theta)
    _emit({'output_dir': str(out_dir),
           'trajectories': [{'final_loss': t.terminal['loss'], 'epochs': t.iterations,
                             'stop_reason': t.stop_reason} for t in traces]})
    return 0


@app.command('find', help='run the full experiment')
def cmd_find(config: ConfigOption, out: OutOption = None, set_: SetOption = None) -> int:
    manifest = _manifest(config, set_, out)
    results = run_experiment(manifest.config)
    _emit({'output_dir': str(results.output_dir), **results_summary(results, manifest.cutoffs)})
    return 2 if results.failures and not results.outcomes else 0


@app.command('diagnose', help='diagnostics at one parameter vector')
def cmd_diagnose(config: ConfigOption,
                 theta: Annotated[str, typer.Option('--theta', help='parameter CSV')],
                 set_: SetOption = None) -> int:
    manifest = _manifest(config, set_)
    values = read_vector(theta)
    objective = build_objective(manifest.config)
    if values.shape[0] != objective.field.dim:
        raise DataError(f"{theta} holds {values.shape[0]} values, the objective has "
                        f"{objective.field.dim} parameters")
    _emit(diagnose_point(objective.field, values, manifest.solver, manifest.cutoffs))
    return 0


@app.command('table', help='rebuild tables of a results directory')
def cmd_table(results: Annotated[str, typer.Option('--results', help='results directory')],
              config: OptionalConfig = None, set_: SetOption = None) -> int:
    loaded = load_results(results)
    cutoffs = _cutoffs(config, set_, loaded.manifest.get('config'))
    write_tables(loaded, results, cutoffs)
    _emit(results_summary(loaded, cutoffs))
    return 0


def replay(trace_path, cutoffs: Optional[Cutoffs] = None) -> RunOutcome:
    """Outcome of a stored trace under cutoffs, without re-running solvers"""
    return replay_trace(trace_path, cutoffs)


@app.command('replay', help='reclassify stored traces')
def cmd_replay(trace: Annotated[Optional[str], typer.Option('--trace', help='trace CSV')] = None,
               results: Annotated[Optional[str], typer.Option('--results', help='results directory')] = None,
               config: OptionalConfig = None, set_: SetOption = None) -> int:
    if (trace is None) == (results is None):
        raise ConfigError("replay needs exactly one of --trace and --results")
    if trace:
        stored_config = None
        manifest_path = Path(trace).parent.parent.parent / 'manifest.json'
        if manifest_path.exists():
            with open(manifest_path, 'r', encoding='utf-8') as f:
                stored_config = json.load(f).get('config')
        outcome = replay(trace, _cutoffs(config, set_, stored_config))
        _emit(outcome.to_dict())
        return 0
    loaded = load_results(results)
    replayed = replay_results(loaded, _cutoffs(config, set_, loaded.manifest.get('config')))
    _emit({'summary': results_summary(replayed),
           'runs': {str(i): replayed.outcomes[i].to_dict() for i in replayed.run_ids}})
    return 0


def _report(exc: Exception) -> None:
    payload = {'error': type(exc).__name__, 'message': str(exc)}
    if isinstance(exc, FlatscanError):
        payload.update(exc.context())
    sys.stderr.write(json.dumps(payload) + '\n')


def parse_and_dispatch(argv: Sequence[str]) -> int:
    """Run one CLI invocation and return its exit code"""
    argv = list(argv)
    command = typer.main.get_command(app)
    if not any(not a.startswith('-') for a in argv) and not any(a in ('--help', '-h') for a in argv):
        with click.Context(command, info_name='flatscan') as ctx:
            sys.stderr.write(command.get_help(ctx) + '\n')
        return 1
    try:
        code = command.main(args=argv, prog_name='flatscan', standalone_mode=False)
    except click.ClickException as exc:
        _report(ConfigError(exc.format_message()))
        return 1
    except click.Abort:
        return 1
    except INPUT_ERRORS as exc:
        logger.error("%s", exc)
        _report(exc)
        return 1
    except Exception as exc:
        logger.error("command failed: %s", exc)
        _report(exc)
        return 2
    return code if isinstance(code, int) else 0


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == '__main__':
    main()
