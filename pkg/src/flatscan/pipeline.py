"""
flatscan pipeline - end-to-end critical-point experiments

Builds the objective, trains to produce starting points, samples them
uniformly by loss, runs the configured finder per start on a thread pool,
classifies every run and writes the results directory:

    manifest.json                 config, seeds, versions, wall-clock
    training/trajectory_<j>.csv   pretraining traces
    runs/<id>/trace.csv           one row per iterate
    runs/<id>/outcome.json        RunOutcome
    runs/<id>/final.csv           terminal parameters
    tables/loss_index.csv         terminal points
    tables/loss_index_max_flat.csv
    tables/ecdf_r.csv, tables/ecdf_max_r.csv, tables/summary.json
"""

import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy

from .config import Cutoffs, DatasetConfig, ExperimentConfig, thread_cap
from .data import (Dataset, gaussian_dataset, gaussian_mixture_dataset, load_csv, make_rng,
                   pca_project, shuffle_labels, subset, zscore)
from .diagnostics import OUTCOME_CLASSES, RunOutcome, classify_outcome
from .errors import DataError
from .fields import ScalarField
from .models import NetworkSpec, accuracy, init_params, network_field, quartic_field
from .solvers import IterateTrace, run_finder, train_gd_momentum
from .storage import CSVTable, read_json, read_trace, write_json, write_trace, write_vector

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20

TABLE_COLUMNS = ('run', 'loss', 'morse_index', 'class', 'sq_grad_norm', 'color')
ECDF_COLUMNS = ('value', 'fraction')

CLASS_COLORS = {'critical': 'black', 'gradient_flat': 'red', 'neither': 'gray'}


@dataclass
class Objective:
    """The field under study with the dataset and network it came from"""
    field: ScalarField
    dataset: Optional[Dataset] = None
    spec: Optional[NetworkSpec] = None

    @property
    def is_network(self) -> bool:
        return self.spec is not None


@dataclass
class ExperimentResults:
    manifest: Dict[str, Any]
    outcomes: Dict[int, RunOutcome]
    traces: Dict[int, IterateTrace] = field(default_factory=dict)
    failures: Dict[int, str] = field(default_factory=dict)
    output_dir: Optional[Path] = None

    @property
    def run_ids(self) -> List[int]:
        return sorted(self.outcomes)

    @property
    def cutoffs(self) -> Cutoffs:
        return ExperimentConfig.from_dict(self.manifest['config']).cutoffs


# ----------------------------------------------------------------------------
# Objective and starting points
# ----------------------------------------------------------------------------

def build_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    if cfg.kind == 'gaussian':
        data = gaussian_dataset(cfg.m, cfg.d, seed)
    elif cfg.kind == 'mixture':
        data = gaussian_mixture_dataset(cfg.m, cfg.d, cfg.classes, seed, cfg.separation)
    elif cfg.kind == 'csv':
        data = load_csv(cfg.path, cfg.target_columns, cfg.one_hot_classes)
    else:
        raise DataError(f"dataset kind {cfg.kind!r} has no samples")
    if cfg.subset is not None:
        data = subset(data, cfg.subset, seed)
    if cfg.zscore:
        data = zscore(data)
    if cfg.pca_k is not None:
        data = pca_project(data, cfg.pca_k)
        if cfg.zscore:
            data = zscore(data)
    if cfg.shuffle_labels:
        data = shuffle_labels(data, seed)
    return data


def build_objective(cfg: ExperimentConfig) -> Objective:
    if cfg.model.kind == 'quartic':
        return Objective(quartic_field())
    data = build_dataset(cfg.dataset, cfg.seeds.data)
    out_width = data.c if data.targets is not None else data.d
    spec = NetworkSpec((data.d,) + tuple(cfg.model.hidden_widths) + (out_width,),
                       activation=cfg.model.activation, use_biases=cfg.model.use_biases,
                       loss_kind=cfg.model.loss_kind, l2_coeff=cfg.model.effective_l2)
    logger.info("network %s with %d parameters on %d examples",
                spec.layer_widths, spec.param_count, data.m)
    return Objective(network_field(spec, data), data, spec)


def grid_points(size: int, low: float, high: float) -> List[np.ndarray]:
    """size x size grid over [low, high]^2, x varying slowest"""
    axis = np.linspace(low, high, size)
    return [np.array([x, y]) for x in axis for y in axis]


def sample_loss_uniform(snapshots: Sequence[Tuple[np.ndarray, float]], k: int, seed: int,
                        bins: int = DEFAULT_BINS) -> List[np.ndarray]:
    """
    Draw k parameter vectors so that their losses are spread evenly.

    [min loss, max loss] is cut into equal-width bins; a nonempty bin is
    chosen uniformly (with replacement), then a member uniformly within it.
    Snapshots with a non-finite loss are skipped.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    snapshots = [s for s in snapshots if np.isfinite(s[1])]
    if not snapshots:
        raise ValueError("need at least one snapshot with a finite loss")
    if len(snapshots) == 1:
        return [np.array(snapshots[0][0]) for _ in range(k)]
    losses = np.array([loss for _, loss in snapshots], dtype=np.float64)
    lo, hi = float(losses.min()), float(losses.max())
    if hi > lo:
        idx = np.minimum(((losses - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    else:
        idx = np.zeros(len(snapshots), dtype=np.int64)
    members = [np.flatnonzero(idx == b) for b in range(bins)]
    members = [m for m in members if m.size]
    rng = make_rng(seed)
    picks = []
    for _ in range(k):
        chosen = members[rng.integers(len(members))]
        picks.append(np.array(snapshots[chosen[rng.integers(chosen.size)]][0]))
    return picks


def train(cfg: ExperimentConfig, objective: Optional[Objective] = None) -> List[IterateTrace]:
    """Pretraining trajectories; trajectory j starts from init_params(spec, seeds.init + j)"""
    objective = objective or build_objective(cfg)
    if not objective.is_network:
        raise ValueError("only network objectives are trained")
    t = cfg.trainer
    traces = []
    for j in range(t.num_trajectories):
        theta0 = init_params(objective.spec, cfg.seeds.init + j)
        traces.append(train_gd_momentum(objective.field, theta0, t.lr, t.momentum,
                                        t.epochs, t.snapshot_every))
    return traces


def starting_points(cfg: ExperimentConfig, objective: Objective,
                    training: Sequence[IterateTrace]) -> List[np.ndarray]:
    if not objective.is_network:
        d = cfg.dataset
        grid = grid_points(d.grid_size, d.grid_range[0], d.grid_range[1])
        if cfg.finder.starts == 'grid':
            if cfg.num_runs >= len(grid):
                return grid
            rows = np.sort(make_rng(cfg.seeds.sample).choice(len(grid), cfg.num_runs, replace=False))
            return [grid[i] for i in rows]
        pool = [(p, objective.field.value(p)) for p in grid]
    else:
        pool = [snap for trace in training for snap in trace.snapshot_losses()]
    return sample_loss_uniform(pool, cfg.num_runs, cfg.seeds.sample, cfg.finder.bins)


# ----------------------------------------------------------------------------
# Running
# ----------------------------------------------------------------------------

def _run_one(run_id: int, theta0: np.ndarray, objective: Objective, cfg: ExperimentConfig):
    logger.info("run %d: start loss %.6g", run_id, objective.field.value(theta0))
    trace = run_finder(objective.field, theta0, cfg.finder, cfg.solver)
    outcome = classify_outcome(trace, objective.field, cfg.cutoffs)
    logger.info("run %d: %s after %d iterations (|g|^2=%.3e)", run_id, outcome.outcome_class,
                outcome.iterations, outcome.terminal_sq_grad_norm)
    return trace, outcome


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResults:
    """Train, sample starts, run finders in parallel, classify and (optionally) persist"""
    started = time.time()
    started_at = datetime.now(timezone.utc).isoformat()
    objective = build_objective(cfg)
    training = train(cfg, objective) if objective.is_network else []
    starts = starting_points(cfg, objective, training)

    traces: Dict[int, IterateTrace] = {}
    outcomes: Dict[int, RunOutcome] = {}
    failures: Dict[int, str] = {}
    workers = max(1, min(thread_cap(), len(starts)))
    logger.info("running %d %s runs on %d worker(s)", len(starts), cfg.finder.method, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {i: pool.submit(_run_one, i, theta0, objective, cfg) for i, theta0 in enumerate(starts)}
        for i in sorted(futures):
            try:
                traces[i], outcomes[i] = futures[i].result()
            except Exception as exc:
                failures[i] = f"{type(exc).__name__}: {exc}"
                logger.warning("run %d failed: %s", i, failures[i])

    manifest = _manifest(cfg, objective, training, starts, failures, started_at, time.time() - started)
    results = ExperimentResults(manifest, outcomes, traces, failures)
    if write:
        write_results(results, cfg, training)
    return results


def _versions() -> Dict[str, str]:
    from . import __version__
    return {'flatscan': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__,
            'python': platform.python_version()}


def _manifest(cfg, objective, training, starts, failures, started_at, elapsed) -> Dict[str, Any]:
    manifest: Dict[str, Any] = {
        'name': cfg.name,
        'config': cfg.to_dict(),
        'seeds': {'data': cfg.seeds.data, 'init': cfg.seeds.init, 'sample': cfg.seeds.sample},
        'versions': _versions(),
        'objective': objective.field.name,
        'num_params': objective.field.dim,
        'runs': list(range(len(starts))),
        'failures': {str(k): v for k, v in sorted(failures.items())},
        'started_at': started_at,
        'elapsed_seconds': elapsed,
    }
    if objective.dataset is not None:
        manifest['dataset'] = objective.dataset.to_meta_json()
    if objective.spec is not None:
        manifest['network'] = objective.spec.to_dict()
    if training:
        manifest['training'] = [{'final_loss': t.terminal['loss'], 'epochs': t.iterations,
                                 'stop_reason': t.stop_reason} for t in training]
        if objective.spec.loss_kind == 'cross_entropy':
            for entry, t in zip(manifest['training'], training):
                entry['accuracy'] = accuracy(objective.spec, objective.dataset, t.theta)
    return manifest


# ----------------------------------------------------------------------------
# Tables
# ----------------------------------------------------------------------------

def loss_index_table(results: ExperimentResults, point_choice: str = 'terminal',
                     grad_filter: float = math.inf) -> List[Dict[str, Any]]:
    """One row per run whose chosen point has squared gradient norm <= grad_filter"""
    if point_choice not in ('terminal', 'max_flat'):
        raise ValueError("point_choice must be 'terminal' or 'max_flat'")
    rows = []
    for run_id in results.run_ids:
        o = results.outcomes[run_id]
        if point_choice == 'terminal':
            loss, morse, sq = o.terminal_loss, o.morse_index, o.terminal_sq_grad_norm
        else:
            if o.max_flat_iter is None:
                continue
            loss, morse, sq = o.max_flat_loss, o.max_flat_morse_index, o.max_flat_sq_grad_norm
        if sq > grad_filter:
            continue
        rows.append({'run': run_id, 'loss': loss, 'morse_index': morse, 'class': o.outcome_class,
                     'sq_grad_norm': sq, 'color': CLASS_COLORS[o.outcome_class]})
    return rows


def ecdf(values: Sequence[float]) -> List[Tuple[float, float]]:
    """Empirical CDF as sorted (value, fraction) steps; ties share one step"""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("ecdf of an empty sample")
    uniq, counts = np.unique(x, return_counts=True)
    return [(float(v), float(c) / x.size) for v, c in zip(uniq, np.cumsum(counts))]


def results_summary(results: ExperimentResults, cutoffs: Optional[Cutoffs] = None) -> Dict[str, Any]:
    cutoffs = cutoffs or results.cutoffs
    outcomes = [results.outcomes[i] for i in results.run_ids]
    counts = {c: sum(1 for o in outcomes if o.outcome_class == c) for c in OUTCOME_CLASSES}
    max_r = [o.max_r_over_run for o in outcomes if not math.isnan(o.max_r_over_run)]
    return {
        'runs': len(outcomes),
        'failures': len(results.failures),
        'counts': counts,
        'fractions': {c: (counts[c] / len(outcomes) if outcomes else 0.0) for c in OUTCOME_CLASSES},
        'fraction_max_r_above_cutoff': (sum(1 for r in max_r if r > cutoffs.r) / len(outcomes)
                                        if outcomes else 0.0),
        'mean_rH_stop_fraction': (float(np.mean([o.rH_stop_fraction for o in outcomes]))
                                  if outcomes else 0.0),
    }


def write_tables(results: ExperimentResults, out_dir, cutoffs: Optional[Cutoffs] = None):
    cutoffs = cutoffs or results.cutoffs
    tables = Path(out_dir) / 'tables'
    CSVTable(tables / 'loss_index.csv', TABLE_COLUMNS).write(
        loss_index_table(results, 'terminal', cutoffs.table_grad_filter))
    CSVTable(tables / 'loss_index_max_flat.csv', TABLE_COLUMNS).write(
        loss_index_table(results, 'max_flat', cutoffs.table_grad_filter))
    outcomes = [results.outcomes[i] for i in results.run_ids]
    for name, values in (('ecdf_r.csv', [o.terminal_r for o in outcomes]),
                         ('ecdf_max_r.csv', [o.max_r_over_run for o in outcomes])):
        finite = [v for v in values if not math.isnan(v)]
        steps = ecdf(finite) if finite else []
        CSVTable(tables / name, ECDF_COLUMNS).write({'value': v, 'fraction': f} for v, f in steps)
    write_json(tables / 'summary.json', results_summary(results, cutoffs))


def write_results(results: ExperimentResults, cfg: ExperimentConfig,
                  training: Sequence[IterateTrace] = ()) -> Path:
    """Persist everything under cfg.output_dir; the manifest goes last"""
    out = Path(cfg.output_dir)
    for j, trace in enumerate(training):
        write_trace(trace, out / 'training' / f'trajectory_{j}.csv')
        write_vector(out / 'training' / f'final_{j}.csv', trace.theta)
    for run_id in results.run_ids:
        run_dir = out / 'runs' / str(run_id)
        write_trace(results.traces[run_id], run_dir / 'trace.csv')
        write_json(run_dir / 'outcome.json', results.outcomes[run_id].to_dict())
        write_vector(run_dir / 'final.csv', results.traces[run_id].theta)
    write_tables(results, out, cfg.cutoffs)
    write_json(out / 'manifest.json', results.manifest)
    results.output_dir = out
    logger.info("results written to %s", out)
    return out


# ----------------------------------------------------------------------------
# Reading back
# ----------------------------------------------------------------------------

def load_results(directory) -> ExperimentResults:
    """Manifest, traces and outcomes of a results directory"""
    out = Path(directory)
    manifest = read_json(out / 'manifest.json')
    outcomes: Dict[int, RunOutcome] = {}
    traces: Dict[int, IterateTrace] = {}
    failures = {int(k): v for k, v in manifest.get('failures', {}).items()}
    for run_id in manifest.get('runs', []):
        if run_id in failures:
            continue
        run_dir = out / 'runs' / str(run_id)
        outcomes[run_id] = RunOutcome.from_dict(read_json(run_dir / 'outcome.json'))
        traces[run_id] = read_trace(run_dir / 'trace.csv', outcomes[run_id].stop_reason)
    return ExperimentResults(manifest, outcomes, traces, failures, out)


def replay_trace(trace_path, cutoffs: Optional[Cutoffs] = None,
                 stored: Optional[RunOutcome] = None) -> RunOutcome:
    """
    Reclassify a stored trace under cutoffs without re-running any solver.

    Morse indices and the stop reason come from the stored outcome (by
    default outcome.json next to the trace) since the trace holds no
    parameters.
    """
    trace_path = Path(trace_path)
    if stored is None:
        sibling = trace_path.parent / 'outcome.json'
        if sibling.exists():
            stored = RunOutcome.from_dict(read_json(sibling))
    trace = read_trace(trace_path, stored.stop_reason if stored else None)
    return classify_outcome(trace, None, cutoffs,
                            morse=stored.morse_index if stored else None,
                            max_flat_morse=stored.max_flat_morse_index if stored else None)


def replay_results(results: ExperimentResults, cutoffs: Cutoffs) -> ExperimentResults:
    """Every run of a results set reclassified under new cutoffs"""
    outcomes = {}
    for run_id in results.run_ids:
        old = results.outcomes[run_id]
        outcomes[run_id] = classify_outcome(results.traces[run_id], None, cutoffs,
                                            morse=old.morse_index,
                                            max_flat_morse=old.max_flat_morse_index)
    return ExperimentResults(results.manifest, outcomes, results.traces, results.failures,
                             results.output_dir)
