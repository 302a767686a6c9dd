"""
flatscan config - experiment configuration documents
Parses JSON experiment configs into frozen dataclasses, applies dotted
key=value overrides, and rejects unknown keys at any depth.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union, get_args, get_origin

from .errors import ConfigError

THREADS_ENV = 'FLATSCAN_THREADS'


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise ConfigError(f"{key}: {message}", key=key)


@dataclass(frozen=True)
class SolverConfig:
    """Krylov tolerances, line-search hyperparameters and outer-loop limits"""
    rtol: float = 5e-4
    maxit: Optional[int] = None
    alpha0: float = 0.1
    beta: float = 0.5
    rho: float = 0.1
    rho_unit: float = 0.5
    max_backtracks: int = 30
    outer_iters: int = 500
    grad_tol_sq: float = 1e-24
    reorthogonalize: bool = True
    rank_tol: float = 1e-10
    stall_limit: int = 25
    snapshot_every: int = 0
    log_every: int = 50
    dense: bool = True
    dense_max_n: int = 300

    def __post_init__(self):
        _require(self.rtol > 0, 'solver.rtol', "must be positive")
        _require(self.maxit is None or self.maxit >= 1, 'solver.maxit', "must be at least 1")
        _require(self.alpha0 > 0, 'solver.alpha0', "must be positive")
        _require(0 < self.beta < 1, 'solver.beta', "must lie in (0, 1)")
        _require(0 < self.rho < self.rho_unit < 1, 'solver.rho',
                 "need 0 < rho < rho_unit < 1")
        _require(self.max_backtracks >= 0, 'solver.max_backtracks', "must be non-negative")
        _require(self.outer_iters >= 0, 'solver.outer_iters', "must be non-negative")
        _require(self.grad_tol_sq >= 0, 'solver.grad_tol_sq', "must be non-negative")
        _require(self.rank_tol >= 0, 'solver.rank_tol', "must be non-negative")
        _require(self.stall_limit >= 1, 'solver.stall_limit', "must be at least 1")
        _require(self.snapshot_every >= 0, 'solver.snapshot_every', "must be non-negative")
        _require(self.log_every >= 0, 'solver.log_every', "must be non-negative")
        _require(self.dense_max_n >= 0, 'solver.dense_max_n', "must be non-negative")

    def maxit_for(self, n: int) -> int:
        return n if self.maxit is None else self.maxit


@dataclass(frozen=True)
class Cutoffs:
    """Thresholds separating critical, gradient-flat and other terminal points"""
    grad_sq: float = 1e-10
    r: float = 0.9
    r_H: float = 5e-4
    table_grad_filter: float = 1e-4
    morse_tol: float = 1e-10

    def __post_init__(self):
        _require(self.grad_sq >= 0, 'cutoffs.grad_sq', "must be non-negative")
        _require(0 <= self.r <= 1, 'cutoffs.r', "must lie in [0, 1]")
        _require(self.r_H >= 0, 'cutoffs.r_H', "must be non-negative")
        _require(self.table_grad_filter >= 0, 'cutoffs.table_grad_filter', "must be non-negative")
        _require(self.morse_tol >= 0, 'cutoffs.morse_tol', "must be non-negative")


@dataclass(frozen=True)
class ModelConfig:
    """Objective: the quartic or a fully-connected network fitted to the dataset"""
    kind: str = 'network'
    hidden_widths: Tuple[int, ...] = (16, 4)
    activation: str = 'swish'
    use_biases: bool = False
    loss_kind: str = 'mse'
    regularize: bool = False
    l2_coeff: float = 1e-4

    def __post_init__(self):
        _require(self.kind in ('quartic', 'network'), 'model.kind', "expected 'quartic' or 'network'")
        _require(len(self.hidden_widths) >= 1 and all(w >= 1 for w in self.hidden_widths),
                 'model.hidden_widths', "need at least one positive hidden width")
        _require(self.activation in ('identity', 'swish'), 'model.activation',
                 "expected 'identity' or 'swish'")
        _require(self.loss_kind in ('mse', 'cross_entropy'), 'model.loss_kind',
                 "expected 'mse' or 'cross_entropy'")
        _require(self.l2_coeff >= 0, 'model.l2_coeff', "must be non-negative")

    @property
    def effective_l2(self) -> float:
        return self.l2_coeff if self.regularize else 0.0


@dataclass(frozen=True)
class DatasetConfig:
    """Where inputs come from and how they are preprocessed"""
    kind: str = 'gaussian'
    m: int = 1000
    d: int = 16
    classes: int = 10
    separation: float = 3.0
    path: Optional[str] = None
    target_columns: Tuple[Union[int, str], ...] = ()
    one_hot_classes: Optional[int] = None
    zscore: bool = False
    pca_k: Optional[int] = None
    subset: Optional[int] = None
    shuffle_labels: bool = False
    grid_size: int = 10
    grid_range: Tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self):
        _require(self.kind in ('gaussian', 'mixture', 'csv', 'grid'), 'dataset.kind',
                 "expected 'gaussian', 'mixture', 'csv' or 'grid'")
        _require(self.m >= 2, 'dataset.m', "need at least two samples")
        _require(self.d >= 1, 'dataset.d', "must be positive")
        _require(self.classes >= 2, 'dataset.classes', "need at least two classes")
        _require(self.kind != 'csv' or bool(self.path), 'dataset.path', "required for csv datasets")
        _require(self.pca_k is None or self.pca_k >= 1, 'dataset.pca_k', "must be positive")
        _require(self.subset is None or self.subset >= 1, 'dataset.subset', "must be positive")
        _require(self.grid_size >= 1, 'dataset.grid_size', "must be positive")
        _require(len(self.grid_range) == 2 and self.grid_range[0] < self.grid_range[1],
                 'dataset.grid_range', "expected [low, high] with low < high")


@dataclass(frozen=True)
class TrainerConfig:
    """Full-batch gradient descent with momentum that produces starting points"""
    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 1000
    snapshot_every: int = 1
    num_trajectories: int = 1

    def __post_init__(self):
        _require(self.lr > 0, 'trainer.lr', "must be positive")
        _require(0 <= self.momentum < 1, 'trainer.momentum', "must lie in [0, 1)")
        _require(self.epochs >= 0, 'trainer.epochs', "must be non-negative")
        _require(self.snapshot_every >= 1, 'trainer.snapshot_every', "must be at least 1")
        _require(self.num_trajectories >= 1, 'trainer.num_trajectories', "must be at least 1")


@dataclass(frozen=True)
class FinderConfig:
    """Critical-point finder and how its starting points are chosen"""
    method: str = 'newton_mr'
    damping: float = 1e-3
    lr: float = 0.01
    starts: str = 'loss_uniform'
    bins: int = 20

    def __post_init__(self):
        _require(self.method in ('newton_mr', 'damped_newton', 'gradient_norm_min'),
                 'finder.method', "expected 'newton_mr', 'damped_newton' or 'gradient_norm_min'")
        _require(self.damping >= 0, 'finder.damping', "must be non-negative")
        _require(self.lr > 0, 'finder.lr', "must be positive")
        _require(self.starts in ('loss_uniform', 'grid'), 'finder.starts',
                 "expected 'loss_uniform' or 'grid'")
        _require(self.bins >= 1, 'finder.bins', "must be positive")


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    init: int = 1
    sample: int = 2

    def __post_init__(self):
        for name in ('data', 'init', 'sample'):
            _require(getattr(self, name) >= 0, f'seeds.{name}', "must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment"""
    name: str = 'experiment'
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    finder: FinderConfig = field(default_factory=FinderConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    cutoffs: Cutoffs = field(default_factory=Cutoffs)
    seeds: Seeds = field(default_factory=Seeds)
    num_runs: int = 10
    output_dir: str = 'results'

    def __post_init__(self):
        _require(self.num_runs >= 1, 'num_runs', "must be at least 1")
        _require(self.model.kind != 'quartic' or self.dataset.kind == 'grid', 'dataset.kind',
                 "the quartic takes its starting points from a grid")
        _require(self.dataset.kind != 'grid' or self.model.kind == 'quartic', 'model.kind',
                 "grid datasets only apply to the quartic")
        _require(self.model.loss_kind != 'cross_entropy' or self.dataset.kind != 'gaussian',
                 'model.loss_kind', "cross-entropy needs a labelled dataset")
        _require(self.finder.starts != 'grid' or self.model.kind == 'quartic', 'finder.starts',
                 "grid starts only apply to the quartic")

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        return _build(cls, data, '')


# ----------------------------------------------------------------------------
# Generic dataclass building with strict keys
# ----------------------------------------------------------------------------

def _to_plain(value):
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _dotted(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def _coerce(value, ftype, key: str):
    origin = get_origin(ftype)
    if origin is Union:
        options = get_args(ftype)
        if value is None and type(None) in options:
            return None
        errors = []
        for option in options:
            if option is type(None):
                continue
            try:
                return _coerce(value, option, key)
            except ConfigError as exc:
                errors.append(exc)
        raise errors[0] if errors else ConfigError(f"{key}: invalid value {value!r}", key=key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}", key=key)
        args = get_args(ftype)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], key) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{key}: expected {len(args)} entries, got {len(value)}", key=key)
        return tuple(_coerce(v, a, key) for v, a in zip(value, args))
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}", key=key)
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key=key)
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key=key)
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}", key=key)
        return value
    if dataclasses.is_dataclass(ftype):
        return _build(ftype, value, key)
    return value


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {data!r}", key=prefix or None)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            dotted = _dotted(prefix, key)
            raise ConfigError(f"unknown config key '{dotted}'", key=dotted)
    kwargs = {name: _coerce(data[name], known[name].type, _dotted(prefix, name))
              for name in data}
    return cls(**kwargs)


def apply_override(data: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Apply one dotted key=value override in place; the value is parsed as JSON when possible"""
    if '=' not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value", key=assignment)
    key, raw = assignment.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{assignment}' has an empty key", key=assignment)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split('.')
    node = data
    for i, part in enumerate(parts[:-1]):
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            dotted = '.'.join(parts[:i + 1])
            raise ConfigError(f"cannot override inside '{dotted}', it is not an object", key=dotted)
        node = child
    node[parts[-1]] = value
    return data


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a JSON config (or start from defaults), apply overrides, validate"""
    data: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}", path=str(config_path))
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", path=str(config_path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", path=str(config_path))
    for assignment in overrides:
        apply_override(data, assignment)
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError as exc:
        if path is not None and exc.path is None:
            exc.path = str(path)
        raise


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(cfg.to_dict(), f, indent=2)
    return path


def thread_cap() -> int:
    """Worker count for the run pool: FLATSCAN_THREADS or the CPU count"""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == '':
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", key=THREADS_ENV)
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", key=THREADS_ENV)
    return value


class ConfigManifest:
    """A loaded experiment config with the paths it came from"""

    def __init__(self, config_path: Optional[str] = None, overrides: Sequence[str] = ()):
        self.config_path = Path(config_path) if config_path else None
        self.overrides = list(overrides)
        self.config = load_config(config_path, self.overrides)

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    @property
    def solver(self) -> SolverConfig:
        return self.config.solver

    @property
    def cutoffs(self) -> Cutoffs:
        return self.config.cutoffs

    @property
    def seeds(self) -> Seeds:
        return self.config.seeds

    @property
    def is_quartic(self) -> bool:
        return self.config.model.kind == 'quartic'

    def with_output_dir(self, out: Optional[str]) -> 'ConfigManifest':
        """Point results at another directory (the CLI --out flag)"""
        if out:
            self.config = dataclasses.replace(self.config, output_dir=str(out))
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {'config_path': str(self.config_path) if self.config_path else None,
                'overrides': self.overrides,
                'config': self.config.to_dict()}
