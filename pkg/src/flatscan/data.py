"""
flatscan data - dataset generation and ingestion
Synthetic Gaussian data, a Gaussian-mixture classification surrogate,
CSV loading/saving, z-scoring, PCA projection and label shuffling.

Every random draw goes through make_rng: numpy's Generator over the
counter-based Philox bit generator keyed directly by the integer seed, so a
seed names the same stream on every platform and numpy release that keeps
Philox stable.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, DimensionError
from .linalg import DenseSymMatrix, sym_eig

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """Portable generator: Philox keyed by the seed"""
    if seed < 0:
        raise ValueError("seeds must be non-negative integers")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Inputs (m x d), optional targets (m x c) and provenance metadata"""
    inputs: np.ndarray
    targets: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        inputs = _frozen(self.inputs)
        if inputs.ndim != 2:
            raise DimensionError(f"inputs must be a matrix, got shape {inputs.shape}")
        if not np.all(np.isfinite(inputs)):
            raise DataError("inputs contain non-finite values")
        object.__setattr__(self, 'inputs', inputs)
        if self.targets is not None:
            targets = _frozen(self.targets)
            if targets.ndim == 1:
                targets = _frozen(targets.reshape(-1, 1))
            if targets.shape[0] != inputs.shape[0]:
                raise DimensionError(
                    f"targets have {targets.shape[0]} rows but inputs have {inputs.shape[0]}")
            if not np.all(np.isfinite(targets)):
                raise DataError("targets contain non-finite values")
            object.__setattr__(self, 'targets', targets)
        object.__setattr__(self, 'meta', dict(self.meta))

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def c(self) -> int:
        return 0 if self.targets is None else self.targets.shape[1]

    def with_meta(self, **updates) -> 'Dataset':
        meta = dict(self.meta)
        meta.update(updates)
        return Dataset(self.inputs, self.targets, meta)

    def to_meta_json(self) -> Dict[str, Any]:
        return {'m': self.m, 'd': self.d, 'c': self.c, 'meta': self.meta}


def gaussian_dataset(m: int, d: int, seed: int) -> Dataset:
    """m draws from N(0, diag(linspace(1, d, d))), then exactly mean-centered"""
    if m < 2 or d < 1:
        raise DataError(f"gaussian_dataset needs m >= 2 and d >= 1, got m={m}, d={d}")
    rng = make_rng(seed)
    variances = np.linspace(1.0, float(d), d)
    X = rng.standard_normal((m, d)) * np.sqrt(variances)
    X = X - X.mean(axis=0)
    return Dataset(X, None, {'provenance': 'gaussian', 'seed': seed,
                             'variances': variances.tolist()})


def one_hot(labels: Sequence[int], classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def gaussian_mixture_dataset(m: int, d: int, classes: int, seed: int,
                             separation: float = 3.0) -> Dataset:
    """
    Balanced Gaussian mixture with one-hot targets.

    Stands in for the downsampled digit images: class centers are drawn from
    N(0, separation^2 I / d) so the mixture is neither trivially separable
    nor hopeless.
    """
    if classes < 2 or m < classes:
        raise DataError(f"need at least two classes and one example per class, "
                        f"got m={m}, classes={classes}")
    rng = make_rng(seed)
    centers = rng.standard_normal((classes, d)) * (separation / np.sqrt(d))
    labels = rng.permutation(np.arange(m) % classes)
    X = centers[labels] + rng.standard_normal((m, d)) / np.sqrt(d)
    return Dataset(X, one_hot(labels, classes),
                   {'provenance': 'gaussian_mixture', 'seed': seed,
                    'classes': classes, 'separation': separation})


def covariance_dataset(eigenvalues: Sequence[float],
                       eigenvectors: Optional[np.ndarray] = None) -> Dataset:
    """Tiny dataset whose second-moment matrix X^T X / m equals V diag(eigenvalues) V^T"""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if np.any(lam < 0):
        raise DataError("covariance eigenvalues must be non-negative")
    d = lam.shape[0]
    V = np.eye(d) if eigenvectors is None else np.asarray(eigenvectors, dtype=np.float64)
    if V.shape != (d, d):
        raise DimensionError(f"eigenvectors must be {d}x{d}")
    X = np.sqrt(d) * (np.sqrt(lam)[:, None] * V.T)
    return Dataset(X, None, {'provenance': 'covariance', 'eigenvalues': lam.tolist()})


def zscore(data: Dataset) -> Dataset:
    """Center and scale every column to unit variance; constant columns pass through"""
    X = np.array(data.inputs)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    scale_floor = 1e-12 * max(1.0, float(np.max(np.abs(X))) if X.size else 1.0)
    constant = [int(j) for j in np.flatnonzero(stds <= scale_floor)]
    varying = stds > scale_floor
    X[:, varying] = (X[:, varying] - means[varying]) / stds[varying]
    if constant:
        logger.warning("z-score: %d constant column(s) left unscaled: %s", len(constant), constant)
    return Dataset(X, data.targets, dict(data.meta, zscored=True, zscore_constant_columns=constant))


def pca_components(data: Dataset, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean, top-k principal directions (d x k) and the full descending
    eigenvalue list of the input covariance.
    """
    if not 1 <= k <= data.d:
        raise DataError(f"PCA dimension k={k} outside [1, {data.d}]")
    mean = data.inputs.mean(axis=0)
    Xc = data.inputs - mean
    cov = DenseSymMatrix(Xc.T @ Xc / data.m)
    spectrum = sym_eig(cov)
    order = np.argsort(spectrum.eigenvalues)[::-1]
    vals = spectrum.eigenvalues[order]
    comps = np.array(spectrum.eigenvectors[:, order[:k]])
    # fix the sign of each direction for reproducible projections
    pivots = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    return mean, comps * signs, vals


def pca_project(data: Dataset, k: int) -> Dataset:
    """Project centered inputs onto the top-k principal components"""
    mean, comps, vals = pca_components(data, k)
    Z = (data.inputs - mean) @ comps
    total = float(np.sum(np.clip(vals, 0.0, None)))
    retained = float(np.sum(np.clip(vals[:k], 0.0, None)) / total) if total > 0 else 1.0
    return Dataset(Z, data.targets, dict(data.meta, pca_k=k, pca_retained_variance=retained))


def shuffle_labels(data: Dataset, seed: int) -> Dataset:
    """Permute target rows with a seeded permutation; inputs untouched"""
    if data.targets is None:
        raise DataError("shuffle_labels needs a dataset with targets")
    perm = make_rng(seed).permutation(data.m)
    return Dataset(data.inputs, data.targets[perm], dict(data.meta, labels_shuffled=seed))


def subset(data: Dataset, m: int, seed: int) -> Dataset:
    """Seeded subset of m rows, kept in their original order"""
    if not 1 <= m <= data.m:
        raise DataError(f"subset size {m} outside [1, {data.m}]")
    rows = np.sort(make_rng(seed).choice(data.m, size=m, replace=False))
    targets = None if data.targets is None else data.targets[rows]
    return Dataset(data.inputs[rows], targets, dict(data.meta, subset=m, subset_seed=seed))


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r}", row=row, column=col) from None


def load_csv(path: Union[str, Path],
             target_columns: Sequence[Union[int, str]] = (),
             one_hot_classes: Optional[int] = None,
             has_header: Optional[bool] = None) -> Dataset:
    """
    Read a rectangular numeric CSV file into a Dataset.

    target_columns selects target columns by 0-based index (negative indices
    count from the end) or by header name; the remaining columns are inputs.
    With one_hot_classes=C a single integer label column becomes an m x C
    one-hot matrix. has_header=None detects a header row by the presence of
    a non-numeric cell in the first row. Rows and columns in error messages
    are 1-based file positions.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}")
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = [r for r in csv.reader(f)]
    # trailing blank lines are not data
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError(f"CSV file is empty: {path}")

    header: Optional[List[str]] = None
    if has_header is None:
        has_header = any(not _is_number(cell) for cell in rows[0])
    first_data_row = 1
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        first_data_row = 2
    if not rows:
        raise DataError(f"CSV file has no data rows: {path}")

    width = len(header) if header is not None else len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_data_row
        if len(row) != width:
            raise DataError(f"ragged row with {len(row)} cells, expected {width}", row=line)
        for j, cell in enumerate(row):
            values[i, j] = _parse_float(cell.strip(), line, j + 1)

    target_idx = [_column_index(c, header, width) for c in target_columns]
    input_idx = [j for j in range(width) if j not in target_idx]
    if not input_idx:
        raise DataError("every column was selected as a target")
    inputs = values[:, input_idx]
    targets = None
    if target_idx:
        targets = values[:, target_idx]
        if one_hot_classes is not None:
            if len(target_idx) != 1:
                raise DataError("one-hot encoding needs exactly one label column")
            labels = targets[:, 0]
            if np.any(labels != np.round(labels)):
                raise DataError("label column must hold integers for one-hot encoding")
            targets = one_hot(labels.astype(np.int64), one_hot_classes)
    meta = {'provenance': f'csv:{path.name}', 'columns': header, 'target_columns': target_idx}
    return Dataset(inputs, targets, meta)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _column_index(col: Union[int, str], header: Optional[List[str]], width: int) -> int:
    if isinstance(col, str):
        if header is None or col not in header:
            raise DataError(f"target column {col!r} not found in header")
        return header.index(col)
    idx = col + width if col < 0 else col
    if not 0 <= idx < width:
        raise DataError(f"target column index {col} outside a {width}-column file")
    return idx


def save_csv(data: Dataset, path: Union[str, Path]) -> Path:
    """Write inputs then targets with header x0..x{d-1}, y0..y{c-1}"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{j}" for j in range(data.d)] + [f"y{j}" for j in range(data.c)]
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(data.m):
            row = list(data.inputs[i])
            if data.targets is not None:
                row += list(data.targets[i])
            writer.writerow([repr(float(v)) for v in row])
    return path
