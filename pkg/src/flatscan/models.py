"""
flatscan models - the objective zoo

The quartic test function, quadratic/linear helpers, fully-connected
identity/Swish networks with mean-squared-error or cross-entropy loss, and
the analytic critical points of the linear autoencoder.

Network derivatives are written out layer by layer: reverse-mode backprop
for the gradient and the forward-over-reverse R-operator for
Hessian-vector products.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .data import Dataset, covariance_dataset, make_rng
from .diagnostics import morse_index
from .errors import DataError, DimensionError
from .fields import ScalarField, dense_hessian
from .linalg import DenseSymMatrix, ParamVector, as_vector, sym_eig

logger = logging.getLogger(__name__)

ACTIVATIONS = ('identity', 'swish')
LOSSES = ('mse', 'cross_entropy')

# default l2 coefficient when regularization is switched on without a value
DEFAULT_L2 = 1e-4


# ----------------------------------------------------------------------------
# Closed-form test objectives
# ----------------------------------------------------------------------------

def quartic_field() -> ScalarField:
    """f(x, y) = x^4/4 - 3x^2 + 9x + 0.9y^4 + 5y^2 + 40"""

    def value(t):
        x, y = t
        return 0.25 * x ** 4 - 3.0 * x ** 2 + 9.0 * x + 0.9 * y ** 4 + 5.0 * y ** 2 + 40.0

    def gradient(t):
        x, y = t
        return np.array([x ** 3 - 6.0 * x + 9.0, 3.6 * y ** 3 + 10.0 * y])

    def hessian(t):
        x, y = t
        return np.diag([3.0 * x ** 2 - 6.0, 10.8 * y ** 2 + 10.0])

    def hvp(t, v):
        return hessian(t) @ v

    return ScalarField(2, value, gradient, hvp, hessian, name='quartic')


def quadratic_field(A, c=None) -> ScalarField:
    """f(theta) = 1/2 theta^T A theta + c^T theta with symmetric A"""
    A = DenseSymMatrix(A).entries
    n = A.shape[0]
    c = np.zeros(n) if c is None else as_vector(c, n, name='c')

    return ScalarField(n,
                       lambda t: 0.5 * t @ A @ t + c @ t,
                       lambda t: A @ t + c,
                       lambda t, v: A @ v,
                       lambda t: A,
                       name='quadratic')


def linear_field(c) -> ScalarField:
    c = as_vector(c, name='c')
    zeros = np.zeros((c.shape[0], c.shape[0]))
    return ScalarField(c.shape[0],
                       lambda t: c @ t,
                       lambda t: c.copy(),
                       lambda t, v: np.zeros_like(v),
                       lambda t: zeros,
                       name='linear')


# ----------------------------------------------------------------------------
# Activations
# ----------------------------------------------------------------------------

def swish(x):
    """x * sigmoid(x)"""
    return x * expit(x)


def swish_prime(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def swish_second(x):
    s = expit(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


def _identity(x):
    return x


def _ones(x):
    return np.ones_like(x)


def _zeros(x):
    return np.zeros_like(x)


_ACTIVATION_RULES = {
    'identity': (_identity, _ones, _zeros),
    'swish': (swish, swish_prime, swish_second),
}


# ----------------------------------------------------------------------------
# Fully-connected networks
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture of a fully-connected network.

    layer_widths lists input, hidden and output widths. The activation acts
    on hidden layers only; the output layer is affine (logits for
    cross-entropy). Parameters are flattened layer by layer as W (fan_in x
    fan_out, row-major) followed by b when biases are used.
    """
    layer_widths: Tuple[int, ...]
    activation: str = 'swish'
    use_biases: bool = False
    loss_kind: str = 'mse'
    l2_coeff: float = 0.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, 'layer_widths', widths)
        if len(widths) < 3:
            raise DimensionError("a network needs input, at least one hidden and an output width")
        if any(w < 1 for w in widths):
            raise DimensionError(f"layer widths must be positive: {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.loss_kind not in LOSSES:
            raise ValueError(f"unknown loss {self.loss_kind!r}; expected one of {LOSSES}")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be non-negative")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    @property
    def param_count(self) -> int:
        return sum(a * b + (b if self.use_biases else 0) for a, b in self.layer_shapes)

    def unflatten(self, theta: ParamVector) -> List[Tuple[np.ndarray, Optional[np.ndarray]]]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.param_count,):
            raise DimensionError(f"expected {self.param_count} parameters, got {theta.shape}")
        layers = []
        pos = 0
        for fan_in, fan_out in self.layer_shapes:
            W = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = None
            if self.use_biases:
                b = theta[pos:pos + fan_out]
                pos += fan_out
            layers.append((W, b))
        return layers

    def flatten(self, layers: Sequence[Tuple[np.ndarray, Optional[np.ndarray]]]) -> ParamVector:
        parts = []
        for (W, b), (fan_in, fan_out) in zip(layers, self.layer_shapes):
            parts.append(np.asarray(W, dtype=np.float64).reshape(fan_in * fan_out))
            if self.use_biases:
                parts.append(np.zeros(fan_out) if b is None else np.asarray(b, dtype=np.float64))
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {'layer_widths': list(self.layer_widths), 'activation': self.activation,
                'use_biases': self.use_biases, 'loss_kind': self.loss_kind,
                'l2_coeff': self.l2_coeff}


def init_params(spec: NetworkSpec, seed: int) -> ParamVector:
    """uniform(-a, a) with a = 1/sqrt(fan_in) for every weight and bias of a layer"""
    rng = make_rng(seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes:
        a = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-a, a, size=(fan_in, fan_out))
        b = rng.uniform(-a, a, size=fan_out) if spec.use_biases else None
        layers.append((W, b))
    return spec.flatten(layers)


class _Network:
    """Full-batch loss of a network on a fixed dataset"""

    def __init__(self, spec: NetworkSpec, data: Dataset):
        widths = spec.layer_widths
        if data.d != widths[0]:
            raise DimensionError(f"data has {data.d} input columns, network expects {widths[0]}")
        if spec.loss_kind == 'cross_entropy':
            if data.targets is None:
                raise DataError("cross-entropy loss needs label data")
            targets = data.targets
        else:
            # mse without targets is an autoencoder
            targets = data.inputs if data.targets is None else data.targets
        if targets.shape[1] != widths[-1]:
            raise DimensionError(
                f"targets have {targets.shape[1]} columns, network outputs {widths[-1]}")
        self.spec = spec
        self.X = data.inputs
        self.Y = targets
        self.m = data.m
        self.act, self.act_d1, self.act_d2 = _ACTIVATION_RULES[spec.activation]
        if spec.loss_kind == 'cross_entropy':
            self.row_mass = targets.sum(axis=1, keepdims=True)

    def _forward(self, layers):
        acts = [self.X]
        zs = []
        last = len(layers) - 1
        for l, (W, b) in enumerate(layers):
            z = acts[-1] @ W
            if b is not None:
                z = z + b
            zs.append(z)
            if l < last:
                acts.append(self.act(z))
        return acts, zs

    def predict(self, theta: ParamVector) -> np.ndarray:
        _, zs = self._forward(self.spec.unflatten(theta))
        return zs[-1]

    def _data_loss(self, out: np.ndarray) -> float:
        if self.spec.loss_kind == 'mse':
            diff = out - self.Y
            return float(np.sum(diff * diff) / self.m)
        return float(np.sum(logsumexp(out, axis=1) * self.row_mass[:, 0] - np.sum(out * self.Y, axis=1)) / self.m)

    def _output_delta(self, out: np.ndarray) -> np.ndarray:
        if self.spec.loss_kind == 'mse':
            return 2.0 * (out - self.Y) / self.m
        return (softmax(out, axis=1) * self.row_mass - self.Y) / self.m

    def value(self, theta: ParamVector) -> float:
        _, zs = self._forward(self.spec.unflatten(theta))
        loss = self._data_loss(zs[-1])
        if self.spec.l2_coeff:
            loss += self.spec.l2_coeff * float(theta @ theta)
        return loss

    def gradient(self, theta: ParamVector) -> ParamVector:
        layers = self.spec.unflatten(theta)
        acts, zs = self._forward(layers)
        delta = self._output_delta(zs[-1])
        grads = [None] * len(layers)
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            gW = acts[l].T @ delta
            gb = delta.sum(axis=0) if self.spec.use_biases else None
            grads[l] = (gW, gb)
            if l > 0:
                delta = (delta @ W.T) * self.act_d1(zs[l - 1])
        g = self.spec.flatten(grads)
        if self.spec.l2_coeff:
            g = g + 2.0 * self.spec.l2_coeff * theta
        return g

    def hvp(self, theta: ParamVector, v: ParamVector) -> ParamVector:
        layers = self.spec.unflatten(theta)
        dlayers = self.spec.unflatten(v)
        acts, zs = self._forward(layers)
        last = len(layers) - 1

        # forward pass of directional derivatives
        r_acts = [None]
        r_zs = []
        for l, ((W, _), (dW, db)) in enumerate(zip(layers, dlayers)):
            rz = acts[l] @ dW
            if l > 0:
                rz = rz + r_acts[l] @ W
            if db is not None:
                rz = rz + db
            r_zs.append(rz)
            if l < last:
                r_acts.append(self.act_d1(zs[l]) * rz)

        out = zs[-1]
        delta = self._output_delta(out)
        if self.spec.loss_kind == 'mse':
            r_delta = 2.0 * r_zs[-1] / self.m
        else:
            s = softmax(out, axis=1)
            rs = s * (r_zs[-1] - np.sum(s * r_zs[-1], axis=1, keepdims=True))
            r_delta = rs * self.row_mass / self.m

        # backward pass
        hv = [None] * len(layers)
        for l in range(last, -1, -1):
            W, _ = layers[l]
            dW, _ = dlayers[l]
            r_gW = acts[l].T @ r_delta
            if l > 0:
                r_gW = r_gW + r_acts[l].T @ delta
            r_gb = r_delta.sum(axis=0) if self.spec.use_biases else None
            hv[l] = (r_gW, r_gb)
            if l > 0:
                back = delta @ W.T
                r_back = r_delta @ W.T + delta @ dW.T
                z = zs[l - 1]
                d1 = self.act_d1(z)
                delta_prev = back * d1
                r_delta = r_back * d1 + back * self.act_d2(z) * r_zs[l - 1]
                delta = delta_prev
        out_v = self.spec.flatten(hv)
        if self.spec.l2_coeff:
            out_v = out_v + 2.0 * self.spec.l2_coeff * v
        return out_v


def network_field(spec: NetworkSpec, data: Dataset) -> ScalarField:
    """Full-batch loss (plus l2_coeff * |theta|^2) of a network on a dataset"""
    net = _Network(spec, data)
    name = f"{spec.activation}-{'x'.join(str(w) for w in spec.layer_widths)}-{spec.loss_kind}"
    field = ScalarField(spec.param_count, net.value, net.gradient, net.hvp, name=name)
    field.network = net
    return field


def accuracy(spec: NetworkSpec, data: Dataset, theta: ParamVector) -> float:
    """Fraction of rows whose largest output matches the largest target entry"""
    if data.targets is None:
        raise DataError("accuracy needs targets")
    net = _Network(spec, data)
    out = net.predict(as_vector(theta, spec.param_count, name='theta'))
    return float(np.mean(np.argmax(out, axis=1) == np.argmax(data.targets, axis=1)))


# ----------------------------------------------------------------------------
# Linear autoencoder critical points
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalPointRecord:
    params: np.ndarray
    loss: float
    morse_index: float
    provenance: str = 'analytic'
    subset: Tuple[int, ...] = ()
    sq_grad_norm: float = 0.0

    def to_dict(self) -> dict:
        return {'loss': self.loss, 'morse_index': self.morse_index, 'provenance': self.provenance,
                'subset': list(self.subset), 'sq_grad_norm': self.sq_grad_norm}


def linear_ae_spec(d: int, hidden_width: int) -> NetworkSpec:
    return NetworkSpec((d, hidden_width, d), activation='identity', use_biases=False,
                       loss_kind='mse', l2_coeff=0.0)


def covariance_field(eigenvalues: Sequence[float], hidden_width: int,
                     eigenvectors: Optional[np.ndarray] = None) -> ScalarField:
    """Linear-autoencoder loss tr((I - W)^T C (I - W)) for C = V diag(eigenvalues) V^T"""
    data = covariance_dataset(eigenvalues, eigenvectors)
    return network_field(linear_ae_spec(data.d, hidden_width), data)


def linear_ae_critical_points(cov_eigenvalues: Sequence[float], hidden_width: int,
                              eigenvectors: Optional[np.ndarray] = None,
                              morse_tol: float = 1e-10) -> List[CriticalPointRecord]:
    """
    Enumerate the isolated critical points of a linear autoencoder.

    For every subset S of at most hidden_width eigen-directions the encoder
    holds the selected eigenvectors in its first |S| columns (zeros after),
    the decoder is its transpose, and the loss is the sum of the eigenvalues
    left out. The Morse index comes from the dense Hessian at that point.
    """
    lam = np.asarray(cov_eigenvalues, dtype=np.float64)
    d = lam.shape[0]
    if np.any(lam <= 0):
        raise DataError("covariance eigenvalues must be positive")
    if np.unique(lam).shape[0] != d:
        raise DataError("repeated covariance eigenvalues give degenerate critical manifolds")
    if not 1 <= hidden_width <= d:
        raise DimensionError(f"hidden width {hidden_width} outside [1, {d}]")
    V = np.eye(d) if eigenvectors is None else np.asarray(eigenvectors, dtype=np.float64)

    spec = linear_ae_spec(d, hidden_width)
    field = covariance_field(lam, hidden_width, V)
    total = float(lam.sum())
    records = []
    for size in range(hidden_width + 1):
        for S in itertools.combinations(range(d), size):
            W1 = np.zeros((d, hidden_width))
            if size:
                W1[:, :size] = V[:, list(S)]
            theta = spec.flatten([(W1, None), (W1.T, None)])
            spectrum = sym_eig(dense_hessian(field, theta))
            records.append(CriticalPointRecord(
                params=theta,
                loss=total - float(lam[list(S)].sum()),
                morse_index=morse_index(spectrum, morse_tol),
                provenance='analytic',
                subset=tuple(S),
                sq_grad_norm=field.sq_grad_norm(theta)))
    logger.debug("enumerated %d linear autoencoder critical points (d=%d, k=%d)",
                 len(records), d, hidden_width)
    return records


def linear_ae_critical_points_for(data: Dataset, hidden_width: int,
                                  morse_tol: float = 1e-10) -> List[CriticalPointRecord]:
    """Critical points of the linear autoencoder loss on a concrete dataset"""
    second_moment = DenseSymMatrix(data.inputs.T @ data.inputs / data.m)
    spectrum = sym_eig(second_moment)
    return linear_ae_critical_points(spectrum.eigenvalues, hidden_width,
                                     eigenvectors=spectrum.eigenvectors, morse_tol=morse_tol)
