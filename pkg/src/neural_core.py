"""
Neural Core - Dense Networks with Manual Backpropagation

Small float64 multilayer perceptrons for the actor and critics: orthogonal
initialization, forward pass with cached activations, exact reverse-mode
gradients, Adam, soft target updates, text checkpoints and a
finite-difference gradient check.

Weights are stored (out, in) and applied as y = x W^T + b on row batches.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'sigmoid', 'linear')
CHECKPOINT_HEADER = '# isac-aigc dense parameters v1'


class TrainingHaltedError(RuntimeError):
    """Raised when a training signal (loss, gradient, parameter) becomes non-finite."""
    pass


class NonFiniteGradientError(TrainingHaltedError):
    """Raised by the optimizer when a gradient contains NaN or inf."""
    pass


class ShapeError(ValueError):
    """Raised on input, gradient or parameter shape mismatch."""
    pass


class StaleCacheError(RuntimeError):
    """Raised when backward is called with a cache from before a parameter update."""
    pass


class CheckpointError(Exception):
    """Raised when a checkpoint cannot be read or does not match the network."""
    pass


# ============================================
# ACTIVATIONS
# ============================================

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == 'relu':
        return np.maximum(z, 0.0)
    if kind == 'sigmoid':
        return sigmoid(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == 'relu':
        return (z > 0).astype(np.float64)
    if kind == 'sigmoid':
        return a * (1.0 - a)
    return np.ones_like(z)


# ============================================
# PARAMETERS
# ============================================

@dataclass
class DenseNetSpec:
    """
    Architecture of one dense network.

    Attributes:
        layer_sizes: [input, hidden..., output]; at least one hidden layer
        activations: One of relu/sigmoid/linear per affine layer
        hidden_gain: Orthogonal init gain of hidden layers
        output_gain: Orthogonal init gain of the final layer
    """
    layer_sizes: List[int]
    activations: List[str]
    hidden_gain: float = 1.0
    output_gain: float = 1.0

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        self.activations = list(self.activations)
        if len(self.layer_sizes) < 3:
            raise ShapeError(f"need at least one hidden layer, got sizes {self.layer_sizes}")
        if any(s < 1 for s in self.layer_sizes):
            raise ShapeError(f"layer sizes must be positive, got {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ShapeError(
                f"{len(self.layer_sizes) - 1} affine layers need as many activations, got {self.activations}"
            )
        unknown = [a for a in self.activations if a not in ACTIVATIONS]
        if unknown:
            raise ShapeError(f"unknown activations {unknown}; allowed {ACTIVATIONS}")

    @classmethod
    def mlp(cls, n_in: int, hidden: Sequence[int], n_out: int, output: str = 'linear',
            output_gain: float = 1.0) -> 'DenseNetSpec':
        """ReLU hidden layers with a chosen output activation."""
        return cls(
            layer_sizes=[n_in, *hidden, n_out],
            activations=['relu'] * len(hidden) + [output],
            output_gain=output_gain,
        )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class ParameterSet:
    """
    Weight matrices and bias vectors plus Adam state.

    ``version`` increases on every in-place update so stale caches are
    detectable.
    """
    arrays: List[np.ndarray]
    step: int = 0
    m: Optional[List[np.ndarray]] = None
    v: Optional[List[np.ndarray]] = None
    version: int = 0

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [a.shape for a in self.arrays]

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.arrays))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.size:
            raise ShapeError(f"expected {self.size} values, got {values.size}")
        offset = 0
        for a in self.arrays:
            a[...] = values[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        self.version += 1

    def assign(self, arrays: Sequence[np.ndarray]) -> None:
        """Copy values in, keeping shapes fixed."""
        if [np.shape(a) for a in arrays] != self.shapes:
            raise ShapeError(f"shape mismatch: {[np.shape(a) for a in arrays]} vs {self.shapes}")
        for dst, src in zip(self.arrays, arrays):
            dst[...] = src
        self.version += 1

    def copy(self) -> 'ParameterSet':
        """Deep copy of the values (optimizer state is not copied)."""
        return ParameterSet(arrays=[a.copy() for a in self.arrays])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays)


def orthogonal_init(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """
    (Semi-)orthogonal matrix via QR of a Gaussian with sign correction.

    For rows <= cols the rows are orthonormal (W W^T = gain^2 I), otherwise
    the columns are.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"rows and cols must be >= 1, got ({rows}, {cols})")
    flattened = rng.standard_normal((rows, cols))
    if rows < cols:
        flattened = flattened.T
    q, r = np.linalg.qr(flattened)
    d = np.diag(r)
    q = q * np.where(d < 0, -1.0, 1.0)
    if rows < cols:
        q = q.T
    return gain * q


# ============================================
# NETWORK
# ============================================

@dataclass
class ForwardCache:
    """Everything backward needs from one forward pass."""
    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    version: int = -1
    squeeze: bool = False


class DenseNet:
    """
    Multilayer perceptron over row batches.

    Example:
        >>> net = DenseNet(DenseNetSpec.mlp(20, [256, 128], 1), rng)
        >>> y, cache = net.forward(x)
        >>> grads, dx = net.backward(cache, np.ones_like(y))
    """

    def __init__(self, spec: DenseNetSpec, rng: Optional[np.random.Generator] = None,
                 params: Optional[ParameterSet] = None):
        self.spec = spec
        if params is None:
            if rng is None:
                raise ValueError("rng is required to initialize parameters")
            params = ParameterSet(arrays=self._init_arrays(rng))
        elif params.shapes != self.expected_shapes():
            raise ShapeError(f"parameter shapes {params.shapes} do not match spec {self.expected_shapes()}")
        self.params = params

    def expected_shapes(self) -> List[Tuple[int, ...]]:
        shapes = []
        for n_in, n_out in zip(self.spec.layer_sizes[:-1], self.spec.layer_sizes[1:]):
            shapes.extend([(n_out, n_in), (n_out,)])
        return shapes

    def _init_arrays(self, rng: np.random.Generator) -> List[np.ndarray]:
        arrays = []
        n_layers = len(self.spec.layer_sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(self.spec.layer_sizes[:-1], self.spec.layer_sizes[1:])):
            gain = self.spec.output_gain if i == n_layers - 1 else self.spec.hidden_gain
            arrays.append(orthogonal_init(n_out, n_in, gain, rng))
            arrays.append(np.zeros(n_out))
        return arrays

    @property
    def weights(self) -> List[np.ndarray]:
        return self.params.arrays[0::2]

    @property
    def biases(self) -> List[np.ndarray]:
        return self.params.arrays[1::2]

    def forward(self, x) -> Tuple[np.ndarray, ForwardCache]:
        """
        Affine + activation composition.

        Args:
            x: Input of shape (in,) or (batch, in)

        Returns:
            (output, cache); output has shape (out,) or (batch, out)

        Raises:
            ShapeError: If the input width does not match the spec
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.ndim != 2 or a.shape[1] != self.spec.input_size:
            raise ShapeError(f"expected input width {self.spec.input_size}, got shape {x.shape}")

        cache = ForwardCache(version=self.params.version, squeeze=squeeze)
        for W, b, kind in zip(self.weights, self.biases, self.spec.activations):
            cache.inputs.append(a)
            z = a @ W.T + b
            a = _activate(kind, z)
            cache.pre_activations.append(z)
            cache.outputs.append(a)

        return (a[0] if squeeze else a), cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Reverse-mode gradients of sum(output_grad * output).

        Returns:
            (parameter gradients in ParameterSet order, input gradient)

        Raises:
            StaleCacheError: If parameters changed since the forward pass
            ShapeError: If output_grad does not match the output
        """
        if cache.version != self.params.version:
            raise StaleCacheError("forward cache predates the last parameter update")

        g = np.asarray(output_grad, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.outputs[-1].shape:
            raise ShapeError(f"output_grad shape {g.shape} does not match output {cache.outputs[-1].shape}")

        grads: List[np.ndarray] = [None] * len(self.params.arrays)
        for layer in reversed(range(len(self.weights))):
            kind = self.spec.activations[layer]
            g = g * _activation_grad(kind, cache.pre_activations[layer], cache.outputs[layer])
            grads[2 * layer] = g.T @ cache.inputs[layer]
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ self.weights[layer]

        return grads, (g[0] if cache.squeeze else g)

    def copy(self) -> 'DenseNet':
        return DenseNet(self.spec, params=self.params.copy())


# ============================================
# OPTIMIZATION
# ============================================

def adam_step(params: ParameterSet, grads: Sequence[np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """
    One bias-corrected Adam update, in place.

    Raises:
        NonFiniteGradientError: If any gradient entry is NaN or inf
        ShapeError: If gradient shapes differ from the parameters
    """
    if [np.shape(g) for g in grads] != params.shapes:
        raise ShapeError(f"gradient shapes {[np.shape(g) for g in grads]} vs params {params.shapes}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient")

    if params.m is None:
        params.m = [np.zeros_like(a) for a in params.arrays]
        params.v = [np.zeros_like(a) for a in params.arrays]

    params.step += 1
    correction1 = 1.0 - beta1 ** params.step
    correction2 = 1.0 - beta2 ** params.step
    for a, g, m, v in zip(params.arrays, grads, params.m, params.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        a -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    params.version += 1


def soft_update(source: ParameterSet, target: ParameterSet, epsilon: float) -> None:
    """theta' <- epsilon theta + (1 - epsilon) theta', in place on ``target``."""
    if source.shapes != target.shapes:
        raise ShapeError(f"shape mismatch: {source.shapes} vs {target.shapes}")
    for s, t in zip(source.arrays, target.arrays):
        t[...] = epsilon * s + (1.0 - epsilon) * t
    target.version += 1


# ============================================
# CHECKPOINTS
# ============================================

def save_parameters(path, named: Dict[str, ParameterSet]) -> Path:
    """
    Write parameter sets to a text checkpoint.

    Format: a header line, then per array a line ``<name>.<index> <rows> <cols>``
    followed by ``rows`` lines of ``cols`` values in %.17g (exact float64
    round trip). Vectors are stored as one row.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(CHECKPOINT_HEADER + '\n')
        for name, pset in named.items():
            for i, array in enumerate(pset.arrays):
                matrix = np.atleast_2d(array)
                rows, cols = matrix.shape
                f.write(f"{name}.{i} {rows} {cols}\n")
                for row in matrix:
                    f.write(' '.join('%.17g' % value for value in row) + '\n')
    return path


def load_parameters(path) -> Dict[str, List[np.ndarray]]:
    """
    Read a text checkpoint into {name: [array, ...]} (vectors as 1-row matrices).

    Raises:
        CheckpointError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")

    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise CheckpointError(f"{path} is not a parameter checkpoint")

    named: Dict[str, List[np.ndarray]] = {}
    i = 1
    try:
        while i < len(lines):
            if not lines[i].strip():
                i += 1
                continue
            key, rows, cols = lines[i].split()
            rows, cols = int(rows), int(cols)
            values = [np.array(line.split(), dtype=np.float64) for line in lines[i + 1:i + 1 + rows]]
            matrix = np.vstack(values) if values else np.empty((0, cols))
            if matrix.shape != (rows, cols):
                raise CheckpointError(f"array {key} has shape {matrix.shape}, header says {(rows, cols)}")
            name, index = key.rsplit('.', 1)
            arrays = named.setdefault(name, [])
            if int(index) != len(arrays):
                raise CheckpointError(f"array {key} out of order")
            arrays.append(matrix)
            i += 1 + rows
    except ValueError as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e
    return named


def restore_parameters(pset: ParameterSet, arrays: Sequence[np.ndarray], name: str = '') -> None:
    """Load checkpoint arrays into an existing set, reshaping stored vectors."""
    if len(arrays) != len(pset.arrays):
        raise CheckpointError(f"{name}: checkpoint has {len(arrays)} arrays, network has {len(pset.arrays)}")
    reshaped = []
    for stored, current in zip(arrays, pset.arrays):
        if stored.size != current.size or (current.ndim == 2 and stored.shape != current.shape):
            raise CheckpointError(f"{name}: stored shape {stored.shape} does not fit {current.shape}")
        reshaped.append(stored.reshape(current.shape))
    pset.assign(reshaped)


# ============================================
# GRADIENT CHECK
# ============================================

@dataclass
class GradCheckResult:
    """Outcome of a finite-difference gradient check."""
    name: str
    points: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def near_relu_kink(spec: DenseNetSpec, cache: ForwardCache, margin: float) -> bool:
    """True if any ReLU pre-activation in ``cache`` lies within ``margin`` of zero."""
    return any(
        kind == 'relu' and np.min(np.abs(z)) < margin
        for kind, z in zip(spec.activations, cache.pre_activations)
    )


def gradient_check(net: DenseNet, rng: np.random.Generator, points: int = 200, h: float = 1e-5,
                   tolerance: float = 1e-4, input_scale: float = 1.0, kink_margin: float = 1e-3,
                   name: str = '') -> GradCheckResult:
    """
    Directional central finite differences against ``backward``.

    For each point: a random input x, random output weights w (loss
    sum(w * net(x))) and a random unit direction over parameters and input.
    Points whose ReLU pre-activations sit within ``kink_margin`` of zero
    are redrawn, since the loss is not differentiable there.

    Returns:
        GradCheckResult with the worst relative error
    """
    params = net.params
    theta = params.flat()
    worst = 0.0

    for _ in range(points):
        for _attempt in range(100):
            x = input_scale * rng.standard_normal(net.spec.input_size)
            y, cache = net.forward(x)
            if not near_relu_kink(net.spec, cache, kink_margin):
                break

        w = rng.standard_normal(net.spec.output_size)
        grads, dx = net.backward(cache, w)
        analytic_grad = np.concatenate([np.concatenate([g.ravel() for g in grads]), dx])

        direction = rng.standard_normal(analytic_grad.size)
        direction /= np.linalg.norm(direction)
        analytic = float(analytic_grad @ direction)

        d_theta, d_x = direction[:theta.size], direction[theta.size:]

        def loss(sign: float) -> float:
            params.set_flat(theta + sign * h * d_theta)
            return float(w @ net(x + sign * h * d_x))

        numeric = (loss(1.0) - loss(-1.0)) / (2 * h)
        params.set_flat(theta)
        worst = max(worst, relative_error(analytic, numeric))

    result = GradCheckResult(name=name, points=points, max_rel_error=worst, tolerance=tolerance)
    logger.debug("gradcheck %s: max rel error %.3e over %d points", name, worst, points)
    return result
