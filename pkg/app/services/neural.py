"""Fully connected ReLU networks with a softmax head, trained by mini-batch backprop.

Weights are stored input-major (``n_in x n_out``) so that a layer is ``x @ W + b``
and the crossbar export is simply ``W`` with ``b`` stacked underneath.
"""
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from app.errors import ConfigError, DataError, ShapeError, TrainingError
from app.services.analog_core import BASELINE_WIDTHS, PIXEL_LEVELS

logger = logging.getLogger(__name__)

LOSS_EPSILON = 1e-12
WEIGHTS_FILE_VERSION = 1
OPTIMIZERS = ('sgd', 'adam')
INPUT_SCALINGS = ('none', 'standardize', 'unit_max')


@dataclass(frozen=True)
class MLPSpec:
    input_width: int
    hidden_widths: tuple
    output_width: int

    def __post_init__(self):
        object.__setattr__(self, 'hidden_widths', tuple(int(w) for w in self.hidden_widths))
        widths = self.layer_widths
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")

    @property
    def layer_widths(self):
        return (self.input_width, *self.hidden_widths, self.output_width)

    @property
    def name(self):
        if len(self.hidden_widths) == 1:
            return f"MLP({self.hidden_widths[0]},)"
        return "MLP(" + ",".join(str(w) for w in self.hidden_widths) + ")"

    def to_dict(self):
        return {
            'input_width': self.input_width,
            'hidden_widths': list(self.hidden_widths),
            'output_width': self.output_width,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['input_width']), tuple(data['hidden_widths']), int(data['output_width']))


BASELINE_SPEC = MLPSpec(BASELINE_WIDTHS[0], BASELINE_WIDTHS[1:-1], BASELINE_WIDTHS[-1])


@dataclass
class MLPParams:
    spec: MLPSpec
    weights: list
    biases: list
    metrics: dict = field(default_factory=dict)
    input_scaling: str = 'none'
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None

    def __post_init__(self):
        if self.input_scaling not in INPUT_SCALINGS:
            raise ConfigError(f"unknown input scaling '{self.input_scaling}'")
        widths = self.spec.layer_widths
        expected = list(zip(widths[:-1], widths[1:]))
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise ShapeError(f"{self.spec.name} needs {len(expected)} layers")
        for (n_in, n_out), w, b in zip(expected, self.weights, self.biases):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(f"layer shapes {w.shape}/{b.shape} do not match {(n_in, n_out)}")

    def tensors(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def copy(self):
        return MLPParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         dict(self.metrics), self.input_scaling, self.input_shift, self.input_scale)

    def scale_inputs(self, x):
        """Apply the input transform fixed at training time."""
        if self.input_scaling == 'standardize':
            return (x - self.input_shift) / self.input_scale
        if self.input_scaling == 'unit_max':
            peak = np.max(np.abs(x), axis=-1, keepdims=True)
            return np.divide(x, peak, out=np.zeros_like(x), where=peak > 0)
        return x


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 60
    batch_size: int = 64
    rng_seed: int = 0
    optimizer: str = 'adam'
    patience: int = 10
    validation_fraction: float = 0.1
    input_scaling: str = 'none'

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(f"validation fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.input_scaling not in INPUT_SCALINGS:
            raise ConfigError(f"unknown input scaling '{self.input_scaling}', expected one of {INPUT_SCALINGS}")

    @classmethod
    def from_dict(cls, data, **overrides):
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        unknown = set(data or {}) - set(known)
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        known.update(overrides)
        return cls(**known)


def param_count(spec):
    widths = spec.layer_widths
    return sum(n_in * n_out + n_out for n_in, n_out in zip(widths[:-1], widths[1:]))


def init_params(spec, rng):
    """Uniform fan-in scaled weights, zero biases."""
    widths = spec.layer_widths
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MLPParams(spec, weights, biases)


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _forward_pass(params, x):
    activations = [x]
    pre_activations = []
    a = x
    last = len(params.weights) - 1
    for index, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre_activations.append(z)
        a = z if index == last else np.maximum(z, 0.0)
        activations.append(a)
    return pre_activations, activations


def _as_batch(params, inputs):
    x = np.asarray(inputs, dtype=float)
    if x.shape[-1] != params.spec.input_width:
        raise ShapeError(f"{params.spec.name} takes {params.spec.input_width} inputs, got {x.shape[-1]}")
    return params.scale_inputs(x)


def logits(params, inputs):
    x = _as_batch(params, inputs)
    _, activations = _forward_pass(params, np.atleast_2d(x))
    out = activations[-1]
    return out[0] if x.ndim == 1 else out


def forward(params, inputs):
    """Class probabilities for one input vector or a batch of row vectors."""
    return softmax(logits(params, inputs))


def predict(params, inputs):
    return np.argmax(logits(params, inputs), axis=-1)


def cross_entropy_loss(predicted, label):
    p = np.asarray(predicted, dtype=float)
    return float(-np.log(max(p[label], LOSS_EPSILON)))


def batch_loss(probabilities, labels):
    picked = probabilities[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, LOSS_EPSILON))))


def loss_and_gradients(params, x, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. every weight and bias."""
    x = np.atleast_2d(_as_batch(params, x))
    labels = np.asarray(labels, dtype=int)
    pre_activations, activations = _forward_pass(params, x)
    probabilities = softmax(activations[-1])
    loss = batch_loss(probabilities, labels)

    n = x.shape[0]
    delta = probabilities.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for index in reversed(range(len(params.weights))):
        grad_w[index] = activations[index].T @ delta
        grad_b[index] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ params.weights[index].T) * (pre_activations[index - 1] > 0)
    return loss, grad_w, grad_b


class _SGD:
    def __init__(self, learning_rate):
        self.learning_rate = learning_rate

    def step(self, tensors, grads):
        for t, g in zip(tensors, grads):
            t -= self.learning_rate * g


class _Adam:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, tensors, grads):
        if self.m is None:
            self.m = [np.zeros_like(t) for t in tensors]
            self.v = [np.zeros_like(t) for t in tensors]
        self.t += 1
        correction1 = 1 - self.beta1 ** self.t
        correction2 = 1 - self.beta2 ** self.t
        for t, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            t -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def _make_optimizer(config):
    if config.optimizer == 'adam':
        return _Adam(config.learning_rate)
    return _SGD(config.learning_rate)


def accuracy_of(params, x, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float('nan')
    return float(np.mean(predict(params, x) == labels))


def train(spec, x, labels, config, validation=None):
    """Fit ``spec`` to (x, labels) with mini-batch gradient descent on cross-entropy.

    ``validation`` is an optional (x, labels) pair used for early stopping; without
    it a seeded ``validation_fraction`` of the data is held out (or, at fraction 0,
    the training loss is monitored). The parameters of the best monitored epoch
    are returned.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if len(x) != len(labels):
        raise ShapeError(f"{len(x)} inputs but {len(labels)} labels")
    if np.any(labels < 0) or np.any(labels >= spec.output_width):
        raise TrainingError(f"labels must lie in 0..{spec.output_width - 1}")

    rng = np.random.default_rng(config.rng_seed)
    if validation is None and config.validation_fraction > 0 and len(x) > 1:
        order = rng.permutation(len(x))
        n_val = max(1, int(len(x) * config.validation_fraction))
        val_idx, train_idx = order[:n_val], order[n_val:]
        validation = (x[val_idx], labels[val_idx])
        x, labels = x[train_idx], labels[train_idx]
    monitor = validation if validation is not None else (x, labels)
    monitor_x = np.asarray(monitor[0], dtype=float)
    monitor_y = np.asarray(monitor[1], dtype=int)

    params = init_params(spec, rng)
    params.input_scaling = config.input_scaling
    if config.input_scaling == 'standardize':
        spread = x.std(axis=0)
        params.input_shift = x.mean(axis=0)
        params.input_scale = np.where(spread > 0, spread, 1.0)
    optimizer = _make_optimizer(config)
    tensors = list(params.tensors())

    best_loss = np.inf
    best = params.copy()
    stale = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grad_w, grad_b = loss_and_gradients(params, x[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"{spec.name}: non-finite loss at epoch {epochs_run}")
            grads = [g for pair in zip(grad_w, grad_b) for g in pair]
            optimizer.step(tensors, grads)

        monitor_loss = batch_loss(forward(params, monitor_x), monitor_y)
        if not np.isfinite(monitor_loss):
            raise TrainingError(f"{spec.name}: non-finite monitored loss at epoch {epochs_run}")
        if monitor_loss < best_loss:
            best_loss = monitor_loss
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.debug("%s: early stop at epoch %d", spec.name, epochs_run)
                break

    best.metrics = {
        'train_accuracy': accuracy_of(best, x, labels),
        'validation_accuracy': accuracy_of(best, monitor_x, monitor_y),
        'monitored_loss': float(best_loss),
        'epochs_run': epochs_run,
    }
    logger.info("%s trained: train acc %.4f, validation acc %.4f after %d epochs", spec.name,
                best.metrics['train_accuracy'], best.metrics['validation_accuracy'], epochs_run)
    return best


def pixels_to_inputs(pixels):
    """Software encoding of pixel intensities, identical to the circuit's read voltages."""
    return np.asarray(pixels, dtype=float) / PIXEL_LEVELS


def train_baseline(train_pixels, train_labels, test_pixels, test_labels, config,
                   min_accuracy=0.947, restarts=4, screen=None):
    """Train the 64-50-20-8-10 classifier, restarting with the next seed until a
    candidate reaches ``min_accuracy`` on the test split.

    ``screen(params)`` optionally returns a list of objections to an otherwise
    acceptable candidate. Restarts continue past objected candidates; when every
    attempt is objected to, the first accurate one is returned with its
    objections recorded under ``screen_failures``.
    """
    if config.input_scaling != 'none':
        raise ConfigError("the baseline reads raw pixel voltages; input scaling must be 'none'")
    x_test = pixels_to_inputs(test_pixels)
    best = None
    fallback = None
    for attempt in range(restarts + 1):
        attempt_config = replace(config, rng_seed=config.rng_seed + attempt)
        params = train(BASELINE_SPEC, pixels_to_inputs(train_pixels), train_labels, attempt_config)
        params.metrics['test_accuracy'] = accuracy_of(params, x_test, test_labels)
        params.metrics['rng_seed'] = attempt_config.rng_seed
        params.metrics['attempts'] = attempt + 1
        if best is None or params.metrics['test_accuracy'] > best.metrics['test_accuracy']:
            best = params
        if params.metrics['test_accuracy'] < min_accuracy:
            logger.warning("baseline attempt %d reached only %.4f test accuracy, restarting", attempt + 1,
                           params.metrics['test_accuracy'])
            continue
        objections = screen(params) if screen else []
        params.metrics['screen_failures'] = list(objections)
        if not objections:
            logger.info("baseline reached test accuracy %.4f (attempt %d)", params.metrics['test_accuracy'],
                        attempt + 1)
            return params
        logger.warning("baseline attempt %d rejected: %s", attempt + 1, "; ".join(objections))
        fallback = fallback or params
    if fallback is not None:
        logger.warning("no baseline attempt passed screening; keeping seed %d", fallback.metrics['rng_seed'])
        return fallback
    raise TrainingError(f"baseline stayed below {min_accuracy:.4f} test accuracy after {restarts + 1} attempts "
                        f"(best {best.metrics['test_accuracy']:.4f})")


def train_corrector(spec, voltages, labels, config, validation=None):
    """Corrective network from rectified circuit output voltages to true digits."""
    if spec.input_width != BASELINE_WIDTHS[-1] or spec.output_width != BASELINE_WIDTHS[-1]:
        raise ConfigError(f"corrector {spec.name} must map {BASELINE_WIDTHS[-1]} voltages to "
                          f"{BASELINE_WIDTHS[-1]} classes")
    return train(spec, voltages, labels, config, validation=validation)


def export_crossbar_weights(params):
    """Per-layer (n_in + 1) x n_out matrices with the bias vector as the last row."""
    if params.input_scaling != 'none':
        raise ConfigError(f"{params.spec.name} rescales its inputs and cannot be mapped onto a crossbar")
    return [np.vstack([w, b[np.newaxis, :]]) for w, b in zip(params.weights, params.biases)]


def params_to_dict(params):
    return {
        'version': WEIGHTS_FILE_VERSION,
        'spec': params.spec.to_dict(),
        'weights': [w.tolist() for w in params.weights],
        'biases': [b.tolist() for b in params.biases],
        'metrics': params.metrics,
        'input_scaling': params.input_scaling,
        'input_shift': None if params.input_shift is None else params.input_shift.tolist(),
        'input_scale': None if params.input_scale is None else params.input_scale.tolist(),
    }


def _optional_array(values):
    return None if values is None else np.asarray(values, dtype=float)


def params_from_dict(data):
    if data.get('version') != WEIGHTS_FILE_VERSION:
        raise DataError(f"unsupported weight file version {data.get('version')}")
    return MLPParams(
        spec=MLPSpec.from_dict(data['spec']),
        weights=[np.asarray(w, dtype=float) for w in data['weights']],
        biases=[np.asarray(b, dtype=float) for b in data['biases']],
        metrics=dict(data.get('metrics') or {}),
        input_scaling=data.get('input_scaling', 'none'),
        input_shift=_optional_array(data.get('input_shift')),
        input_scale=_optional_array(data.get('input_scale')),
    )


def save_params(params, path):
    with open(path, 'w') as f:
        json.dump(params_to_dict(params), f, sort_keys=True)


def load_params(path):
    try:
        with open(path) as f:
            return params_from_dict(json.load(f))
    except FileNotFoundError:
        raise DataError(f"weight file not found: {path}")
