"""Static ReRAM device curve, differential weight mapping and the analog forward path.

Every array row j drives a read voltage onto the positive and negative physical
columns of each logical column i. A logical weight is stored as
``g_plus[j, i] - g_minus[j, i]`` and recovered by the column's load resistor, so a
layer's output voltage is ``R_load * (I_plus - I_minus)`` followed by the rectifier.
"""
import json
import logging
import os
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from app.errors import DataError, DegenerateInputError, DomainError, ShapeError

logger = logging.getLogger(__name__)

GAP_MIN = 0.2  # nm
GAP_MAX = 1.7  # nm
G_ON = 1.8e-3  # S, gap stuck at GAP_MIN
G_OFF = 4.4e-6  # S, gap stuck at GAP_MAX

# G(g) = A * exp(-g / lambda) through both anchors
DEVICE_DECAY_LENGTH = (GAP_MAX - GAP_MIN) / np.log(G_ON / G_OFF)
DEVICE_PREFACTOR = G_ON * np.exp(GAP_MIN / DEVICE_DECAY_LENGTH)

BASELINE_WIDTHS = (64, 50, 20, 8, 10)
# (inputs + bias row, logical columns) per array
LAYER_DIMS = tuple((n_in + 1, n_out) for n_in, n_out in zip(BASELINE_WIDTHS[:-1], BASELINE_WIDTHS[1:]))

PIXEL_LEVELS = 16
READ_VOLTAGE = 1.0
SNAPSHOT_VERSION = 1


class ReRAMPair(NamedTuple):
    g_plus: float
    g_minus: float


@dataclass(frozen=True)
class CrossbarArray:
    """One layer: an n_rows x n_cols grid of differential conductance pairs.

    The last row is the bias row, driven at the read voltage.
    """
    g_plus: np.ndarray
    g_minus: np.ndarray
    layer_index: int
    row_scale: float
    load_resistance: float

    def __post_init__(self):
        if self.g_plus.shape != self.g_minus.shape:
            raise ShapeError(f"conductance grids differ: {self.g_plus.shape} vs {self.g_minus.shape}")

    @property
    def n_rows(self):
        return self.g_plus.shape[0]

    @property
    def n_cols(self):
        return self.g_plus.shape[1]

    @property
    def dims(self):
        return self.g_plus.shape

    def pair(self, row, col):
        return ReRAMPair(float(self.g_plus[row, col]), float(self.g_minus[row, col]))

    @property
    def differential(self):
        return self.g_plus - self.g_minus

    @property
    def weights(self):
        """Logical weights seen through the load resistor."""
        return self.load_resistance * self.differential

    def with_conductances(self, g_plus, g_minus):
        return replace(self, g_plus=g_plus, g_minus=g_minus)


def gap_to_conductance(gap):
    """Conductance in siemens for a filament gap in nanometers (scalar or array)."""
    g = np.asarray(gap, dtype=float)
    if np.any(~np.isfinite(g)) or np.any(g < GAP_MIN) or np.any(g > GAP_MAX):
        raise DomainError(f"gap must lie in [{GAP_MIN}, {GAP_MAX}] nm, got {gap}")
    conductance = DEVICE_PREFACTOR * np.exp(-g / DEVICE_DECAY_LENGTH)
    # pin the anchors to their nominal values
    conductance = np.where(g == GAP_MIN, G_ON, conductance)
    conductance = np.where(g == GAP_MAX, G_OFF, conductance)
    if conductance.ndim == 0:
        return float(conductance)
    return conductance


def map_weights_to_array(weights, layer_index):
    """Map an (n_in + 1) x n_out weight matrix (bias as last row) onto one crossbar.

    The smaller member of each pair stays at G_OFF and the larger one carries
    ``alpha * |w|`` on top, with ``alpha = (G_ON - G_OFF) / max|W|`` and
    ``R_load = 1 / alpha``.
    """
    if layer_index not in range(len(LAYER_DIMS)):
        raise DomainError(f"layer index must be 0..{len(LAYER_DIMS) - 1}, got {layer_index}")
    w = np.asarray(weights, dtype=float)
    if w.shape != LAYER_DIMS[layer_index]:
        raise ShapeError(f"layer {layer_index} expects {LAYER_DIMS[layer_index]} weights, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DomainError(f"layer {layer_index} weights contain non-finite values")
    w_max = np.max(np.abs(w))
    if w_max == 0:
        raise DegenerateInputError(f"layer {layer_index} weights are all zero; scale is undefined")

    alpha = (G_ON - G_OFF) / w_max
    g_plus = G_OFF + alpha * np.maximum(w, 0.0)
    g_minus = G_OFF + alpha * np.maximum(-w, 0.0)
    return CrossbarArray(
        g_plus=g_plus,
        g_minus=g_minus,
        layer_index=layer_index,
        row_scale=float(alpha),
        load_resistance=float(1.0 / alpha),
    )


def build_circuit(layer_weights):
    """Map the four baseline weight matrices onto four arrays."""
    if len(layer_weights) != len(LAYER_DIMS):
        raise ShapeError(f"expected {len(LAYER_DIMS)} weight matrices, got {len(layer_weights)}")
    arrays = [map_weights_to_array(w, index) for index, w in enumerate(layer_weights)]
    logger.debug("mapped circuit: %s", [(a.dims, round(a.load_resistance, 3)) for a in arrays])
    return arrays


def _check_input(array, v_in):
    v = np.asarray(v_in, dtype=float)
    if v.shape[-1] != array.n_rows:
        raise ShapeError(f"array {array.layer_index} has {array.n_rows} rows, got {v.shape[-1]} input voltages")
    return v


def column_currents(array, v_in):
    """Branch currents (I_plus, I_minus) of every logical column."""
    v = _check_input(array, v_in)
    if np.any(v < 0):
        raise DomainError("input voltages must be non-negative")
    return v @ array.g_plus, v @ array.g_minus


def column_voltage(i_plus, i_minus, load_resistance, rectify=True):
    if load_resistance <= 0:
        raise DomainError(f"load resistance must be positive, got {load_resistance}")
    v = load_resistance * (np.asarray(i_plus, dtype=float) - np.asarray(i_minus, dtype=float))
    if rectify:
        v = np.maximum(v, 0.0)
    if v.ndim == 0:
        return float(v)
    return v


def cell_contributions(array, v_in):
    """Per-cell share of each column's differential voltage, before rectification."""
    v = _check_input(array, v_in)
    if v.ndim != 1:
        raise ShapeError("cell contributions take a single input vector")
    return v[:, None] * array.differential * array.load_resistance


def layer_output(array, v_in):
    """Rectified output voltages of one array for one vector or a batch of row vectors."""
    v = _check_input(array, v_in)
    # R_load * sum_j v_j (g+ - g-) equals R_load * (I+ - I-); the differential form keeps
    # masked cells at an exact zero whatever the stuck conductance.
    return np.maximum(array.load_resistance * (v @ array.differential), 0.0)


def encode_pixels(pixels, read_voltage=READ_VOLTAGE):
    """Pixel intensities 0..16 to row voltages, with the bias row appended."""
    p = np.asarray(pixels, dtype=float)
    if p.ndim not in (1, 2) or p.shape[-1] != BASELINE_WIDTHS[0]:
        raise ShapeError(f"expected {BASELINE_WIDTHS[0]} pixels per image, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > PIXEL_LEVELS):
        raise DomainError(f"pixel intensities must lie in 0..{PIXEL_LEVELS}")
    v = p / PIXEL_LEVELS * read_voltage
    bias = np.full(v.shape[:-1] + (1,), read_voltage)
    return np.concatenate([v, bias], axis=-1)


def forward_inference_batch(arrays, pixels, read_voltage=READ_VOLTAGE):
    """Run a batch of images through the chained arrays.

    Returns the rectified output voltages (n_images x 10) and the argmax predictions.
    """
    v = encode_pixels(np.atleast_2d(pixels), read_voltage)
    for index, array in enumerate(arrays):
        v = layer_output(array, v)
        if index < len(arrays) - 1:
            v = np.concatenate([v, np.full((v.shape[0], 1), read_voltage)], axis=1)
    return v, np.argmax(v, axis=1)


def forward_inference(arrays, pixel_vector, read_voltage=READ_VOLTAGE):
    p = np.asarray(pixel_vector, dtype=float)
    if p.ndim != 1:
        raise ShapeError(f"expected a single image of {BASELINE_WIDTHS[0]} pixels, got shape {p.shape}")
    voltages, predictions = forward_inference_batch(arrays, p, read_voltage)
    return voltages[0], int(predictions[0])


def software_outputs(layer_weights, pixels, masks=None):
    """Rectified outputs of the software network on the same encoding as the circuit.

    ``masks`` optionally zeroes weights per layer (None entries leave a layer intact).
    """
    x = encode_pixels(np.atleast_2d(pixels))
    for index, w in enumerate(layer_weights):
        w = np.asarray(w, dtype=float)
        if masks is not None and masks[index] is not None:
            w = np.where(masks[index], 0.0, w)
        x = np.maximum(x @ w, 0.0)
        if index < len(layer_weights) - 1:
            x = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    return x


def array_to_dict(array):
    return {
        'version': SNAPSHOT_VERSION,
        'layer_index': array.layer_index,
        'n_rows': array.n_rows,
        'n_cols': array.n_cols,
        'row_scale': array.row_scale,
        'load_resistance': array.load_resistance,
        'g_plus': array.g_plus.ravel().tolist(),
        'g_minus': array.g_minus.ravel().tolist(),
    }


def array_from_dict(data):
    if data.get('version') != SNAPSHOT_VERSION:
        raise DataError(f"unsupported array snapshot version {data.get('version')}")
    shape = (data['n_rows'], data['n_cols'])
    return CrossbarArray(
        g_plus=np.asarray(data['g_plus'], dtype=float).reshape(shape),
        g_minus=np.asarray(data['g_minus'], dtype=float).reshape(shape),
        layer_index=int(data['layer_index']),
        row_scale=float(data['row_scale']),
        load_resistance=float(data['load_resistance']),
    )


def save_array(array, path):
    with open(path, 'w') as f:
        json.dump(array_to_dict(array), f)


def load_array(path):
    try:
        with open(path) as f:
            return array_from_dict(json.load(f))
    except FileNotFoundError:
        raise DataError(f"array snapshot not found: {path}")


def snapshot_filename(layer_index):
    return f"layer{layer_index}.json"


def save_circuit(arrays, directory):
    """One snapshot file per array; returns the written paths in layer order."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for array in arrays:
        path = os.path.join(directory, snapshot_filename(array.layer_index))
        save_array(array, path)
        paths.append(path)
    return paths
