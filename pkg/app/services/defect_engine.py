"""Spatial stuck-at defect patterns and their injection into crossbar arrays.

Masks are boolean grids over logical cells (True = defective). Radii are fractions
of the array extent, normalised per axis so that r = 0.5 touches all four edges.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from app.errors import DomainError, ShapeError
from app.services.analog_core import G_OFF, G_ON, LAYER_DIMS

logger = logging.getLogger(__name__)

DEFECT_KINDS = ('circle', 'ring', 'circle_complement', 'row', 'column', 'checkerboard')
SIZED_KINDS = DEFECT_KINDS[:-1]
SIZE_INDICES = (1, 2, 3, 4)
STUCK_MODES = ('stuck_on', 'stuck_off')
STUCK_CONDUCTANCE = {'stuck_on': G_ON, 'stuck_off': G_OFF}

CIRCLE_RADII = (0.1, 0.2, 0.3, 0.4)
RING_INNER_RADII = (0.4, 0.36, 0.32, 0.28)
RING_OUTER_RADIUS = 0.5
COMPLEMENT_RADII = (0.4, 0.3, 0.2, 0.1)
STRIP_COVERAGE_STEP = 0.1


@dataclass(frozen=True)
class DefectSpec:
    kind: str
    layer_index: int
    size_index: int = None
    stuck_mode: str = 'stuck_off'

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise DomainError(f"unknown defect kind '{self.kind}'")
        if self.layer_index not in range(len(LAYER_DIMS)):
            raise DomainError(f"layer index must be 0..{len(LAYER_DIMS) - 1}, got {self.layer_index}")
        if self.stuck_mode not in STUCK_MODES:
            raise DomainError(f"unknown stuck mode '{self.stuck_mode}'")
        if self.kind == 'checkerboard':
            if self.size_index is not None:
                raise DomainError("checkerboard defects have a fixed structure and take no size")
        elif self.size_index not in SIZE_INDICES:
            raise DomainError(f"{self.kind} defects need a size index in 1..4, got {self.size_index}")

    @property
    def key(self):
        return (self.kind, self.size_index, self.layer_index)

    def to_dict(self):
        return {
            'kind': self.kind,
            'size_index': self.size_index,
            'layer_index': self.layer_index,
            'stuck_mode': self.stuck_mode,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data['kind'],
            layer_index=int(data['layer_index']),
            size_index=data.get('size_index'),
            stuck_mode=data.get('stuck_mode', 'stuck_off'),
        )


def _normalized_radius_sq(dims):
    n_rows, n_cols = dims
    if n_rows <= 0 or n_cols <= 0:
        raise DomainError(f"array dimensions must be positive, got {dims}")
    y = (np.arange(n_rows) - (n_rows - 1) / 2) / n_rows
    x = (np.arange(n_cols) - (n_cols - 1) / 2) / n_cols
    return x[np.newaxis, :] ** 2 + y[:, np.newaxis] ** 2


def mask_circle(dims, r):
    d2 = _normalized_radius_sq(dims)
    if r <= 0:
        return np.zeros(d2.shape, dtype=bool)
    return d2 <= r ** 2


def mask_ring(dims, r_inner):
    d2 = _normalized_radius_sq(dims)
    return (d2 > r_inner ** 2) & (d2 <= RING_OUTER_RADIUS ** 2)


def mask_circle_complement(dims, r):
    """Everything outside the functional central circle of radius r."""
    return ~mask_circle(dims, r)


def mask_row(dims, k):
    n_rows, n_cols = dims
    if not 1 <= k <= n_rows:
        raise DomainError(f"row count must lie in 1..{n_rows}, got {k}")
    start = (n_rows - k) // 2
    mask = np.zeros(dims, dtype=bool)
    mask[start:start + k, :] = True
    return mask


def mask_column(dims, k):
    n_rows, n_cols = dims
    if not 1 <= k <= n_cols:
        raise DomainError(f"column count must lie in 1..{n_cols}, got {k}")
    return mask_row((n_cols, n_rows), k).T


def mask_checkerboard(dims):
    n_rows, n_cols = dims
    j, i = np.indices((n_rows, n_cols))
    return (j + i) % 2 == 0


def _round_half_up(value):
    return int(math.floor(value + 0.5))


def severity_to_param(kind, size_index, dims):
    """Concrete radius or strip width for a sized defect kind."""
    if kind == 'checkerboard':
        raise DomainError("checkerboard defects are not parametrised by size")
    if kind not in SIZED_KINDS:
        raise DomainError(f"unknown defect kind '{kind}'")
    if size_index not in SIZE_INDICES:
        raise DomainError(f"size index must be 1..4, got {size_index}")
    s = size_index - 1
    if kind == 'circle':
        return CIRCLE_RADII[s]
    if kind == 'ring':
        return RING_INNER_RADII[s]
    if kind == 'circle_complement':
        return COMPLEMENT_RADII[s]
    n_rows, n_cols = dims
    extent = n_rows if kind == 'row' else n_cols
    return max(1, _round_half_up(STRIP_COVERAGE_STEP * size_index * extent))


_MASK_BUILDERS = {
    'circle': mask_circle,
    'ring': mask_ring,
    'circle_complement': mask_circle_complement,
    'row': mask_row,
    'column': mask_column,
}


def build_mask(spec, dims=None):
    """Realise a DefectSpec on its layer's grid (or on explicit dims)."""
    dims = dims or LAYER_DIMS[spec.layer_index]
    if spec.kind == 'checkerboard':
        return mask_checkerboard(dims)
    param = severity_to_param(spec.kind, spec.size_index, dims)
    return _MASK_BUILDERS[spec.kind](dims, param)


def coverage(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0.0
    return float(np.count_nonzero(mask)) / mask.size


def severity_pairs(mask):
    """Number of defective ReRAM pairs under a mask."""
    return int(np.count_nonzero(mask))


def apply_defects(array, mask, stuck_mode='stuck_off'):
    """Copy of ``array`` with every masked pair frozen at the stuck conductance."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != array.dims:
        raise ShapeError(f"mask {mask.shape} does not match array {array.dims}")
    if stuck_mode not in STUCK_CONDUCTANCE:
        raise DomainError(f"unknown stuck mode '{stuck_mode}'")
    stuck = STUCK_CONDUCTANCE[stuck_mode]
    return array.with_conductances(
        g_plus=np.where(mask, stuck, array.g_plus),
        g_minus=np.where(mask, stuck, array.g_minus),
    )


def inject(arrays, spec):
    """Faulty circuit for one DefectSpec; the other layers are shared, not copied."""
    faulty = list(arrays)
    target = arrays[spec.layer_index]
    faulty[spec.layer_index] = apply_defects(target, build_mask(spec, target.dims), spec.stuck_mode)
    return faulty


def all_defect_specs(stuck_mode='stuck_off', kinds=DEFECT_KINDS):
    """Every (kind, size, layer) configuration in canonical order."""
    specs = []
    for kind in kinds:
        sizes = (None,) if kind == 'checkerboard' else SIZE_INDICES
        for size_index in sizes:
            for layer_index in range(len(LAYER_DIMS)):
                specs.append(DefectSpec(kind, layer_index, size_index, stuck_mode))
    return specs


def export_mask(mask, path, fmt='csv'):
    """Write a mask as a 0/1 CSV grid or a plain-text PGM image (defects white)."""
    grid = np.asarray(mask, dtype=np.uint8)
    if fmt == 'csv':
        np.savetxt(path, grid, fmt='%d', delimiter=',')
    elif fmt == 'pgm':
        n_rows, n_cols = grid.shape
        header = f"P2\n{n_cols} {n_rows}\n255"
        np.savetxt(path, grid * 255, fmt='%d', delimiter=' ', header=header, comments='')
    else:
        raise DomainError(f"unsupported mask export format '{fmt}'")
    logger.info("wrote %s mask (%dx%d, coverage %.3f) to %s", fmt, *grid.shape, coverage(mask), path)
