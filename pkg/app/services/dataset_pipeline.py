"""Digits ingestion, base split and the faulty-inference corpus.

A corpus configuration is one (defect kind, size) pair aggregated over the four
layers, so every configuration holds 4 x 1797 samples.
"""
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from app.errors import DataError, IngestionError
from app.services import analog_core, defect_engine

logger = logging.getLogger(__name__)

N_IMAGES = 1797
N_PIXELS = 64
N_CLASSES = 10
BASE_TEST_SIZE = 180
CV_PER_LAYER = 250
TRAIN_FRACTION = 0.8
N_LAYERS = len(analog_core.LAYER_DIMS)
CONFIG_SIZE = N_LAYERS * N_IMAGES

VOLTAGE_COLUMNS = [f"v{i}" for i in range(N_CLASSES)]
CORPUS_COLUMNS = ['image_id', 'layer', *VOLTAGE_COLUMNS, 'true_label', 'faulty_prediction']
MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True)
class DigitSample:
    pixels: tuple
    label: int


@dataclass(frozen=True)
class FaultySample:
    voltages: tuple
    true_label: int
    defect: defect_engine.DefectSpec
    image_id: int

    @property
    def faulty_prediction(self):
        return int(np.argmax(self.voltages))


@dataclass
class FaultyBatch:
    """Column-oriented block of faulty samples for one (kind, size)."""
    kind: str
    size_index: object
    image_ids: np.ndarray
    layers: np.ndarray
    voltages: np.ndarray
    labels: np.ndarray
    faulty_predictions: np.ndarray
    stuck_mode: str = 'stuck_off'

    def __len__(self):
        return len(self.labels)

    def take(self, index):
        return FaultyBatch(self.kind, self.size_index, self.image_ids[index], self.layers[index],
                           self.voltages[index], self.labels[index], self.faulty_predictions[index],
                           self.stuck_mode)

    def samples(self):
        for i in range(len(self)):
            spec = defect_engine.DefectSpec(self.kind, int(self.layers[i]), self.size_index, self.stuck_mode)
            yield FaultySample(tuple(self.voltages[i]), int(self.labels[i]), spec, int(self.image_ids[i]))

    @staticmethod
    def concat(batches):
        first = batches[0]
        return FaultyBatch(
            first.kind, first.size_index,
            np.concatenate([b.image_ids for b in batches]),
            np.concatenate([b.layers for b in batches]),
            np.concatenate([b.voltages for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.faulty_predictions for b in batches]),
            first.stuck_mode,
        )


@dataclass
class CorpusSplit:
    train: FaultyBatch
    test: FaultyBatch
    cross_validation: FaultyBatch


def load_digits(path):
    """Read the 65-column digits CSV (64 pixels then the label)."""
    if not os.path.exists(path):
        raise DataError(f"digits file not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise IngestionError(f"expected {N_IMAGES} images, found 0")
    except pd.errors.ParserError as e:
        raise IngestionError(f"malformed digits file: {e}")
    if frame.shape[1] != N_PIXELS + 1:
        raise IngestionError(f"expected {N_PIXELS + 1} values, got {frame.shape[1]}", 1)

    values = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors='coerce')).to_numpy(dtype=float)
    with np.errstate(invalid='ignore'):
        invalid = ~np.isfinite(values) | (values != np.round(values))
    if invalid.any():
        row, column = np.argwhere(invalid)[0]
        raw = frame.iat[row, column]
        if pd.isna(raw) or raw == '':
            raise IngestionError(f"expected {N_PIXELS + 1} values, column {column + 1} is missing", row + 1)
        raise IngestionError(f"value '{raw}' in column {column + 1} is not a finite integer", row + 1)

    values = values.astype(int)
    pixels, labels = values[:, :N_PIXELS], values[:, N_PIXELS]
    out_of_range = np.flatnonzero(((pixels < 0) | (pixels > analog_core.PIXEL_LEVELS)).any(axis=1))
    if out_of_range.size:
        raise IngestionError(f"pixel intensity outside 0..{analog_core.PIXEL_LEVELS}", out_of_range[0] + 1)
    bad_labels = np.flatnonzero((labels < 0) | (labels >= N_CLASSES))
    if bad_labels.size:
        row = bad_labels[0]
        raise IngestionError(f"label {labels[row]} outside 0..{N_CLASSES - 1}", row + 1)

    samples = [DigitSample(tuple(int(p) for p in row), int(label)) for row, label in zip(pixels, labels)]
    if len(samples) != N_IMAGES:
        raise IngestionError(f"expected {N_IMAGES} images, found {len(samples)}")
    logger.info("loaded %d digit images from %s", len(samples), path)
    return samples


def as_arrays(samples):
    pixels = np.array([s.pixels for s in samples], dtype=float)
    labels = np.array([s.label for s in samples], dtype=int)
    return pixels, labels


def split_base(samples, seed):
    """Seeded shuffle into (1617 train, 180 test)."""
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = len(samples) - BASE_TEST_SIZE
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test


def simulate_configuration(arrays, pixels, labels, kind, size_index, stuck_mode='stuck_off'):
    """Faulty inference of every image with the defect injected into each layer in turn."""
    blocks = []
    image_ids = np.arange(len(labels))
    for layer_index in range(N_LAYERS):
        spec = defect_engine.DefectSpec(kind, layer_index, size_index, stuck_mode)
        try:
            voltages, predictions = analog_core.forward_inference_batch(defect_engine.inject(arrays, spec), pixels)
        except Exception as e:
            raise DataError(f"simulation failed for {spec.key}: {e}") from e
        blocks.append(FaultyBatch(kind, size_index, image_ids.copy(), np.full(len(labels), layer_index),
                                  voltages, labels.copy(), predictions, stuck_mode))
    return FaultyBatch.concat(blocks)


def configuration_keys(kinds=defect_engine.DEFECT_KINDS):
    keys = []
    for kind in kinds:
        sizes = (None,) if kind == 'checkerboard' else defect_engine.SIZE_INDICES
        keys.extend((kind, size) for size in sizes)
    return keys


def generate_corpus(layer_weights, samples, kinds=defect_engine.DEFECT_KINDS, stuck_mode='stuck_off', workers=1):
    """Simulate every (kind, size) configuration over all four layers and all images.

    ``layer_weights`` are the baseline crossbar matrices. The result is keyed by
    (kind, size) in canonical order whatever the worker count.
    """
    arrays = analog_core.build_circuit(layer_weights)
    pixels, labels = as_arrays(samples)
    keys = configuration_keys(kinds)

    def run(key):
        batch = simulate_configuration(arrays, pixels, labels, key[0], key[1], stuck_mode)
        logger.debug("simulated %s: %d samples, faulty accuracy %.4f", key, len(batch),
                     np.mean(batch.faulty_predictions == batch.labels))
        return batch

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run, keys))
    else:
        batches = [run(key) for key in keys]
    corpus = dict(zip(keys, batches))
    logger.info("generated corpus: %d configurations, %d samples", len(corpus), corpus_size(corpus))
    return corpus


def corpus_size(corpus):
    return sum(len(batch) for batch in corpus.values())


def split_configuration(batch, seed):
    """1000 cross-validation samples (250 per layer), then floor(80%) train and the rest test."""
    if len(batch) != CONFIG_SIZE:
        raise DataError(f"configuration {batch.kind}/{batch.size_index} holds {len(batch)} samples, "
                        f"expected {CONFIG_SIZE}")
    rng = np.random.default_rng(seed)
    cv_index, rest_index = [], []
    for layer_index in range(N_LAYERS):
        layer_rows = rng.permutation(np.flatnonzero(batch.layers == layer_index))
        cv_index.append(layer_rows[:CV_PER_LAYER])
        rest_index.append(layer_rows[CV_PER_LAYER:])
    cv_index = np.sort(np.concatenate(cv_index))
    rest_index = rng.permutation(np.concatenate(rest_index))
    n_train = int(np.floor(TRAIN_FRACTION * len(rest_index)))
    train_index = np.sort(rest_index[:n_train])
    test_index = np.sort(rest_index[n_train:])
    return CorpusSplit(batch.take(train_index), batch.take(test_index), batch.take(cv_index))


def _configuration_seed(seed, key):
    kind, size = key
    offset = defect_engine.DEFECT_KINDS.index(kind) * 10 + (size or 0)
    return seed * 1000 + offset


def split_corpus(corpus, seed):
    return {key: split_configuration(batch, _configuration_seed(seed, key)) for key, batch in corpus.items()}


def split_counts(splits, kind=None):
    """(train, test, cross-validation) totals, optionally for one kind."""
    selected = [s for (k, _), s in splits.items() if kind is None or k == kind]
    return (sum(len(s.train) for s in selected),
            sum(len(s.test) for s in selected),
            sum(len(s.cross_validation) for s in selected))


def merge_splits(splits, kind, part):
    """Concatenate one part (train/test/cross_validation) over every size of a kind."""
    batches = [getattr(s, part) for (k, _), s in splits.items() if k == kind]
    if not batches:
        raise DataError(f"corpus has no configuration for defect kind '{kind}'")
    return FaultyBatch.concat(batches)


def configuration_filename(key):
    kind, size = key
    return f"{kind}.csv" if size is None else f"{kind}_s{size}.csv"


def batch_to_frame(batch):
    frame = pd.DataFrame(batch.voltages, columns=VOLTAGE_COLUMNS)
    frame.insert(0, 'layer', batch.layers)
    frame.insert(0, 'image_id', batch.image_ids)
    frame['true_label'] = batch.labels
    frame['faulty_prediction'] = batch.faulty_predictions
    return frame[CORPUS_COLUMNS]


def frame_to_batch(frame, kind, size_index, stuck_mode):
    missing = set(CORPUS_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"corpus file is missing columns {sorted(missing)}")
    return FaultyBatch(
        kind, size_index,
        frame['image_id'].to_numpy(dtype=int),
        frame['layer'].to_numpy(dtype=int),
        frame[VOLTAGE_COLUMNS].to_numpy(dtype=float),
        frame['true_label'].to_numpy(dtype=int),
        frame['faulty_prediction'].to_numpy(dtype=int),
        stuck_mode,
    )


def file_digest(path):
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_corpus(corpus, directory, seeds, baseline_path=None, stuck_mode='stuck_off', split_seed=None):
    """One CSV per configuration plus a manifest with counts and seeds."""
    os.makedirs(directory, exist_ok=True)
    configurations = []
    for key, batch in corpus.items():
        filename = configuration_filename(key)
        batch_to_frame(batch).to_csv(os.path.join(directory, filename), index=False, float_format='%.17g')
        configurations.append({'kind': key[0], 'size_index': key[1], 'file': filename, 'samples': len(batch)})

    manifest = {
        'version': 1,
        'stuck_mode': stuck_mode,
        'seeds': seeds,
        'baseline_sha256': file_digest(baseline_path) if baseline_path else None,
        'total_samples': corpus_size(corpus),
        'configurations': configurations,
    }
    if split_seed is not None:
        train, test, cv = split_counts(split_corpus(corpus, split_seed))
        manifest['splits'] = {'seed': split_seed, 'train': train, 'test': test, 'cross_validation': cv}
    with open(os.path.join(directory, MANIFEST_NAME), 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("saved %d configurations to %s", len(configurations), directory)
    return manifest


def load_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no corpus manifest in {directory}; run gen-corpus first")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"corpus manifest {path} is not valid JSON: {e}")
    missing = {'configurations', 'stuck_mode', 'total_samples'} - set(manifest)
    if missing:
        raise DataError(f"corpus manifest {path} is missing {sorted(missing)}")
    return manifest


def load_corpus(directory, kinds=None):
    manifest = load_manifest(directory)
    corpus = {}
    for entry in manifest['configurations']:
        if kinds is not None and entry['kind'] not in kinds:
            continue
        path = os.path.join(directory, entry['file'])
        if not os.path.exists(path):
            raise DataError(f"corpus file missing: {path}")
        batch = frame_to_batch(pd.read_csv(path), entry['kind'], entry['size_index'], manifest['stuck_mode'])
        if len(batch) != entry['samples']:
            raise DataError(f"{path} holds {len(batch)} samples, manifest says {entry['samples']}")
        corpus[(entry['kind'], entry['size_index'])] = batch
    return corpus
